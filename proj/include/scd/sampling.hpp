// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "scd/model.hpp"
#include "scd/schedule.hpp"
#include "scd/synthetic.hpp"

namespace scd {

// Few-step inference itinerary: visit timesteps (descending, starting at T)
// each anchored to the boundary the consistency function maps to.
struct SamplePlan {
    int steps = 0;  // N
    std::vector<int> visit_t;
    std::vector<int> anchor_s;  // same length as visit_t; last anchor is 0
    uint64_t noise_seed = 0;
};

// Distributes N steps over the K segments as evenly as possible, extras to
// the later (noisier) segments. With N < K coarser boundaries are used and
// intermediate segment stops are skipped.
SamplePlan plan_steps(int N, const TrajectorySegmentation& seg);

// Multistep consistency sampling: consistency jump to the anchor, then
// fresh-noise re-noising up to the next visit. Never applies classifier-free
// guidance.
LatentVideo multistep_sample(const ModelParams& model, const ConditionBundle& cond,
                             const SamplePlan& plan, const NoiseSchedule& sched,
                             const TrajectorySegmentation& seg, std::vector<int> latent_shape);

// Same loop with an injected consistency map f(x, t, s); the model-based
// entry point delegates here, so oracle checks exercise the shipped loop.
using ConsistencyFn = std::function<Tensor(const Tensor&, int, int)>;
LatentVideo multistep_sample_with(const ConsistencyFn& f, const SamplePlan& plan,
                                  const NoiseSchedule& sched, const TrajectorySegmentation& seg,
                                  std::vector<int> latent_shape);

// N-step DDIM baseline from the teacher with CFG at every step.
LatentVideo teacher_ddim_sample(const ModelParams& teacher, const ConditionBundle& cond, int N,
                                const GuidanceScale& w, const NoiseSchedule& sched,
                                uint64_t noise_seed, std::vector<int> latent_shape);

}  // namespace scd
