// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "scd/conditioning.hpp"
#include "scd/model.hpp"
#include "scd/optimizer.hpp"
#include "scd/rng.hpp"
#include "scd/schedule.hpp"
#include "scd/synthetic.hpp"

namespace scd {

struct DistillConfig {
    int K = 2;
    double delta = kDefaultMotionDelta;
    double lambda1 = kDefaultLambda1;
    double lambda2 = 0.1;
    double ema_rate = 0.95;
    double lr = 2e-4;
    int batch_size = 2;
    int total_steps = 2000;
    double w_min = 1.0;
    double w_max = 4.0;
    double uncond_drop_prob = 0.1;
    uint64_t seed = 0;
    DistanceKind distance = DistanceKind::squared;
    int threads = 0;  // 0 = one worker per batch element; never changes results
    int eval_every = 500;        // 0 disables periodic evaluation
    int checkpoint_every = 500;  // 0 disables periodic checkpointing
};

struct LossBreakdown {
    double cd_loss = 0.0;
    double aux_loss = 0.0;
    double total = 0.0;
    int segment = 0;
    int t_m = 0;
    int t_n = 0;
    double w = 1.0;
};

// One training example: clean latents, conditioning, latent-space motion mask.
struct TrainItem {
    LatentVideo x0;
    ConditionBundle cond;
    BoolTensor latent_mask;
};

class Dataset {
  public:
    virtual ~Dataset() = default;
    virtual int size() const = 0;
    virtual const TrainItem& item(int index) const = 0;
};

class InMemoryDataset : public Dataset {
  public:
    std::vector<TrainItem> items;
    int size() const override { return static_cast<int>(items.size()); }
    const TrainItem& item(int index) const override {
        return items.at(static_cast<size_t>(index));
    }
};

// Latents, pose latents, face feature and motion mask for a generated clip.
TrainItem make_train_item(const VideoClip& clip, const ToyAutoencoder& ae, double delta,
                          int face_crop, bool use_face = true);

InMemoryDataset build_clip_dataset(int n_clips, uint64_t seed, int F, int H, int W,
                                   const ToyAutoencoder& ae, double delta, int face_crop,
                                   bool use_face = true);

struct TrainState {
    ModelParams student;
    ModelParams ema;      // theta_minus; frozen w.r.t. gradients
    ModelParams teacher;  // frozen
    bool has_ema = false;
    bool has_teacher = false;
    AdamState opt;
    int64_t step = 0;
    Rng rng{0};
};

// Denoising pretraining of the model in state.student (this phase has no EMA
// or teacher). Conditioning drops to the unconditional branch with
// probability drop_prob so the solver can apply CFG later.
double teacher_train_step(TrainState& state, const std::vector<const TrainItem*>& batch,
                          const NoiseSchedule& sched, double lr, double drop_prob);

TrainState init_teacher_training(const DenoiserConfig& cfg, uint64_t seed);

ModelParams run_teacher_training(const DenoiserConfig& cfg, const Dataset& data,
                                 const NoiseSchedule& sched, int steps, double lr, int batch_size,
                                 double drop_prob, uint64_t seed,
                                 const std::function<void(int64_t, double)>& on_step = {});

// One segmented consistency-distillation step over a batch.
LossBreakdown distill_step(TrainState& state, const std::vector<const TrainItem*>& batch,
                           const TrajectorySegmentation& seg, const DistillConfig& cfg,
                           const NoiseSchedule& sched);

TrainState init_distillation(const ModelParams& teacher, const DistillConfig& cfg);

// Drives distill_step until cfg.total_steps, continuing from state.step
// (resume-safe: everything needed is in TrainState).
std::vector<LossBreakdown> distill_until(TrainState& state, const DistillConfig& cfg,
                                         const Dataset& data, const NoiseSchedule& sched,
                                         const std::function<void(int64_t, const LossBreakdown&)>&
                                             on_step = {});

struct DistillRunResult {
    TrainState state;
    std::vector<LossBreakdown> log;
};

DistillRunResult run_distillation(const DistillConfig& cfg, const ModelParams& teacher,
                                  const Dataset& data, const NoiseSchedule& sched,
                                  const std::function<void(int64_t, const LossBreakdown&)>&
                                      on_step = {});

}  // namespace scd
