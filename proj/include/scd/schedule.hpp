// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scd/rng.hpp"
#include "scd/tensor.hpp"

namespace scd {

enum class ScheduleKind { linear_beta, cosine };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

// Cumulative signal levels of the forward diffusion, indexed 0..T with
// alpha_bar[0] == 1 and alpha_bar strictly decreasing into (0, 1).
struct NoiseSchedule {
    int num_timesteps = 0;  // T
    std::vector<double> alpha_bar;  // length T+1
    ScheduleKind kind = ScheduleKind::linear_beta;

    double ab(int t) const { return alpha_bar[static_cast<size_t>(t)]; }
};

inline constexpr int kDefaultTimesteps = 1000;
inline constexpr double kLinearBetaStart = 1e-4;
inline constexpr double kLinearBetaEnd = 2e-2;

NoiseSchedule build_schedule(ScheduleKind kind, int T = kDefaultTimesteps);

// x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Generalized re-noising: given a sample at level `from`, produce one at
// level `to` > `from` using the conditional forward kernel. `from` == 0
// reduces exactly to forward_diffuse.
Tensor forward_diffuse_between(const Tensor& x_from, int from, int to, const Tensor& eps,
                               const NoiseSchedule& sched);

// Deterministic DDIM update given the clean estimate at timestep t.
Tensor ddim_step(const Tensor& x_t, const Tensor& x0_hat, int t, int t_prev,
                 const NoiseSchedule& sched);

// Recover the clean-data estimate from an epsilon prediction at timestep t.
Tensor x0_from_eps(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

struct GuidanceScale {
    double w = 1.0;
    double w_min = 1.0;
    double w_max = 1.0;
};

// pred_uncond + w * (pred_cond - pred_uncond). Counted for the
// inference-time no-guidance contract.
Tensor cfg_combine(const Tensor& pred_cond, const Tensor& pred_uncond, const GuidanceScale& w);

uint64_t cfg_combine_call_count();
void reset_cfg_combine_call_count();

// Equally spaced boundaries s[0]=0 < ... < s[K]=T; segment o covers
// [s[o], s[o+1]) and T belongs to segment K-1.
struct TrajectorySegmentation {
    int K = 1;
    std::vector<int> boundaries;  // length K+1

    int lower(int o) const { return boundaries[static_cast<size_t>(o)]; }
    int upper(int o) const { return boundaries[static_cast<size_t>(o) + 1]; }
    int total_T() const { return boundaries.back(); }
};

TrajectorySegmentation make_segments(int K, int T);

int segment_of(int t, const TrajectorySegmentation& seg);

// Two-stage draw: t_m uniform over {s[o]+1, ..., s[o+1]}, then t_n uniform
// over {s[o], ..., t_m - 1}.
std::pair<int, int> sample_timestep_pair(const TrajectorySegmentation& seg, int o, Rng& rng);

}  // namespace scd
