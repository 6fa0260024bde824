// SPDX-License-Identifier: Apache-2.0
#include "scd/schedule.hpp"

#include <atomic>
#include <cmath>

#include "scd/errors.hpp"

namespace scd {

namespace {
std::atomic<uint64_t> g_cfg_calls{0};
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::linear_beta ? "linear_beta" : "cosine";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear_beta") return ScheduleKind::linear_beta;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind: " + s);
}

NoiseSchedule build_schedule(ScheduleKind kind, int T) {
    if (T < 2) throw ConfigError("build_schedule: T must be >= 2, got " + std::to_string(T));
    NoiseSchedule s;
    s.num_timesteps = T;
    s.kind = kind;
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);

    if (kind == ScheduleKind::linear_beta) {
        for (int t = 1; t <= T; ++t) {
            const double beta =
                kLinearBetaStart + (kLinearBetaEnd - kLinearBetaStart) * (t - 1) / (T - 1);
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
        }
    } else {
        // squared-cosine profile, clamped so alpha_bar stays strictly decreasing
        const double off = 0.008;
        auto f = [&](double t) {
            const double a = std::cos((t / T + off) / (1.0 + off) * M_PI / 2.0);
            return a * a;
        };
        const double f0 = f(0.0);
        for (int t = 1; t <= T; ++t) {
            double ab = f(static_cast<double>(t)) / f0;
            ab = std::min(ab, s.alpha_bar[t - 1] * (1.0 - 1e-6));
            s.alpha_bar[t] = std::max(ab, 1e-9);
        }
        for (int t = 1; t <= T; ++t)
            if (s.alpha_bar[t] >= s.alpha_bar[t - 1])
                s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - 1e-6);
    }
    return s;
}

namespace {
void check_timestep(int t, const NoiseSchedule& sched, const char* where) {
    if (t < 0 || t > sched.num_timesteps)
        throw ArgumentError(std::string(where) + ": timestep " + std::to_string(t) +
                            " outside [0, " + std::to_string(sched.num_timesteps) + "]");
}
}  // namespace

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_timestep(t, sched, "forward_diffuse");
    require_same_shape(x0, eps, "forward_diffuse");
    const double a = std::sqrt(sched.ab(t));
    const double b = std::sqrt(1.0 - sched.ab(t));
    Tensor out(x0.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

Tensor forward_diffuse_between(const Tensor& x_from, int from, int to, const Tensor& eps,
                               const NoiseSchedule& sched) {
    check_timestep(from, sched, "forward_diffuse_between");
    check_timestep(to, sched, "forward_diffuse_between");
    if (to <= from) throw ArgumentError("forward_diffuse_between: need to > from");
    require_same_shape(x_from, eps, "forward_diffuse_between");
    const double ratio = sched.ab(to) / sched.ab(from);
    const double a = std::sqrt(ratio);
    const double b = std::sqrt(1.0 - ratio);
    Tensor out(x_from.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x_from[i] + b * eps[i];
    return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& x0_hat, int t, int t_prev,
                 const NoiseSchedule& sched) {
    check_timestep(t, sched, "ddim_step");
    if (t == 0) throw ArgumentError("ddim_step: t = 0 has no noise to remove");
    if (t_prev < 0 || t_prev >= t)
        throw ArgumentError("ddim_step: need 0 <= t_prev < t, got t_prev=" +
                            std::to_string(t_prev) + " t=" + std::to_string(t));
    require_same_shape(x_t, x0_hat, "ddim_step");

    const double ab_t = sched.ab(t);
    const double ab_p = sched.ab(t_prev);
    const double sq_t = std::sqrt(ab_t);
    const double sq_p = std::sqrt(ab_p);
    const double sig_t = std::sqrt(1.0 - ab_t);
    const double sig_p = std::sqrt(1.0 - ab_p);

    Tensor out(x_t.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double eps_hat = (x_t[i] - sq_t * x0_hat[i]) / sig_t;
        out[i] = sq_p * x0_hat[i] + sig_p * eps_hat;
    }
    return out;
}

Tensor x0_from_eps(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    check_timestep(t, sched, "x0_from_eps");
    if (t == 0) throw ArgumentError("x0_from_eps: t = 0 is already clean");
    require_same_shape(x_t, eps_hat, "x0_from_eps");
    const double sq = std::sqrt(sched.ab(t));
    const double sig = std::sqrt(1.0 - sched.ab(t));
    Tensor out(x_t.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - sig * eps_hat[i]) / sq;
    return out;
}

Tensor cfg_combine(const Tensor& pred_cond, const Tensor& pred_uncond, const GuidanceScale& g) {
    require_same_shape(pred_cond, pred_uncond, "cfg_combine");
    g_cfg_calls.fetch_add(1, std::memory_order_relaxed);
    if (g.w == 1.0) return pred_cond;    // exact identities at the endpoints
    if (g.w == 0.0) return pred_uncond;
    Tensor out(pred_cond.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = pred_uncond[i] + g.w * (pred_cond[i] - pred_uncond[i]);
    return out;
}

uint64_t cfg_combine_call_count() { return g_cfg_calls.load(std::memory_order_relaxed); }
void reset_cfg_combine_call_count() { g_cfg_calls.store(0, std::memory_order_relaxed); }

TrajectorySegmentation make_segments(int K, int T) {
    if (K < 1) throw ConfigError("make_segments: K must be >= 1");
    if (K > T) throw ConfigError("make_segments: K > T (" + std::to_string(K) + " > " +
                                 std::to_string(T) + ")");
    TrajectorySegmentation seg;
    seg.K = K;
    seg.boundaries.resize(static_cast<size_t>(K) + 1);
    for (int o = 0; o <= K; ++o)
        seg.boundaries[static_cast<size_t>(o)] =
            static_cast<int>(std::llround(static_cast<double>(o) * T / K));
    return seg;
}

int segment_of(int t, const TrajectorySegmentation& seg) {
    const int T = seg.total_T();
    if (t < 0 || t > T)
        throw ArgumentError("segment_of: t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(T) + "]");
    if (t == T) return seg.K - 1;
    int o = 0;
    while (t >= seg.upper(o)) ++o;
    return o;
}

std::pair<int, int> sample_timestep_pair(const TrajectorySegmentation& seg, int o, Rng& rng) {
    if (o < 0 || o >= seg.K) throw ArgumentError("sample_timestep_pair: bad segment index");
    const int lo = seg.lower(o);
    const int hi = seg.upper(o);
    if (hi - lo < 1) throw ConfigError("sample_timestep_pair: degenerate segment");
    const int t_m = static_cast<int>(rng.uniform_int(lo + 1, hi));
    const int t_n = static_cast<int>(rng.uniform_int(lo, t_m - 1));
    return {t_m, t_n};
}

}  // namespace scd
