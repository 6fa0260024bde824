// SPDX-License-Identifier: Apache-2.0
#include "scd/sampling.hpp"

#include <cmath>

#include "scd/errors.hpp"
#include "scd/rng.hpp"

namespace scd {

SamplePlan plan_steps(int N, const TrajectorySegmentation& seg) {
    if (N < 1) throw ArgumentError("plan_steps: N must be >= 1");
    const int K = seg.K;
    SamplePlan plan;
    plan.steps = N;

    if (N <= K) {
        // one jump per chosen boundary, skipping intermediate segment stops
        int prev_visit = seg.total_T();
        for (int i = 0; i < N; ++i) {
            const int bidx = static_cast<int>(
                std::llround(static_cast<double>(K) * (N - 1 - i) / N));
            plan.visit_t.push_back(prev_visit);
            plan.anchor_s.push_back(seg.boundaries[static_cast<size_t>(bidx)]);
            prev_visit = seg.boundaries[static_cast<size_t>(bidx)];
        }
        return plan;
    }

    const int base = N / K, extra = N % K;
    for (int o = K - 1; o >= 0; --o) {
        // extras go to the later (noisier) segments
        int m = base + (o >= K - extra ? 1 : 0);
        const int lo = seg.lower(o), hi = seg.upper(o);
        m = std::min(m, hi - lo);  // cannot place more stops than integer timesteps
        for (int j = 0; j < m; ++j) {
            const int v = hi - static_cast<int>(
                                   std::llround(static_cast<double>(j) * (hi - lo) / m));
            plan.visit_t.push_back(v);
            plan.anchor_s.push_back(lo);
        }
    }
    return plan;
}

LatentVideo multistep_sample_with(const ConsistencyFn& f, const SamplePlan& plan,
                                  const NoiseSchedule& sched, const TrajectorySegmentation& seg,
                                  std::vector<int> latent_shape) {
    if (plan.visit_t.empty() || plan.visit_t.front() != seg.total_T() ||
        seg.total_T() != sched.num_timesteps)
        throw ConfigError("multistep_sample: plan does not match segmentation/schedule");
    if (plan.anchor_s.back() != 0)
        throw ConfigError("multistep_sample: plan does not terminate at 0");

    Rng rng(plan.noise_seed, /*stream=*/0x5a3f);
    Tensor x(latent_shape);
    for (auto& v : x.data) v = rng.normal();

    int level = sched.num_timesteps;
    for (size_t i = 0; i < plan.visit_t.size(); ++i) {
        const int t = plan.visit_t[i];
        const int s = plan.anchor_s[i];
        if (t > level) {
            Tensor eps(x.shape);
            for (auto& v : eps.data) v = rng.normal();
            x = forward_diffuse_between(x, level, t, eps, sched);
        } else if (t < level) {
            throw ConfigError("multistep_sample: visit above current level; bad plan");
        }
        x = f(x, t, s);
        level = s;
    }
    return LatentVideo{std::move(x)};
}

LatentVideo multistep_sample(const ModelParams& model, const ConditionBundle& cond,
                             const SamplePlan& plan, const NoiseSchedule& sched,
                             const TrajectorySegmentation& seg, std::vector<int> latent_shape) {
    return multistep_sample_with(
        [&](const Tensor& x, int t, int s) {
            ConditionBundle c = cond;
            c.segment_boundary = s;
            return consistency_function(model, x, t, s, c, sched);
        },
        plan, sched, seg, std::move(latent_shape));
}

LatentVideo teacher_ddim_sample(const ModelParams& teacher, const ConditionBundle& cond, int N,
                                const GuidanceScale& w, const NoiseSchedule& sched,
                                uint64_t noise_seed, std::vector<int> latent_shape) {
    if (N < 1) throw ArgumentError("teacher_ddim_sample: N must be >= 1");
    const int T = sched.num_timesteps;
    const bool eps_target = teacher.config.target == PredictionTarget::epsilon;

    Rng rng(noise_seed, /*stream=*/0x5a3f);
    Tensor x(latent_shape);
    for (auto& v : x.data) v = rng.normal();

    ConditionBundle c = cond;
    c.guidance.w = 1.0;
    c.segment_boundary = 0;
    ConditionBundle uncond = null_condition_like(c);

    for (int i = 0; i < N; ++i) {
        const int t = static_cast<int>(std::llround(static_cast<double>(T) * (N - i) / N));
        const int t_next = static_cast<int>(std::llround(static_cast<double>(T) * (N - i - 1) / N));
        auto [pred_c, fc] = raw_forward(teacher, x, t, c, sched);
        auto [pred_u, fu] = raw_forward(teacher, x, t, uncond, sched);
        Tensor guided = cfg_combine(pred_c, pred_u, w);
        Tensor x0h = eps_target ? x0_from_eps(x, guided, t, sched) : std::move(guided);
        x = ddim_step(x, x0h, t, t_next, sched);
    }
    return LatentVideo{std::move(x)};
}

}  // namespace scd
