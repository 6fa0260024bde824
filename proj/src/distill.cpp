// SPDX-License-Identifier: Apache-2.0
#include "scd/distill.hpp"

#include <cmath>
#include <sstream>

#include "scd/errors.hpp"
#include "scd/parallel.hpp"

namespace scd {

namespace {

void check_finite(double loss, int64_t step, const char* what) {
    if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << what << ": non-finite loss " << loss << " at step " << step;
        throw TrainingError(os.str());
    }
}

Tensor draw_noise_like(const Tensor& x, Rng& rng) {
    Tensor eps(x.shape);
    for (auto& v : eps.data) v = rng.normal();
    return eps;
}

void accumulate(ParamSet& into, const ParamSet& from) {
    for (size_t i = 0; i < into.size(); ++i) {
        Tensor& a = into.tensors[i];
        const Tensor& b = from.tensors[i];
        for (int64_t k = 0; k < a.numel(); ++k) a[k] += b[k];
    }
}

}  // namespace

TrainItem make_train_item(const VideoClip& clip, const ToyAutoencoder& ae, double delta,
                          int face_crop, bool use_face) {
    TrainItem item;
    item.x0 = encode_latent(clip, ae);
    item.latent_mask = compute_latent_motion_mask(clip, delta, ae.factor).latent_mask;

    Tensor ref_frame({1, clip.channels(), clip.height(), clip.width()});
    ref_frame.data = clip.reference_frame.data;
    Tensor ref_lat = avg_pool_frames(ref_frame, ae.factor);
    item.cond.reference_latent = Tensor({ref_lat.dim(1), ref_lat.dim(2), ref_lat.dim(3)});
    item.cond.reference_latent.data = ref_lat.data;

    item.cond.pose_latents = avg_pool_frames(clip.pose_map, ae.factor);

    if (use_face) {
        item.cond.face_feature = extract_face_feature(clip, ae, face_crop).vector;
    } else {
        item.cond.face_feature.assign(
            extract_face_feature(clip, ae, face_crop).vector.size(), 0.0);
    }
    return item;
}

InMemoryDataset build_clip_dataset(int n_clips, uint64_t seed, int F, int H, int W,
                                   const ToyAutoencoder& ae, double delta, int face_crop,
                                   bool use_face) {
    InMemoryDataset ds;
    ds.items.reserve(static_cast<size_t>(n_clips));
    for (int i = 0; i < n_clips; ++i) {
        VideoClip clip = generate_clip(seed + static_cast<uint64_t>(i), F, H, W);
        ds.items.push_back(make_train_item(clip, ae, delta, face_crop, use_face));
    }
    return ds;
}

TrainState init_teacher_training(const DenoiserConfig& cfg, uint64_t seed) {
    TrainState state;
    state.student = init_model(cfg, seed);
    state.opt = AdamState::init_for(state.student.params);
    state.rng = Rng(seed, /*stream=*/0x7e4c);
    return state;
}

double teacher_train_step(TrainState& state, const std::vector<const TrainItem*>& batch,
                          const NoiseSchedule& sched, double lr, double drop_prob) {
    if (batch.empty()) throw ArgumentError("teacher_train_step: empty batch");
    const int B = static_cast<int>(batch.size());
    const int T = sched.num_timesteps;
    const bool eps_target = state.student.config.target == PredictionTarget::epsilon;

    struct Draw {
        int t;
        bool drop;
        Tensor eps;
    };
    std::vector<Draw> draws(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        draws[static_cast<size_t>(b)].t = static_cast<int>(state.rng.uniform_int(1, T));
        draws[static_cast<size_t>(b)].drop = state.rng.uniform01() < drop_prob;
        draws[static_cast<size_t>(b)].eps = draw_noise_like(batch[static_cast<size_t>(b)]->x0.latents, state.rng);
    }

    std::vector<ParamSet> grads(static_cast<size_t>(B));
    std::vector<double> losses(static_cast<size_t>(B), 0.0);
    parallel_over(B, fanout(0, B), [&](int b) {
        const TrainItem& it = *batch[static_cast<size_t>(b)];
        const Draw& d = draws[static_cast<size_t>(b)];
        ConditionBundle cond = it.cond;
        cond.guidance.w = 1.0;
        cond.segment_boundary = 0;
        if (d.drop) cond = null_condition_like(cond);

        Tensor x_t = forward_diffuse(it.x0.latents, d.t, d.eps, sched);
        DenoiserWorkspace ws;
        auto [pred, feats] = raw_forward(state.student, x_t, d.t, cond, sched, &ws);
        const Tensor& target = eps_target ? d.eps : it.x0.latents;

        grads[static_cast<size_t>(b)] = state.student.params.zeros_like();
        Tensor d_pred(pred.shape);
        losses[static_cast<size_t>(b)] =
            base_distance_backward(pred, target, DistanceKind::squared, 1.0 / B, d_pred);
        raw_backward(state.student, ws, d_pred, Tensor{}, grads[static_cast<size_t>(b)]);
    });

    ParamSet total = state.student.params.zeros_like();
    double loss = 0;
    for (int b = 0; b < B; ++b) {
        accumulate(total, grads[static_cast<size_t>(b)]);
        loss += losses[static_cast<size_t>(b)] / B;
    }
    check_finite(loss, state.step, "teacher_train_step");
    state.opt.apply(state.student.params, total, lr);
    ++state.step;
    return loss;
}

ModelParams run_teacher_training(const DenoiserConfig& cfg, const Dataset& data,
                                 const NoiseSchedule& sched, int steps, double lr, int batch_size,
                                 double drop_prob, uint64_t seed,
                                 const std::function<void(int64_t, double)>& on_step) {
    if (data.size() <= 0) throw ConfigError("run_teacher_training: empty dataset");
    TrainState state = init_teacher_training(cfg, seed);
    for (int s = 0; s < steps; ++s) {
        std::vector<const TrainItem*> batch;
        for (int b = 0; b < batch_size; ++b)
            batch.push_back(&data.item(static_cast<int>(state.rng.uniform_int(0, data.size() - 1))));
        const double loss = teacher_train_step(state, batch, sched, lr, drop_prob);
        if (on_step) on_step(state.step, loss);
    }
    return state.student;
}

TrainState init_distillation(const ModelParams& teacher, const DistillConfig& cfg) {
    TrainState state;
    state.teacher = teacher;
    state.has_teacher = true;
    state.student = teacher;  // LCM convention: the student starts at the teacher
    state.ema = state.student;
    state.has_ema = true;
    state.opt = AdamState::init_for(state.student.params);
    state.rng = Rng(cfg.seed, /*stream=*/0xd157);
    return state;
}

LossBreakdown distill_step(TrainState& state, const std::vector<const TrainItem*>& batch,
                           const TrajectorySegmentation& seg, const DistillConfig& cfg,
                           const NoiseSchedule& sched) {
    if (!state.has_teacher) throw ConfigError("distill_step: no teacher loaded");
    if (!state.has_ema) throw ConfigError("distill_step: no EMA parameters");
    if (batch.empty()) throw ArgumentError("distill_step: empty batch");
    const int B = static_cast<int>(batch.size());
    const bool eps_target = state.teacher.config.target == PredictionTarget::epsilon;

    struct Draw {
        int o, t_m, t_n;
        double w;
        Tensor eps;
    };
    std::vector<Draw> draws(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        Draw& d = draws[static_cast<size_t>(b)];
        d.o = static_cast<int>(state.rng.uniform_int(0, seg.K - 1));
        std::tie(d.t_m, d.t_n) = sample_timestep_pair(seg, d.o, state.rng);
        d.w = state.rng.uniform(cfg.w_min, cfg.w_max);
        d.eps = draw_noise_like(batch[static_cast<size_t>(b)]->x0.latents, state.rng);
    }

    std::vector<ParamSet> grads(static_cast<size_t>(B));
    std::vector<double> cd(static_cast<size_t>(B), 0.0), aux(static_cast<size_t>(B), 0.0);
    parallel_over(B, fanout(cfg.threads, B), [&](int b) {
        const TrainItem& it = *batch[static_cast<size_t>(b)];
        const Draw& d = draws[static_cast<size_t>(b)];
        const int s_o = seg.lower(d.o);

        Tensor x_tm = forward_diffuse(it.x0.latents, d.t_m, d.eps, sched);

        // teacher solver target; no gradient flows into this path
        ConditionBundle teacher_cond = it.cond;
        teacher_cond.guidance.w = 1.0;
        teacher_cond.segment_boundary = 0;
        auto [pred_c, fc] = raw_forward(state.teacher, x_tm, d.t_m, teacher_cond, sched);
        auto [pred_u, fu] =
            raw_forward(state.teacher, x_tm, d.t_m, null_condition_like(teacher_cond), sched);
        GuidanceScale g{d.w, cfg.w_min, cfg.w_max};
        Tensor guided = cfg_combine(pred_c, pred_u, g);
        Tensor x0_teacher =
            eps_target ? x0_from_eps(x_tm, guided, d.t_m, sched) : std::move(guided);
        Tensor x_hat_tn = ddim_step(x_tm, x0_teacher, d.t_m, d.t_n, sched);

        ConditionBundle student_cond = it.cond;
        student_cond.guidance.w = d.w;
        student_cond.segment_boundary = s_o;

        DenoiserWorkspace ws;
        ConsistencyResult student =
            consistency_forward(state.student, x_tm, d.t_m, s_o, student_cond, sched, ws);
        Tensor target = consistency_function(state.ema, x_hat_tn, d.t_n, s_o, student_cond, sched);

        grads[static_cast<size_t>(b)] = state.student.params.zeros_like();
        Tensor d_out(student.output.shape);
        cd[static_cast<size_t>(b)] = motion_weighted_distance_backward(
            student.output, target, it.latent_mask, cfg.lambda1, cfg.distance, 1.0 / B, d_out);

        Tensor d_pred(d_out.shape);
        for (int64_t k = 0; k < d_out.numel(); ++k) d_pred[k] = d_out[k] * student.d_output_d_pred;

        Tensor d_feat(student.features.shape);
        Tensor aux_pred = aux_head_predict(state.student, student.features);
        if (cfg.lambda2 > 0.0) {
            Tensor d_aux(aux_pred.shape);
            aux[static_cast<size_t>(b)] = base_distance_backward(
                aux_pred, it.x0.latents, cfg.distance, cfg.lambda2 / B, d_aux);
            aux_head_backward(state.student, student.features, d_aux, grads[static_cast<size_t>(b)],
                              d_feat);
        } else {
            aux[static_cast<size_t>(b)] = base_distance(aux_pred, it.x0.latents, cfg.distance);
        }
        raw_backward(state.student, ws, d_pred, d_feat, grads[static_cast<size_t>(b)]);
    });

    LossBreakdown out;
    ParamSet total = state.student.params.zeros_like();
    for (int b = 0; b < B; ++b) {
        accumulate(total, grads[static_cast<size_t>(b)]);
        out.cd_loss += cd[static_cast<size_t>(b)] / B;
        out.aux_loss += aux[static_cast<size_t>(b)] / B;
    }
    out.total = out.cd_loss + cfg.lambda2 * out.aux_loss;
    out.segment = draws[0].o;
    out.t_m = draws[0].t_m;
    out.t_n = draws[0].t_n;
    out.w = draws[0].w;
    check_finite(out.total, state.step, "distill_step");

    state.opt.apply(state.student.params, total, cfg.lr);
    ema_update(state.ema, state.student, cfg.ema_rate);
    ++state.step;
    return out;
}

std::vector<LossBreakdown> distill_until(TrainState& state, const DistillConfig& cfg,
                                         const Dataset& data, const NoiseSchedule& sched,
                                         const std::function<void(int64_t, const LossBreakdown&)>&
                                             on_step) {
    if (data.size() <= 0) throw ConfigError("distill_until: empty dataset");
    TrajectorySegmentation seg = make_segments(cfg.K, sched.num_timesteps);
    std::vector<LossBreakdown> log;
    while (state.step < cfg.total_steps) {
        std::vector<const TrainItem*> batch;
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(&data.item(static_cast<int>(state.rng.uniform_int(0, data.size() - 1))));
        LossBreakdown lb = distill_step(state, batch, seg, cfg, sched);
        log.push_back(lb);
        if (on_step) on_step(state.step, lb);
    }
    return log;
}

DistillRunResult run_distillation(const DistillConfig& cfg, const ModelParams& teacher,
                                  const Dataset& data, const NoiseSchedule& sched,
                                  const std::function<void(int64_t, const LossBreakdown&)>&
                                      on_step) {
    DistillRunResult res;
    res.state = init_distillation(teacher, cfg);
    res.log = distill_until(res.state, cfg, data, sched, on_step);
    return res;
}

}  // namespace scd
