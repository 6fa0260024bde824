// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "scd/distill.hpp"
#include "scd/errors.hpp"
#include "scd/oracle.hpp"

using namespace scd;

namespace {

// small vector-task fixture: fast enough for training-loop tests
struct VectorFixture {
    oracle::GaussianMixturePrior prior;
    NoiseSchedule sched;
    InMemoryDataset data;
    ModelParams teacher;

    explicit VectorFixture(int teacher_steps = 60) {
        prior = oracle::GaussianMixturePrior::single({0.4, -0.6}, {0.5, 0.8});
        sched = build_schedule(ScheduleKind::linear_beta, 1000);
        data = oracle::build_vector_dataset(prior, 128, 3);
        teacher = run_teacher_training(oracle::vector_task_config(2), data, sched, teacher_steps,
                                       2e-3, 4, 0.1, 11);
    }
};

DistillConfig vector_distill_config() {
    DistillConfig dc;
    dc.K = 2;
    dc.lambda1 = 0.0;  // no motion mask on the vector task
    dc.lambda2 = 0.1;
    dc.lr = 1e-3;
    dc.batch_size = 2;
    dc.total_steps = 40;
    dc.seed = 5;
    return dc;
}

bool params_equal(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a.tensors[i].data != b.tensors[i].data) return false;
    return true;
}

}  // namespace

TEST_CASE("teacher_train_step basics") {
    VectorFixture fx(0);
    TrainState state = init_teacher_training(oracle::vector_task_config(2), 7);
    std::vector<const TrainItem*> batch{&fx.data.item(0), &fx.data.item(1)};

    SUBCASE("loss is finite and positive at initialization") {
        const double loss = teacher_train_step(state, batch, fx.sched, 1e-3, 0.1);
        CHECK(std::isfinite(loss));
        CHECK(loss > 0.0);
    }
    SUBCASE("zero learning rate leaves parameters unchanged") {
        ParamSet before = state.student.params;
        teacher_train_step(state, batch, fx.sched, 0.0, 0.1);
        CHECK(params_equal(before, state.student.params));
    }
    SUBCASE("loss decreases over a short run") {
        double first = 0, last = 0;
        for (int i = 0; i < 120; ++i) {
            const double l = teacher_train_step(state, batch, fx.sched, 2e-3, 0.0);
            if (i < 10) first += l / 10;
            if (i >= 110) last += l / 10;
        }
        CHECK(last < first);
    }
}

TEST_CASE("distill_step loss decomposition is exact") {
    VectorFixture fx;
    DistillConfig dc = vector_distill_config();
    TrainState state = init_distillation(fx.teacher, dc);
    TrajectorySegmentation seg = make_segments(dc.K, fx.sched.num_timesteps);
    for (int i = 0; i < 25; ++i) {
        std::vector<const TrainItem*> batch{&fx.data.item(i % fx.data.size()),
                                            &fx.data.item((i * 7 + 1) % fx.data.size())};
        LossBreakdown lb = distill_step(state, batch, seg, dc, fx.sched);
        CHECK(std::abs(lb.total - (lb.cd_loss + dc.lambda2 * lb.aux_loss)) <= 1e-12);
        // segment containment of the logged draw
        CHECK(lb.t_n >= seg.lower(lb.segment));
        CHECK(lb.t_n < lb.t_m);
        CHECK(lb.t_m <= seg.upper(lb.segment));
        CHECK(lb.w >= dc.w_min);
        CHECK(lb.w <= dc.w_max);
    }
}

TEST_CASE("no gradient reaches the teacher or the EMA copy") {
    VectorFixture fx;
    DistillConfig dc = vector_distill_config();
    TrainState state = init_distillation(fx.teacher, dc);
    TrajectorySegmentation seg = make_segments(dc.K, fx.sched.num_timesteps);

    ParamSet teacher_before = state.teacher.params;
    ParamSet ema_before = state.ema.params;
    std::vector<const TrainItem*> batch{&fx.data.item(0), &fx.data.item(1)};
    LossBreakdown lb = distill_step(state, batch, seg, dc, fx.sched);
    (void)lb;

    CHECK(params_equal(teacher_before, state.teacher.params));
    // the EMA moved only through the ema_update recursion
    for (size_t i = 0; i < ema_before.size(); ++i)
        for (int64_t k = 0; k < ema_before.tensors[i].numel(); ++k) {
            const double expect = dc.ema_rate * ema_before.tensors[i][k] +
                                  (1.0 - dc.ema_rate) * state.student.params.tensors[i][k];
            CHECK(state.ema.params.tensors[i][k] == doctest::Approx(expect).epsilon(1e-15));
        }
}

TEST_CASE("boundary draw makes the EMA target the solver output itself") {
    VectorFixture fx;
    NoiseSchedule& sched = fx.sched;
    Rng rng(9);
    Tensor x_hat({1, 2, 1, 1});
    for (auto& v : x_hat.data) v = rng.normal();
    ConditionBundle cond;
    cond.null_conditioning = true;
    cond.segment_boundary = 500;
    // t_n == s_o: the consistency function is the identity there
    Tensor target = consistency_function(fx.teacher, x_hat, 500, 500, cond, sched);
    CHECK(target.data == x_hat.data);
}

TEST_CASE("K=1, lambda1=0, lambda2=0 reduces bitwise to the plain CD loss") {
    VectorFixture fx;
    DistillConfig dc = vector_distill_config();
    dc.K = 1;
    dc.lambda1 = 0.0;
    dc.lambda2 = 0.0;
    dc.batch_size = 1;

    TrainState state = init_distillation(fx.teacher, dc);
    TrajectorySegmentation seg = make_segments(1, fx.sched.num_timesteps);

    // replay the step's draws through an identical rng
    TrainState replay = init_distillation(fx.teacher, dc);
    const TrainItem& item = fx.data.item(4);

    const int o = static_cast<int>(replay.rng.uniform_int(0, 0));
    auto [t_m, t_n] = sample_timestep_pair(seg, o, replay.rng);
    const double w = replay.rng.uniform(dc.w_min, dc.w_max);
    Tensor eps(item.x0.latents.shape);
    for (auto& v : eps.data) v = replay.rng.normal();

    Tensor x_tm = forward_diffuse(item.x0.latents, t_m, eps, fx.sched);
    ConditionBundle tc = item.cond;
    tc.guidance.w = 1.0;
    tc.segment_boundary = 0;
    auto [pc, f1] = raw_forward(replay.teacher, x_tm, t_m, tc, fx.sched);
    auto [pu, f2] = raw_forward(replay.teacher, x_tm, t_m, null_condition_like(tc), fx.sched);
    Tensor guided = cfg_combine(pc, pu, GuidanceScale{w});
    Tensor x0t = x0_from_eps(x_tm, guided, t_m, fx.sched);
    Tensor x_hat = ddim_step(x_tm, x0t, t_m, t_n, fx.sched);

    ConditionBundle sc = item.cond;
    sc.guidance.w = w;
    sc.segment_boundary = 0;
    Tensor student = consistency_function(replay.student, x_tm, t_m, 0, sc, fx.sched);
    Tensor target = consistency_function(replay.ema, x_hat, t_n, 0, sc, fx.sched);
    const double plain = base_distance(student, target, DistanceKind::squared);

    std::vector<const TrainItem*> batch{&item};
    LossBreakdown lb = distill_step(state, batch, seg, dc, fx.sched);
    CHECK(lb.cd_loss == plain);
    CHECK(lb.total == plain);
    CHECK(lb.t_m == t_m);
    CHECK(lb.t_n == t_n);
}

TEST_CASE("distillation runs are deterministic per seed") {
    VectorFixture fx;
    DistillConfig dc = vector_distill_config();
    dc.total_steps = 30;
    DistillRunResult a = run_distillation(dc, fx.teacher, fx.data, fx.sched);
    DistillRunResult b = run_distillation(dc, fx.teacher, fx.data, fx.sched);
    CHECK(params_equal(a.state.student.params, b.state.student.params));
    CHECK(params_equal(a.state.ema.params, b.state.ema.params));
    CHECK(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].total == b.log[i].total);

    DistillConfig dc2 = dc;
    dc2.seed = 77;
    DistillRunResult c = run_distillation(dc2, fx.teacher, fx.data, fx.sched);
    CHECK(!params_equal(a.state.student.params, c.state.student.params));
}

TEST_CASE("distill_until resumes mid-run with identical continuation") {
    VectorFixture fx;
    DistillConfig dc = vector_distill_config();
    dc.total_steps = 24;

    DistillRunResult full = run_distillation(dc, fx.teacher, fx.data, fx.sched);

    DistillConfig half = dc;
    half.total_steps = 12;
    TrainState state = init_distillation(fx.teacher, dc);
    std::vector<LossBreakdown> log1 = distill_until(state, half, fx.data, fx.sched);
    std::vector<LossBreakdown> log2 = distill_until(state, dc, fx.data, fx.sched);

    CHECK(log1.size() + log2.size() == full.log.size());
    for (size_t i = 0; i < log2.size(); ++i)
        CHECK(log2[i].total == full.log[log1.size() + i].total);
    CHECK(params_equal(state.student.params, full.state.student.params));
}

TEST_CASE("missing teacher and bad batches are rejected") {
    VectorFixture fx;
    DistillConfig dc = vector_distill_config();
    TrainState state;  // no teacher
    state.student = fx.teacher;
    TrajectorySegmentation seg = make_segments(2, fx.sched.num_timesteps);
    std::vector<const TrainItem*> batch{&fx.data.item(0)};
    CHECK_THROWS_AS(distill_step(state, batch, seg, dc, fx.sched), ConfigError);

    TrainState ok = init_distillation(fx.teacher, dc);
    std::vector<const TrainItem*> empty;
    CHECK_THROWS_AS(distill_step(ok, empty, seg, dc, fx.sched), ArgumentError);
}

TEST_CASE("clip dataset items carry consistent shapes") {
    ToyAutoencoder ae{2};
    InMemoryDataset ds = build_clip_dataset(2, 50, 8, 32, 32, ae, 0.2, 16);
    CHECK(ds.size() == 2);
    const TrainItem& it = ds.item(0);
    CHECK(it.x0.latents.shape == std::vector<int>{8, 3, 16, 16});
    CHECK(it.cond.pose_latents.shape == std::vector<int>{8, 1, 16, 16});
    CHECK(it.cond.reference_latent.shape == std::vector<int>{3, 16, 16});
    CHECK(it.latent_mask.shape == std::vector<int>{8, 16, 16});
    CHECK(static_cast<int>(it.cond.face_feature.size()) == 12);
    // the motion mask is non-degenerate on generated clips
    CHECK(it.latent_mask.count() > 0);
    CHECK(it.latent_mask.count() < it.latent_mask.numel());
}
