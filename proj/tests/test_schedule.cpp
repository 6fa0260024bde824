// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>

#include "doctest.h"
#include "scd/errors.hpp"
#include "scd/rng.hpp"
#include "scd/schedule.hpp"

using namespace scd;

namespace {

Tensor scalar(double v) {
    Tensor t({1});
    t[0] = v;
    return t;
}

Tensor randn(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

// custom two-level schedule for hand arithmetic: alpha_bar[1] = 0.25
NoiseSchedule quarter_schedule() {
    NoiseSchedule s;
    s.num_timesteps = 2;
    s.alpha_bar = {1.0, 0.25, 0.1};
    s.kind = ScheduleKind::linear_beta;
    return s;
}

}  // namespace

TEST_CASE("linear beta schedule invariants") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear_beta, 1000);
    CHECK(s.alpha_bar[0] == 1.0);
    for (int t = 1; t <= 1000; ++t) {
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        CHECK(s.alpha_bar[t] > 0.0);
        CHECK(s.alpha_bar[t] <= 1.0);
    }
    // product of (1 - beta) for beta linear in [1e-4, 2e-2]
    CHECK(s.alpha_bar[1000] > 0.0);
    CHECK(s.alpha_bar[1000] < 0.01);
}

TEST_CASE("cosine schedule stays positive and decreasing") {
    NoiseSchedule s = build_schedule(ScheduleKind::cosine, 10);
    CHECK(s.alpha_bar[10] > 0.0);
    CHECK(s.alpha_bar[0] == 1.0);
    for (int t = 1; t <= 10; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
}

TEST_CASE("build_schedule rejects invalid T") {
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear_beta, 1), ConfigError);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::cosine, 0), ConfigError);
}

TEST_CASE("forward_diffuse basics") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear_beta, 100);
    Rng rng(1);
    Tensor x0 = randn({2, 3, 4, 4}, rng);
    Tensor eps = randn({2, 3, 4, 4}, rng);

    SUBCASE("t = 0 is the identity") {
        Tensor out = forward_diffuse(x0, 0, eps, s);
        for (int64_t i = 0; i < x0.numel(); ++i) CHECK(out[i] == x0[i]);
    }
    SUBCASE("hand arithmetic at alpha_bar = 0.25") {
        Tensor out = forward_diffuse(scalar(1.0), 1, scalar(2.0), quarter_schedule());
        CHECK(out[0] == doctest::Approx(0.5 + std::sqrt(0.75) * 2.0).epsilon(1e-12));
        CHECK(out[0] == doctest::Approx(2.2320508).epsilon(1e-6));
    }
    SUBCASE("zero noise scales by sqrt(alpha_bar)") {
        Tensor zero(x0.shape);
        Tensor out = forward_diffuse(x0, 50, zero, s);
        for (int64_t i = 0; i < x0.numel(); ++i)
            CHECK(out[i] == doctest::Approx(std::sqrt(s.ab(50)) * x0[i]).epsilon(1e-14));
    }
    SUBCASE("shape mismatch throws") {
        Tensor bad({2, 3, 4, 2});
        CHECK_THROWS_AS(forward_diffuse(x0, 1, bad, s), ArgumentError);
    }
}

TEST_CASE("ddim_step basics") {
    NoiseSchedule s = build_schedule(ScheduleKind::linear_beta, 100);
    Rng rng(2);
    Tensor x0_hat = randn({1, 2, 3, 3}, rng);
    Tensor x_t = randn({1, 2, 3, 3}, rng);

    SUBCASE("t_prev = 0 returns x0_hat exactly") {
        Tensor out = ddim_step(x_t, x0_hat, 40, 0, s);
        for (int64_t i = 0; i < out.numel(); ++i)
            CHECK(out[i] == doctest::Approx(x0_hat[i]).epsilon(1e-12));
    }
    SUBCASE("zero implied noise scales x0_hat") {
        Tensor xt(x0_hat.shape);
        for (int64_t i = 0; i < xt.numel(); ++i) xt[i] = std::sqrt(s.ab(40)) * x0_hat[i];
        Tensor out = ddim_step(xt, x0_hat, 40, 10, s);
        for (int64_t i = 0; i < out.numel(); ++i)
            CHECK(out[i] == doctest::Approx(std::sqrt(s.ab(10)) * x0_hat[i]).epsilon(1e-12));
    }
    SUBCASE("argument checks") {
        CHECK_THROWS_AS(ddim_step(x_t, x0_hat, 10, 10, s), ArgumentError);
        CHECK_THROWS_AS(ddim_step(x_t, x0_hat, 10, 20, s), ArgumentError);
        CHECK_THROWS_AS(ddim_step(x_t, x0_hat, 0, 0, s), ArgumentError);
    }
}

TEST_CASE("solver is exact when the denoiser is exact") {
    // forward_diffuse then ddim_step with the true x0 lands on the t_prev
    // forward point with the same implied noise, for every (t, t_prev)
    NoiseSchedule s = build_schedule(ScheduleKind::linear_beta, 50);
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor x0 = randn({1, 1, 2, 2}, rng);
        Tensor eps = randn({1, 1, 2, 2}, rng);
        const int t = static_cast<int>(rng.uniform_int(1, 50));
        const int t_prev = static_cast<int>(rng.uniform_int(0, t - 1));
        Tensor x_t = forward_diffuse(x0, t, eps, s);
        Tensor stepped = ddim_step(x_t, x0, t, t_prev, s);
        Tensor direct = forward_diffuse(x0, t_prev, eps, s);
        for (int64_t i = 0; i < x0.numel(); ++i)
            CHECK(stepped[i] == doctest::Approx(direct[i]).epsilon(1e-10));
    }
}

TEST_CASE("cfg_combine endpoints and affinity") {
    Rng rng(4);
    Tensor c = randn({2, 2}, rng);
    Tensor u = randn({2, 2}, rng);

    Tensor w1 = cfg_combine(c, u, GuidanceScale{1.0});
    for (int64_t i = 0; i < c.numel(); ++i) CHECK(w1[i] == c[i]);

    Tensor w0 = cfg_combine(c, u, GuidanceScale{0.0});
    for (int64_t i = 0; i < c.numel(); ++i) CHECK(w0[i] == u[i]);

    Tensor same = cfg_combine(c, c, GuidanceScale{3.7});
    for (int64_t i = 0; i < c.numel(); ++i) CHECK(same[i] == doctest::Approx(c[i]));

    // affine in w: finite difference of outputs equals pred_cond - pred_uncond
    Tensor a = cfg_combine(c, u, GuidanceScale{2.0});
    Tensor b = cfg_combine(c, u, GuidanceScale{3.0});
    for (int64_t i = 0; i < c.numel(); ++i)
        CHECK(b[i] - a[i] == doctest::Approx(c[i] - u[i]).epsilon(1e-12));

    Tensor bad({3});
    CHECK_THROWS_AS(cfg_combine(c, bad, GuidanceScale{1.0}), ArgumentError);
}

TEST_CASE("make_segments layouts") {
    TrajectorySegmentation s2 = make_segments(2, 1000);
    CHECK(s2.boundaries == std::vector<int>{0, 500, 1000});
    TrajectorySegmentation s1 = make_segments(1, 1000);
    CHECK(s1.boundaries == std::vector<int>{0, 1000});
    TrajectorySegmentation s4 = make_segments(4, 1000);
    CHECK(s4.boundaries == std::vector<int>{0, 250, 500, 750, 1000});
    CHECK_THROWS_AS(make_segments(11, 10), ConfigError);
    CHECK_THROWS_AS(make_segments(0, 10), ConfigError);
}

TEST_CASE("segment_of boundary rules") {
    TrajectorySegmentation seg = make_segments(2, 1000);
    CHECK(segment_of(500, seg) == 1);
    CHECK(segment_of(1000, seg) == 1);
    CHECK(segment_of(0, seg) == 0);
    CHECK(segment_of(499, seg) == 0);
    CHECK_THROWS_AS(segment_of(-1, seg), ArgumentError);
    CHECK_THROWS_AS(segment_of(1001, seg), ArgumentError);

    // segment_of inverts the covering relation everywhere
    TrajectorySegmentation s3 = make_segments(3, 100);
    for (int t = 0; t <= 100; ++t) {
        const int o = segment_of(t, s3);
        if (t < 100) {
            CHECK(t >= s3.lower(o));
            CHECK(t < s3.upper(o));
        } else {
            CHECK(o == s3.K - 1);
        }
    }
}

TEST_CASE("sample_timestep_pair ordering and support") {
    TrajectorySegmentation seg = make_segments(2, 1000);
    Rng rng(7);
    for (int i = 0; i < 2000; ++i) {
        const int o = static_cast<int>(rng.uniform_int(0, 1));
        auto [t_m, t_n] = sample_timestep_pair(seg, o, rng);
        CHECK(t_n < t_m);
        CHECK(t_n >= seg.lower(o));
        CHECK(t_m <= seg.upper(o));
    }
}

TEST_CASE("sample_timestep_pair enumerates the tiny segment") {
    TrajectorySegmentation seg;
    seg.K = 1;
    seg.boundaries = {0, 2};
    Rng rng(8);
    std::map<std::pair<int, int>, int> seen;
    for (int i = 0; i < 3000; ++i) seen[sample_timestep_pair(seg, 0, rng)]++;
    CHECK(seen.size() == 3);
    CHECK(seen.count({1, 0}) == 1);
    CHECK(seen.count({2, 0}) == 1);
    CHECK(seen.count({2, 1}) == 1);
}

TEST_CASE("sample_timestep_pair matches the two-stage law (chi-squared)") {
    // brute-force law on [0, 10]: P(m) = 1/10 for m in 1..10, P(n|m) = 1/m
    TrajectorySegmentation seg;
    seg.K = 1;
    seg.boundaries = {0, 10};
    std::map<std::pair<int, int>, double> expect;
    for (int m = 1; m <= 10; ++m)
        for (int n = 0; n < m; ++n) expect[{m, n}] = (1.0 / 10.0) * (1.0 / m);

    const int draws = 100000;
    Rng rng(9);
    std::map<std::pair<int, int>, int> obs;
    for (int i = 0; i < draws; ++i) obs[sample_timestep_pair(seg, 0, rng)]++;

    double chi2 = 0;
    for (const auto& [pair, p] : expect) {
        const double e = p * draws;
        const double d = obs[pair] - e;
        chi2 += d * d / e;
    }
    // 55 cells - 1 dof = 54; critical value at p = 0.001 is 98.3
    CHECK(chi2 < 98.3);
    for (const auto& [pair, count] : obs) CHECK(expect.count(pair) == 1);
}

TEST_CASE("degenerate segment is rejected") {
    TrajectorySegmentation seg;
    seg.K = 1;
    seg.boundaries = {5, 5};
    Rng rng(10);
    CHECK_THROWS_AS(sample_timestep_pair(seg, 0, rng), ConfigError);
}

TEST_CASE("rng streams are deterministic and serializable") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    auto [key, ctr] = a.state();
    Rng c = Rng::from_state(key, ctr);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == c.normal());
    CHECK(a.fork("x").next_u64() != a.fork("y").next_u64());
}
