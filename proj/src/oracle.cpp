// SPDX-License-Identifier: Apache-2.0
#include "scd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scd/errors.hpp"

namespace scd::oracle {

void GaussianMixturePrior::validate() const {
    if (dim < 1 || means.empty() || means.size() != variances.size() ||
        means.size() != weights.size())
        throw ConfigError("GaussianMixturePrior: inconsistent component counts");
    double wsum = 0;
    for (size_t k = 0; k < means.size(); ++k) {
        if (static_cast<int>(means[k].size()) != dim ||
            static_cast<int>(variances[k].size()) != dim)
            throw ConfigError("GaussianMixturePrior: component dim mismatch");
        for (double v : variances[k])
            if (v <= 0) throw ConfigError("GaussianMixturePrior: variances must be positive");
        wsum += weights[k];
    }
    if (std::abs(wsum - 1.0) > 1e-9)
        throw ConfigError("GaussianMixturePrior: weights must sum to 1");
}

GaussianMixturePrior GaussianMixturePrior::single(std::vector<double> mean,
                                                  std::vector<double> var) {
    GaussianMixturePrior p;
    p.dim = static_cast<int>(mean.size());
    p.means = {std::move(mean)};
    p.variances = {std::move(var)};
    p.weights = {1.0};
    p.validate();
    return p;
}

std::vector<double> sample_prior(const GaussianMixturePrior& prior, Rng& rng) {
    const double u = rng.uniform01();
    size_t k = 0;
    double acc = 0;
    for (; k < prior.weights.size(); ++k) {
        acc += prior.weights[k];
        if (u < acc) break;
    }
    k = std::min(k, prior.weights.size() - 1);
    std::vector<double> x(static_cast<size_t>(prior.dim));
    for (int d = 0; d < prior.dim; ++d)
        x[static_cast<size_t>(d)] =
            prior.means[k][static_cast<size_t>(d)] +
            std::sqrt(prior.variances[k][static_cast<size_t>(d)]) * rng.normal();
    return x;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// log-density of component k's diffused marginal at x_t
double component_log_marginal(const std::vector<double>& x_t, double ab,
                              const GaussianMixturePrior& prior, size_t k) {
    double lp = 0;
    for (int d = 0; d < prior.dim; ++d) {
        const double var = ab * prior.variances[k][static_cast<size_t>(d)] + (1.0 - ab);
        const double diff = x_t[static_cast<size_t>(d)] -
                            std::sqrt(ab) * prior.means[k][static_cast<size_t>(d)];
        lp += -0.5 * (diff * diff / var + std::log(var) + kLog2Pi);
    }
    return lp;
}

std::vector<double> log_responsibilities(const std::vector<double>& x_t, double ab,
                                         const GaussianMixturePrior& prior) {
    std::vector<double> lr(prior.weights.size());
    for (size_t k = 0; k < prior.weights.size(); ++k)
        lr[k] = std::log(prior.weights[k]) + component_log_marginal(x_t, ab, prior, k);
    // max-subtraction keeps the softmax stable far into the tails
    const double mx = *std::max_element(lr.begin(), lr.end());
    double z = 0;
    for (double& v : lr) z += std::exp(v - mx);
    const double logz = mx + std::log(z);
    for (double& v : lr) v -= logz;
    return lr;
}

}  // namespace

double log_marginal(const std::vector<double>& x_t, int t, const GaussianMixturePrior& prior,
                    const NoiseSchedule& sched) {
    prior.validate();
    const double ab = sched.ab(t);
    double mx = -1e300;
    std::vector<double> lp(prior.weights.size());
    for (size_t k = 0; k < prior.weights.size(); ++k) {
        lp[k] = std::log(prior.weights[k]) + component_log_marginal(x_t, ab, prior, k);
        mx = std::max(mx, lp[k]);
    }
    double z = 0;
    for (double v : lp) z += std::exp(v - mx);
    return mx + std::log(z);
}

std::vector<double> ideal_denoiser(const std::vector<double>& x_t, int t,
                                   const GaussianMixturePrior& prior,
                                   const NoiseSchedule& sched) {
    prior.validate();
    if (t < 1 || t > sched.num_timesteps)
        throw ArgumentError("ideal_denoiser: t must lie in [1, T]");
    if (static_cast<int>(x_t.size()) != prior.dim)
        throw ArgumentError("ideal_denoiser: dimension mismatch");
    const double ab = sched.ab(t);
    const double sq = std::sqrt(ab);

    std::vector<double> lr = log_responsibilities(x_t, ab, prior);
    std::vector<double> out(static_cast<size_t>(prior.dim), 0.0);
    for (size_t k = 0; k < prior.weights.size(); ++k) {
        const double r = std::exp(lr[k]);
        for (int d = 0; d < prior.dim; ++d) {
            const double s2 = prior.variances[k][static_cast<size_t>(d)];
            const double m = prior.means[k][static_cast<size_t>(d)];
            const double var = ab * s2 + (1.0 - ab);
            const double post = m + sq * s2 / var * (x_t[static_cast<size_t>(d)] - sq * m);
            out[static_cast<size_t>(d)] += r * post;
        }
    }
    return out;
}

Tensor vector_to_latent(const std::vector<double>& x) {
    Tensor t({1, static_cast<int>(x.size()), 1, 1});
    t.data = x;
    return t;
}

std::vector<double> latent_to_vector(const Tensor& t) { return t.data; }

std::vector<double> oracle_ddim_step(const std::vector<double>& x_t, int t, int t_prev,
                                     const GaussianMixturePrior& prior,
                                     const NoiseSchedule& sched) {
    // reuse the shipped solver rather than a private copy of the formula
    Tensor xt = vector_to_latent(x_t);
    Tensor x0 = vector_to_latent(ideal_denoiser(x_t, t, prior, sched));
    return latent_to_vector(ddim_step(xt, x0, t, t_prev, sched));
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw ArgumentError("wasserstein_1d: empty input");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
        return s / static_cast<double>(a.size());
    }
    // integrate |Fa^{-1}(u) - Fb^{-1}(u)| over the merged quantile breakpoints
    const size_t na = a.size(), nb = b.size();
    double s = 0;
    double u = 0;
    size_t i = 0, j = 0;
    while (i < na && j < nb) {
        const double ua = static_cast<double>(i + 1) / na;
        const double ub = static_cast<double>(j + 1) / nb;
        const double next = std::min(ua, ub);
        s += (next - u) * std::abs(a[i] - b[j]);
        u = next;
        if (ua <= next) ++i;
        if (ub <= next) ++j;
    }
    return s;
}

GaussianAffineMap gaussian_chain_closed_form(double mean, double var, int steps, int down_to_t,
                                             const NoiseSchedule& sched) {
    const int T = sched.num_timesteps;
    GaussianAffineMap map;
    int t = T;
    for (int i = 0; i < steps; ++i) {
        const int t_next = static_cast<int>(
            std::llround(static_cast<double>(T) * (steps - i - 1) / steps));
        if (t <= down_to_t) break;
        const double ab = sched.ab(t), abp = sched.ab(t_next);
        const double v = ab * var + (1.0 - ab);
        map.gain *= (std::sqrt(abp * ab) * var + std::sqrt((1.0 - abp) * (1.0 - ab))) / v;
        t = t_next;
        if (t == down_to_t) break;
    }
    map.mean_t = std::sqrt(sched.ab(down_to_t)) * mean;
    return map;
}

std::string SolverCheckReport::to_json() const {
    nlohmann::json j;
    j["passed"] = passed;
    j["max_traj_rel_err"] = max_traj_rel_err;
    j["max_boundary_err"] = max_boundary_err;
    j["max_w1"] = max_w1;
    j["worst_coordinate"] = worst_coordinate;
    j["detail"] = detail;
    return j.dump(2);
}

SolverCheckReport solver_consistency_check(const GaussianMixturePrior& prior,
                                           const NoiseSchedule& sched, int steps, double tolerance,
                                           int num_seeds, uint64_t seed) {
    prior.validate();
    if (steps < 1) throw ArgumentError("solver_consistency_check: steps must be >= 1");
    const int T = sched.num_timesteps;
    const bool single = prior.weights.size() == 1;

    auto grid = [&](int S) {
        std::vector<int> ts(static_cast<size_t>(S) + 1);
        for (int i = 0; i <= S; ++i)
            ts[static_cast<size_t>(i)] =
                static_cast<int>(std::llround(static_cast<double>(T) * (S - i) / S));
        return ts;
    };
    const std::vector<int> coarse = grid(steps);
    // compare coarse states against the 10x finer chain at quartile stops
    std::vector<int> checkpoints;
    for (int q = 1; q <= 4; ++q) checkpoints.push_back(coarse[static_cast<size_t>(steps * q / 4)]);

    Rng rng(seed, /*stream=*/0x0c1e);
    SolverCheckReport rep;
    std::vector<std::vector<double>> endpoints(static_cast<size_t>(prior.dim));

    for (int s = 0; s < num_seeds; ++s) {
        std::vector<double> x(static_cast<size_t>(prior.dim));
        for (auto& v : x) v = rng.normal();
        const std::vector<double> x_start = x;

        std::vector<std::vector<double>> coarse_at;  // states at checkpoints
        for (size_t i = 0; i + 1 < coarse.size(); ++i) {
            x = oracle_ddim_step(x, coarse[i], coarse[i + 1], prior, sched);
            if (std::find(checkpoints.begin(), checkpoints.end(), coarse[i + 1]) !=
                checkpoints.end())
                coarse_at.push_back(x);
        }
        for (int d = 0; d < prior.dim; ++d)
            endpoints[static_cast<size_t>(d)].push_back(x[static_cast<size_t>(d)]);

        // finer reference chain (only for a subsample of seeds; it is 10x the work)
        if (s < std::min(num_seeds, 64)) {
            std::vector<int> fine = grid(steps * 10);
            std::vector<double> y = x_start;
            size_t ci = 0;
            for (size_t i = 0; i + 1 < fine.size(); ++i) {
                y = oracle_ddim_step(y, fine[i], fine[i + 1], prior, sched);
                if (ci < coarse_at.size() &&
                    fine[i + 1] == checkpoints[ci]) {
                    for (int d = 0; d < prior.dim; ++d) {
                        const double err = std::abs(coarse_at[ci][static_cast<size_t>(d)] -
                                                    y[static_cast<size_t>(d)]);
                        if (err > rep.max_boundary_err) {
                            rep.max_boundary_err = err;
                            rep.worst_coordinate = y[static_cast<size_t>(d)];
                        }
                    }
                    ++ci;
                }
            }

            if (single) {
                // exact affine composition for the Gaussian prior
                double num2 = 0, exact2 = 0, diff2 = 0;
                std::vector<double> z = x_start;
                size_t ci2 = 0;
                std::vector<double> state = x_start;
                for (size_t i = 0; i + 1 < coarse.size(); ++i) {
                    state = oracle_ddim_step(state, coarse[i], coarse[i + 1], prior, sched);
                    if (ci2 < coarse_at.size() && coarse[i + 1] == checkpoints[ci2]) {
                        for (int d = 0; d < prior.dim; ++d) {
                            const double m = prior.means[0][static_cast<size_t>(d)];
                            const double var = prior.variances[0][static_cast<size_t>(d)];
                            GaussianAffineMap map = gaussian_chain_closed_form(
                                m, var, steps, checkpoints[ci2], sched);
                            const double exact =
                                map.mean_t +
                                map.gain * (x_start[static_cast<size_t>(d)] -
                                            std::sqrt(sched.ab(T)) * m);
                            const double got = state[static_cast<size_t>(d)];
                            diff2 += (got - exact) * (got - exact);
                            exact2 += exact * exact;
                            num2 += got * got;
                        }
                        ++ci2;
                    }
                }
                const double rel = std::sqrt(diff2) / std::max(std::sqrt(exact2), 1e-12);
                rep.max_traj_rel_err = std::max(rep.max_traj_rel_err, rel);
            }
        }
    }

    Rng prior_rng = rng.fork("prior-samples");
    std::vector<std::vector<double>> prior_samples(static_cast<size_t>(prior.dim));
    for (int s = 0; s < num_seeds; ++s) {
        std::vector<double> p = sample_prior(prior, prior_rng);
        for (int d = 0; d < prior.dim; ++d)
            prior_samples[static_cast<size_t>(d)].push_back(p[static_cast<size_t>(d)]);
    }
    for (int d = 0; d < prior.dim; ++d)
        rep.max_w1 = std::max(rep.max_w1, wasserstein_1d(endpoints[static_cast<size_t>(d)],
                                                         prior_samples[static_cast<size_t>(d)]));

    const bool traj_ok = !single || steps < 50 || rep.max_traj_rel_err < 1e-3;
    rep.passed = rep.max_w1 < tolerance && rep.max_boundary_err < tolerance && traj_ok;
    std::ostringstream os;
    os << "steps=" << steps << " seeds=" << num_seeds << " dim=" << prior.dim;
    rep.detail = os.str();
    return rep;
}

DenoiserConfig vector_task_config(int dim) {
    DenoiserConfig cfg;
    cfg.latent_channels = dim;
    cfg.base_channels = 8;
    cfg.num_blocks = 2;
    cfg.temporal_kernel = 3;
    cfg.time_embed_dim = 16;
    cfg.face_feature_dim = 4;
    cfg.target = PredictionTarget::epsilon;
    return cfg;
}

InMemoryDataset build_vector_dataset(const GaussianMixturePrior& prior, int n_items,
                                     uint64_t seed) {
    prior.validate();
    InMemoryDataset ds;
    Rng rng(seed, /*stream=*/0x7ec);
    for (int i = 0; i < n_items; ++i) {
        TrainItem item;
        item.x0 = LatentVideo{vector_to_latent(sample_prior(prior, rng))};
        item.cond.null_conditioning = true;
        item.latent_mask = BoolTensor({1, 1, 1});
        ds.items.push_back(std::move(item));
    }
    return ds;
}

std::string SelfConsistencyReport::to_json() const {
    nlohmann::json j;
    j["passed"] = passed;
    j["mean_discrepancy"] = mean_discrepancy;
    j["baseline_discrepancy"] = baseline_discrepancy;
    j["tolerance"] = tolerance;
    return j.dump(2);
}

SelfConsistencyReport distilled_self_consistency_check(
    const ModelParams& student, const ModelParams& teacher, const GaussianMixturePrior& prior,
    const TrajectorySegmentation& seg, const NoiseSchedule& sched, double tolerance,
    int num_probes, uint64_t seed) {
    prior.validate();
    const int T = sched.num_timesteps;
    ModelParams baseline = init_model(student.config, Rng::mix(seed + 0xba5e));

    ConditionBundle cond;
    cond.null_conditioning = true;

    auto probe = [&](const ModelParams& model) {
        Rng rng(seed, /*stream=*/0x5e1f);
        double acc = 0;
        for (int p = 0; p < num_probes; ++p) {
            // x_{t_m} from a teacher trajectory: partial DDIM chain from T
            const int t_m = static_cast<int>(rng.uniform_int(2, T));
            const int o = segment_of(t_m, seg);
            const int s_o = seg.lower(o);
            const int t_n = static_cast<int>(rng.uniform_int(s_o, t_m - 1));

            Tensor x({1, prior.dim, 1, 1});
            for (auto& v : x.data) v = rng.normal();
            constexpr int kChainSteps = 6;
            int level = T;
            for (int i = 1; i <= kChainSteps; ++i) {
                int next = T - (T - t_m) * i / kChainSteps;
                if (next >= level) continue;
                auto [pred, feats] = raw_forward(teacher, x, level, cond, sched);
                Tensor x0h = teacher.config.target == PredictionTarget::epsilon
                                 ? x0_from_eps(x, pred, level, sched)
                                 : std::move(pred);
                x = ddim_step(x, x0h, level, next, sched);
                level = next;
            }

            // one solver step to t_n, exactly as in training
            auto [pred, feats] = raw_forward(teacher, x, t_m, cond, sched);
            Tensor x0h = teacher.config.target == PredictionTarget::epsilon
                             ? x0_from_eps(x, pred, t_m, sched)
                             : std::move(pred);
            Tensor x_hat = ddim_step(x, x0h, t_m, t_n, sched);

            ConditionBundle c = cond;
            c.segment_boundary = s_o;
            Tensor fm = consistency_function(model, x, t_m, s_o, c, sched);
            Tensor fn = consistency_function(model, x_hat, t_n, s_o, c, sched);
            double d = 0;
            for (int64_t k = 0; k < fm.numel(); ++k) d += std::abs(fm[k] - fn[k]);
            acc += d / static_cast<double>(fm.numel());
        }
        return acc / num_probes;
    };

    SelfConsistencyReport rep;
    rep.tolerance = tolerance;
    rep.mean_discrepancy = probe(student);
    rep.baseline_discrepancy = probe(baseline);
    rep.passed = rep.mean_discrepancy < tolerance &&
                 rep.mean_discrepancy < rep.baseline_discrepancy;
    return rep;
}

}  // namespace scd::oracle
