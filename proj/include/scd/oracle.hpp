// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "scd/distill.hpp"
#include "scd/schedule.hpp"

namespace scd::oracle {

// Diagonal Gaussian mixture used as a closed-form verification prior.
struct GaussianMixturePrior {
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> variances;  // diagonal, > 0
    std::vector<double> weights;                 // simplex
    int dim = 0;

    void validate() const;
    static GaussianMixturePrior single(std::vector<double> mean, std::vector<double> var);
};

std::vector<double> sample_prior(const GaussianMixturePrior& prior, Rng& rng);

// log p_t(x_t) of the diffused marginal at timestep t.
double log_marginal(const std::vector<double>& x_t, int t, const GaussianMixturePrior& prior,
                    const NoiseSchedule& sched);

// E[x0 | x_t] in closed form; responsibilities are computed in log space.
std::vector<double> ideal_denoiser(const std::vector<double>& x_t, int t,
                                   const GaussianMixturePrior& prior, const NoiseSchedule& sched);

// One DDIM step where the clean estimate comes from the ideal denoiser.
std::vector<double> oracle_ddim_step(const std::vector<double>& x_t, int t, int t_prev,
                                     const GaussianMixturePrior& prior,
                                     const NoiseSchedule& sched);

// W1 by sorted-sample mean absolute difference (equal sizes) or quantile
// interpolation otherwise.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

// Closed-form composition of the DDIM affine maps for a 1-d Gaussian prior:
// running the solver from T down to t gives x_t = sqrt(ab_t) m + gain * (x_T
// - sqrt(ab_T) m) + offset-free residual. Exact reference for the chain.
struct GaussianAffineMap {
    double gain = 1.0;  // multiplies (x_T - sqrt(ab_T) * m)
    double mean_t = 0.0;
};
GaussianAffineMap gaussian_chain_closed_form(double mean, double var, int steps, int down_to_t,
                                             const NoiseSchedule& sched);

struct SolverCheckReport {
    bool passed = false;
    double max_traj_rel_err = 0.0;    // chain vs closed-form affine composition
    double max_boundary_err = 0.0;    // coarse chain vs 10x finer chain
    double max_w1 = 0.0;              // endpoint distribution vs prior samples
    double worst_coordinate = 0.0;
    std::string detail;
    std::string to_json() const;
};

// Runs seeded DDIM chains with the ideal denoiser: (a) endpoint W1 per
// dimension against prior samples, (b) segment-boundary states against a 10x
// finer reference chain, and for single-Gaussian priors the exact affine
// composition.
SolverCheckReport solver_consistency_check(const GaussianMixturePrior& prior,
                                           const NoiseSchedule& sched, int steps, double tolerance,
                                           int num_seeds = 512, uint64_t seed = 0);

// Vector-task adapter: latents are [1, d, 1, 1] with null conditioning.
DenoiserConfig vector_task_config(int dim);
InMemoryDataset build_vector_dataset(const GaussianMixturePrior& prior, int n_items,
                                     uint64_t seed);
Tensor vector_to_latent(const std::vector<double>& x);
std::vector<double> latent_to_vector(const Tensor& t);

struct SelfConsistencyReport {
    bool passed = false;
    double mean_discrepancy = 0.0;
    double baseline_discrepancy = 0.0;  // same probe on a random-init model
    double tolerance = 0.0;
    std::string to_json() const;
};

// Probes f(x_{t_m}, t_m, s_o) against f(x_hat_{t_n}, t_n, s_o) on solver
// trajectories of the frozen teacher, comparing the trained student with a
// freshly initialized one.
SelfConsistencyReport distilled_self_consistency_check(
    const ModelParams& student, const ModelParams& teacher, const GaussianMixturePrior& prior,
    const TrajectorySegmentation& seg, const NoiseSchedule& sched, double tolerance,
    int num_probes = 256, uint64_t seed = 0);

}  // namespace scd::oracle
