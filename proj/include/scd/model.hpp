// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "scd/schedule.hpp"
#include "scd/tensor.hpp"

namespace scd {

enum class PredictionTarget { epsilon, x0 };

std::string to_string(PredictionTarget t);
PredictionTarget prediction_target_from_string(const std::string& s);

// Desk-scale spatiotemporal denoiser: residual 3x3 spatial convolutions with
// a depthwise temporal mixing layer per block, a shared time-conditioning
// vector (timestep + guidance scale + segment boundary embeddings) and a
// gated channel modulation driven by the face/reference features.
struct DenoiserConfig {
    int latent_channels = 3;
    int base_channels = 12;
    int num_blocks = 2;
    int temporal_kernel = 3;  // odd
    int time_embed_dim = 32;
    int face_feature_dim = 12;
    PredictionTarget target = PredictionTarget::epsilon;

    int in_channels() const { return 2 * latent_channels + 1; }
    int cond_dim() const { return face_feature_dim + latent_channels; }
    void validate() const;
    bool operator==(const DenoiserConfig&) const = default;
};

// Named parameter arrays with a stable iteration order.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
    std::unordered_map<std::string, int> index;

    Tensor& add(const std::string& name, std::vector<int> shape);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return index.count(name) > 0; }
    size_t size() const { return tensors.size(); }
    int64_t total_elements() const;
    ParamSet zeros_like() const;
};

struct ModelParams {
    DenoiserConfig config;
    ParamSet params;
};

struct ConditionBundle {
    Tensor reference_latent;           // [C, h, w]
    Tensor pose_latents;               // [F, 1, h, w]
    std::vector<double> face_feature;  // face_feature_dim
    GuidanceScale guidance;
    int segment_boundary = 0;
    bool null_conditioning = false;
};

ConditionBundle null_condition_like(const ConditionBundle& cond);

// Activation caches for one forward pass; reused for backward.
struct DenoiserWorkspace {
    Tensor input;          // [F, Cin, h, w]
    Tensor h0;             // after conv_in
    std::vector<double> cond_vec, gate_z, gate;  // modulation path
    std::vector<double> emb_t, emb_w, emb_s, pre_v, v;
    struct BlockCache {
        Tensor h_in, a1, c1, a2, tm, a3;
    };
    std::vector<BlockCache> blocks;
    Tensor h_final, features;
};

ModelParams init_model(const DenoiserConfig& cfg, uint64_t seed);

// Prediction (epsilon or x0 per config) and penultimate features. `ws` may be
// null when no backward pass will follow.
std::pair<Tensor, Tensor> raw_forward(const ModelParams& model, const Tensor& x_t, int t,
                                      const ConditionBundle& cond, const NoiseSchedule& sched,
                                      DenoiserWorkspace* ws = nullptr);

// Accumulates d(loss)/d(params) into `grads` given upstream gradients for the
// prediction and for the features (auxiliary-head path). Either may be empty.
void raw_backward(const ModelParams& model, const DenoiserWorkspace& ws, const Tensor& d_pred,
                  const Tensor& d_features, ParamSet& grads);

// Boundary coefficients of the consistency parameterization; exact identity
// at u = 0.
double c_skip(int u, int T);
double c_out(int u, int T);

struct ConsistencyResult {
    Tensor output;
    Tensor features;        // penultimate activations of the underlying forward
    double d_output_d_pred = 0.0;  // scalar chain factor onto the raw prediction
};

// Post-forward algebra of the consistency function for a given raw
// prediction: epsilon/x0 conversion, boundary blend, DDIM map to s_o. Also
// the path oracle checks use to feed an exact prediction through.
std::pair<Tensor, double> consistency_from_prediction(const Tensor& x_t, int t, int s_o,
                                                      const Tensor& prediction,
                                                      PredictionTarget target,
                                                      const NoiseSchedule& sched);

// f(x_t, t, s_o): blend c_skip * x_t + c_out * x0_hat, then one DDIM step to
// the segment boundary when s_o > 0. Identity at t == s_o.
Tensor consistency_function(const ModelParams& model, const Tensor& x_t, int t, int s_o,
                            const ConditionBundle& cond, const NoiseSchedule& sched);

// Same computation keeping the workspace and chain factor for training.
ConsistencyResult consistency_forward(const ModelParams& model, const Tensor& x_t, int t, int s_o,
                                      const ConditionBundle& cond, const NoiseSchedule& sched,
                                      DenoiserWorkspace& ws);

Tensor aux_head_predict(const ModelParams& model, const Tensor& features);
// d_aux -> gradients of the head, plus the feature gradient for raw_backward.
void aux_head_backward(const ModelParams& model, const Tensor& features, const Tensor& d_aux,
                       ParamSet& grads, Tensor& d_features);

// theta_minus <- mu * theta_minus + (1 - mu) * theta, per named array.
void ema_update(ModelParams& theta_minus, const ModelParams& theta, double mu);

std::vector<double> sinusoidal_embedding(double position, int dim);

}  // namespace scd
