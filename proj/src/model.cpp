// SPDX-License-Identifier: Apache-2.0
#include "scd/model.hpp"

#include <algorithm>
#include <cmath>

#include "scd/errors.hpp"
#include "scd/rng.hpp"

namespace scd {

std::string to_string(PredictionTarget t) { return t == PredictionTarget::epsilon ? "epsilon" : "x0"; }

PredictionTarget prediction_target_from_string(const std::string& s) {
    if (s == "epsilon") return PredictionTarget::epsilon;
    if (s == "x0") return PredictionTarget::x0;
    throw ConfigError("unknown prediction target: " + s);
}

void DenoiserConfig::validate() const {
    if (latent_channels < 1 || base_channels < 1 || num_blocks < 1 || time_embed_dim < 4 ||
        face_feature_dim < 1)
        throw ConfigError("DenoiserConfig: all dimensions must be positive");
    if (temporal_kernel < 1 || temporal_kernel % 2 == 0)
        throw ConfigError("DenoiserConfig: temporal kernel width must be odd");
    if (time_embed_dim % 2 != 0) throw ConfigError("DenoiserConfig: time embed dim must be even");
}

Tensor& ParamSet::add(const std::string& name, std::vector<int> shape) {
    if (index.count(name)) throw ConfigError("ParamSet: duplicate name " + name);
    index[name] = static_cast<int>(tensors.size());
    names.push_back(name);
    tensors.emplace_back(std::move(shape));
    return tensors.back();
}

Tensor& ParamSet::get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("ParamSet: missing name " + name);
    return tensors[static_cast<size_t>(it->second)];
}

const Tensor& ParamSet::get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("ParamSet: missing name " + name);
    return tensors[static_cast<size_t>(it->second)];
}

int64_t ParamSet::total_elements() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet z;
    for (size_t i = 0; i < tensors.size(); ++i) z.add(names[i], tensors[i].shape);
    return z;
}

namespace {

double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill_normal(Tensor& t, Rng rng, double scale) {
    for (auto& v : t.data) v = scale * rng.normal();
}

// ---- spatial 3x3 convolution over [F, C, H, W], zero padding ----

void conv3x3_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const int F = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int Co = w.dim(0);
    for (int f = 0; f < F; ++f)
        for (int oc = 0; oc < Co; ++oc) {
            double* op = &out.at4(f, oc, 0, 0);
            const double bias = b[oc];
            for (int k = 0; k < H * W; ++k) op[k] = bias;
            for (int ic = 0; ic < Ci; ++ic) {
                const double* ip = &in.at4(f, ic, 0, 0);
                const double* wp = &w.at4(oc, ic, 0, 0);
                for (int dy = 0; dy < 3; ++dy)
                    for (int dx = 0; dx < 3; ++dx) {
                        const double wv = wp[dy * 3 + dx];
                        if (wv == 0.0) continue;
                        const int oy0 = std::max(0, 1 - dy), oy1 = std::min(H, H + 1 - dy);
                        const int ox0 = std::max(0, 1 - dx), ox1 = std::min(W, W + 1 - dx);
                        for (int y = oy0; y < oy1; ++y) {
                            double* orow = op + y * W;
                            const double* irow = ip + (y + dy - 1) * W + (dx - 1);
                            for (int x = ox0; x < ox1; ++x) orow[x] += wv * irow[x];
                        }
                    }
            }
        }
}

void conv3x3_backward(const Tensor& in, const Tensor& w, const Tensor& d_out, Tensor& gw,
                      Tensor& gb, Tensor* d_in) {
    const int F = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int Co = w.dim(0);
    for (int f = 0; f < F; ++f)
        for (int oc = 0; oc < Co; ++oc) {
            const double* dop = &d_out.at4(f, oc, 0, 0);
            double gbs = 0;
            for (int k = 0; k < H * W; ++k) gbs += dop[k];
            gb[oc] += gbs;
            for (int ic = 0; ic < Ci; ++ic) {
                const double* ip = &in.at4(f, ic, 0, 0);
                double* gwp = &gw.at4(oc, ic, 0, 0);
                const double* wp = &w.at4(oc, ic, 0, 0);
                double* dip = d_in ? &d_in->at4(f, ic, 0, 0) : nullptr;
                for (int dy = 0; dy < 3; ++dy)
                    for (int dx = 0; dx < 3; ++dx) {
                        const int oy0 = std::max(0, 1 - dy), oy1 = std::min(H, H + 1 - dy);
                        const int ox0 = std::max(0, 1 - dx), ox1 = std::min(W, W + 1 - dx);
                        double acc = 0;
                        const double wv = wp[dy * 3 + dx];
                        for (int y = oy0; y < oy1; ++y) {
                            const double* drow = dop + y * W;
                            const double* irow = ip + (y + dy - 1) * W + (dx - 1);
                            double* girow = dip ? dip + (y + dy - 1) * W + (dx - 1) : nullptr;
                            for (int x = ox0; x < ox1; ++x) {
                                acc += drow[x] * irow[x];
                                if (girow) girow[x] += wv * drow[x];
                            }
                        }
                        gwp[dy * 3 + dx] += acc;
                    }
            }
        }
}

// ---- depthwise temporal convolution over the frame axis ----

void tconv_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const int F = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int K = w.dim(1), off = K / 2;
    for (int f = 0; f < F; ++f)
        for (int c = 0; c < C; ++c) {
            double* op = &out.at4(f, c, 0, 0);
            const double bias = b[c];
            for (int k = 0; k < H * W; ++k) op[k] = bias;
            for (int k = 0; k < K; ++k) {
                const int fs = f + k - off;
                if (fs < 0 || fs >= F) continue;
                const double wv = w.at2(c, k);
                const double* ip = &in.at4(fs, c, 0, 0);
                for (int p = 0; p < H * W; ++p) op[p] += wv * ip[p];
            }
        }
}

void tconv_backward(const Tensor& in, const Tensor& w, const Tensor& d_out, Tensor& gw, Tensor& gb,
                    Tensor& d_in) {
    const int F = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const int K = w.dim(1), off = K / 2;
    for (int f = 0; f < F; ++f)
        for (int c = 0; c < C; ++c) {
            const double* dop = &d_out.at4(f, c, 0, 0);
            double gbs = 0;
            for (int p = 0; p < H * W; ++p) gbs += dop[p];
            gb[c] += gbs;
            for (int k = 0; k < K; ++k) {
                const int fs = f + k - off;
                if (fs < 0 || fs >= F) continue;
                const double* ip = &in.at4(fs, c, 0, 0);
                double* dip = &d_in.at4(fs, c, 0, 0);
                const double wv = w.at2(c, k);
                double acc = 0;
                for (int p = 0; p < H * W; ++p) {
                    acc += dop[p] * ip[p];
                    dip[p] += wv * dop[p];
                }
                gw.at2(c, k) += acc;
            }
        }
}

std::string block_name(int b, const char* part) {
    return "block" + std::to_string(b) + "." + part;
}

}  // namespace

std::vector<double> sinusoidal_embedding(double position, int dim) {
    std::vector<double> e(static_cast<size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        e[static_cast<size_t>(i)] = std::sin(position * freq);
        e[static_cast<size_t>(half + i)] = std::cos(position * freq);
    }
    return e;
}

ModelParams init_model(const DenoiserConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams m;
    m.config = cfg;
    ParamSet& p = m.params;
    const int Cb = cfg.base_channels, Ci = cfg.in_channels(), Cl = cfg.latent_channels;
    const int D = cfg.time_embed_dim, Kt = cfg.temporal_kernel, Dg = cfg.cond_dim();
    Rng root(seed, /*stream=*/0xd0e5);

    auto init = [&](const std::string& name, std::vector<int> shape, double scale) {
        Tensor& t = p.add(name, std::move(shape));
        if (scale > 0) fill_normal(t, root.fork(name), scale);
    };

    init("conv_in.w", {Cb, Ci, 3, 3}, std::sqrt(2.0 / (Ci * 9)));
    init("conv_in.b", {Cb}, 0.0);
    init("time.w_t", {D, D}, 1.0 / std::sqrt(D));
    init("time.b_t", {D}, 0.02);
    init("time.w_guidance", {D, D}, 1.0 / std::sqrt(D));
    init("time.w_boundary", {D, D}, 1.0 / std::sqrt(D));
    init("gate.w", {Cb, Dg}, 0.5 / std::sqrt(Dg));
    init("gate.b", {Cb}, 0.0);
    for (int b = 0; b < cfg.num_blocks; ++b) {
        init(block_name(b, "conv1.w"), {Cb, Cb, 3, 3}, std::sqrt(2.0 / (Cb * 9)));
        init(block_name(b, "conv1.b"), {Cb}, 0.0);
        init(block_name(b, "temb.w"), {Cb, D}, 0.5 / std::sqrt(D));
        init(block_name(b, "tmix.w"), {Cb, Kt}, std::sqrt(1.0 / Kt));
        init(block_name(b, "tmix.b"), {Cb}, 0.0);
        init(block_name(b, "conv2.w"), {Cb, Cb, 3, 3}, 0.3 * std::sqrt(2.0 / (Cb * 9)));
        init(block_name(b, "conv2.b"), {Cb}, 0.0);
    }
    init("conv_out.w", {Cl, Cb, 3, 3}, 0.3 * std::sqrt(2.0 / (Cb * 9)));
    init("conv_out.b", {Cl}, 0.0);
    init("aux.w", {Cl, Cb}, 0.3 / std::sqrt(Cb));
    init("aux.b", {Cl}, 0.0);
    return m;
}

ConditionBundle null_condition_like(const ConditionBundle& cond) {
    ConditionBundle n = cond;
    n.null_conditioning = true;
    return n;
}

namespace {

// Scale applied to the guidance value before the sinusoidal bank so the
// [1, w_max] range spreads across frequencies.
constexpr double kGuidanceEmbedScale = 250.0;

void check_forward_args(const ModelParams& model, const Tensor& x_t, int t,
                        const ConditionBundle& cond, const NoiseSchedule& sched) {
    const DenoiserConfig& cfg = model.config;
    if (x_t.ndim() != 4 || x_t.dim(1) != cfg.latent_channels)
        throw ArgumentError("raw_forward: latent shape " + x_t.shape_str() +
                            " incompatible with config");
    if (t < 0 || t > sched.num_timesteps) throw ArgumentError("raw_forward: t out of range");
    if (!cond.null_conditioning) {
        if (cond.reference_latent.shape != std::vector<int>{cfg.latent_channels, x_t.dim(2), x_t.dim(3)})
            throw ArgumentError("raw_forward: reference latent shape mismatch");
        if (cond.pose_latents.shape != std::vector<int>{x_t.dim(0), 1, x_t.dim(2), x_t.dim(3)})
            throw ArgumentError("raw_forward: pose latent shape mismatch");
        if (static_cast<int>(cond.face_feature.size()) != cfg.face_feature_dim)
            throw ArgumentError("raw_forward: face feature dim mismatch");
    }
}

}  // namespace

std::pair<Tensor, Tensor> raw_forward(const ModelParams& model, const Tensor& x_t, int t,
                                      const ConditionBundle& cond, const NoiseSchedule& sched,
                                      DenoiserWorkspace* ws) {
    check_forward_args(model, x_t, t, cond, sched);
    const DenoiserConfig& cfg = model.config;
    const ParamSet& p = model.params;
    const int F = x_t.dim(0), C = cfg.latent_channels, H = x_t.dim(2), W = x_t.dim(3);
    const int Cb = cfg.base_channels, D = cfg.time_embed_dim;

    DenoiserWorkspace local;
    DenoiserWorkspace& c = ws ? *ws : local;

    // input assembly: [x_t | pose | broadcast reference]
    c.input = Tensor({F, cfg.in_channels(), H, W});
    const bool null_c = cond.null_conditioning;
    for (int f = 0; f < F; ++f) {
        for (int ch = 0; ch < C; ++ch)
            for (int k = 0; k < H * W; ++k)
                c.input.data[((static_cast<size_t>(f) * cfg.in_channels() + ch) * H * W) + k] =
                    x_t.data[((static_cast<size_t>(f) * C + ch) * H * W) + k];
        if (!null_c) {
            for (int k = 0; k < H * W; ++k)
                c.input.data[((static_cast<size_t>(f) * cfg.in_channels() + C) * H * W) + k] =
                    cond.pose_latents.data[(static_cast<size_t>(f) * H * W) + k];
            for (int ch = 0; ch < C; ++ch)
                for (int k = 0; k < H * W; ++k)
                    c.input.data[((static_cast<size_t>(f) * cfg.in_channels() + C + 1 + ch) * H * W) + k] =
                        cond.reference_latent.data[(static_cast<size_t>(ch) * H * W) + k];
        }
    }

    // time-conditioning vector: projected sinusoids of t, w and s_o
    c.emb_t = sinusoidal_embedding(static_cast<double>(t), D);
    c.emb_w = sinusoidal_embedding(cond.guidance.w * kGuidanceEmbedScale, D);
    c.emb_s = sinusoidal_embedding(static_cast<double>(cond.segment_boundary), D);
    c.pre_v.assign(static_cast<size_t>(D), 0.0);
    const Tensor& wt = p.get("time.w_t");
    const Tensor& wg = p.get("time.w_guidance");
    const Tensor& wsb = p.get("time.w_boundary");
    const Tensor& bt = p.get("time.b_t");
    for (int i = 0; i < D; ++i) {
        double s = bt[i];
        for (int j = 0; j < D; ++j)
            s += wt.at2(i, j) * c.emb_t[static_cast<size_t>(j)] +
                 wg.at2(i, j) * c.emb_w[static_cast<size_t>(j)] +
                 wsb.at2(i, j) * c.emb_s[static_cast<size_t>(j)];
        c.pre_v[static_cast<size_t>(i)] = s;
    }
    c.v.resize(static_cast<size_t>(D));
    for (int i = 0; i < D; ++i) c.v[static_cast<size_t>(i)] = silu(c.pre_v[static_cast<size_t>(i)]);

    // gated channel modulation from [face | pooled reference]
    c.cond_vec.assign(static_cast<size_t>(cfg.cond_dim()), 0.0);
    if (!null_c) {
        for (int i = 0; i < cfg.face_feature_dim; ++i)
            c.cond_vec[static_cast<size_t>(i)] = cond.face_feature[static_cast<size_t>(i)];
        for (int ch = 0; ch < C; ++ch) {
            double s = 0;
            for (int k = 0; k < H * W; ++k)
                s += cond.reference_latent.data[(static_cast<size_t>(ch) * H * W) + k];
            c.cond_vec[static_cast<size_t>(cfg.face_feature_dim + ch)] = s / (H * W);
        }
    }
    c.gate_z.assign(static_cast<size_t>(Cb), 0.0);
    c.gate.assign(static_cast<size_t>(Cb), 0.0);
    const Tensor& gw = p.get("gate.w");
    const Tensor& gb = p.get("gate.b");
    for (int i = 0; i < Cb; ++i) {
        double s = gb[i];
        for (int j = 0; j < cfg.cond_dim(); ++j) s += gw.at2(i, j) * c.cond_vec[static_cast<size_t>(j)];
        c.gate_z[static_cast<size_t>(i)] = s;
        c.gate[static_cast<size_t>(i)] = 2.0 * sigmoid(s);  // unit gain at zero
    }

    c.h0 = Tensor({F, Cb, H, W});
    conv3x3_forward(c.input, p.get("conv_in.w"), p.get("conv_in.b"), c.h0);

    Tensor h({F, Cb, H, W});
    for (int f = 0; f < F; ++f)
        for (int ch = 0; ch < Cb; ++ch) {
            const double g = c.gate[static_cast<size_t>(ch)];
            const double* src = &c.h0.at4(f, ch, 0, 0);
            double* dst = &h.at4(f, ch, 0, 0);
            for (int k = 0; k < H * W; ++k) dst[k] = g * src[k];
        }

    c.blocks.assign(static_cast<size_t>(cfg.num_blocks), {});
    for (int b = 0; b < cfg.num_blocks; ++b) {
        auto& bc = c.blocks[static_cast<size_t>(b)];
        bc.h_in = h;
        bc.a1 = Tensor(h.shape);
        for (int64_t k = 0; k < h.numel(); ++k) bc.a1[k] = silu(h[k]);

        bc.c1 = Tensor(h.shape);
        conv3x3_forward(bc.a1, p.get(block_name(b, "conv1.w")), p.get(block_name(b, "conv1.b")),
                        bc.c1);
        const Tensor& temb = p.get(block_name(b, "temb.w"));
        for (int ch = 0; ch < Cb; ++ch) {
            double tb = 0;
            for (int j = 0; j < D; ++j) tb += temb.at2(ch, j) * c.v[static_cast<size_t>(j)];
            for (int f = 0; f < F; ++f) {
                double* row = &bc.c1.at4(f, ch, 0, 0);
                for (int k = 0; k < H * W; ++k) row[k] += tb;
            }
        }

        bc.a2 = Tensor(h.shape);
        for (int64_t k = 0; k < h.numel(); ++k) bc.a2[k] = silu(bc.c1[k]);

        bc.tm = Tensor(h.shape);
        tconv_forward(bc.a2, p.get(block_name(b, "tmix.w")), p.get(block_name(b, "tmix.b")), bc.tm);

        bc.a3 = Tensor(h.shape);
        for (int64_t k = 0; k < h.numel(); ++k) bc.a3[k] = silu(bc.tm[k]);

        Tensor c2(h.shape);
        conv3x3_forward(bc.a3, p.get(block_name(b, "conv2.w")), p.get(block_name(b, "conv2.b")),
                        c2);
        for (int64_t k = 0; k < h.numel(); ++k) h[k] = bc.h_in[k] + c2[k];
    }

    c.h_final = h;
    c.features = Tensor(h.shape);
    for (int64_t k = 0; k < h.numel(); ++k) c.features[k] = silu(h[k]);

    Tensor pred({F, C, H, W});
    conv3x3_forward(c.features, p.get("conv_out.w"), p.get("conv_out.b"), pred);
    return {std::move(pred), c.features};
}

void raw_backward(const ModelParams& model, const DenoiserWorkspace& c, const Tensor& d_pred,
                  const Tensor& d_features, ParamSet& grads) {
    const DenoiserConfig& cfg = model.config;
    const ParamSet& p = model.params;
    const int F = c.h_final.dim(0), Cb = cfg.base_channels, H = c.h_final.dim(2),
              W = c.h_final.dim(3);
    const int D = cfg.time_embed_dim;

    Tensor d_feat(c.features.shape);
    if (d_features.numel() > 0) {
        require_same_shape(d_features, d_feat, "raw_backward");
        d_feat.data = d_features.data;
    }
    if (d_pred.numel() > 0)
        conv3x3_backward(c.features, p.get("conv_out.w"), d_pred, grads.get("conv_out.w"),
                         grads.get("conv_out.b"), &d_feat);

    Tensor d_h(c.h_final.shape);
    for (int64_t k = 0; k < d_h.numel(); ++k) d_h[k] = d_feat[k] * silu_grad(c.h_final[k]);

    std::vector<double> d_v(static_cast<size_t>(D), 0.0);

    for (int b = cfg.num_blocks - 1; b >= 0; --b) {
        const auto& bc = c.blocks[static_cast<size_t>(b)];
        // residual branch input gradient is d_h itself
        Tensor d_a3(d_h.shape);
        conv3x3_backward(bc.a3, p.get(block_name(b, "conv2.w")), d_h,
                         grads.get(block_name(b, "conv2.w")), grads.get(block_name(b, "conv2.b")),
                         &d_a3);
        Tensor d_tm(d_h.shape);
        for (int64_t k = 0; k < d_h.numel(); ++k) d_tm[k] = d_a3[k] * silu_grad(bc.tm[k]);

        Tensor d_a2(d_h.shape);
        tconv_backward(bc.a2, p.get(block_name(b, "tmix.w")), d_tm,
                       grads.get(block_name(b, "tmix.w")), grads.get(block_name(b, "tmix.b")),
                       d_a2);

        Tensor d_c1(d_h.shape);
        for (int64_t k = 0; k < d_h.numel(); ++k) d_c1[k] = d_a2[k] * silu_grad(bc.c1[k]);

        // time bias: per-channel sum feeds the temb projection
        Tensor& g_temb = grads.get(block_name(b, "temb.w"));
        const Tensor& temb = p.get(block_name(b, "temb.w"));
        for (int ch = 0; ch < Cb; ++ch) {
            double s = 0;
            for (int f = 0; f < F; ++f) {
                const double* row = &d_c1.at4(f, ch, 0, 0);
                for (int k = 0; k < H * W; ++k) s += row[k];
            }
            for (int j = 0; j < D; ++j) {
                g_temb.at2(ch, j) += s * c.v[static_cast<size_t>(j)];
                d_v[static_cast<size_t>(j)] += s * temb.at2(ch, j);
            }
        }

        Tensor d_a1(d_h.shape);
        conv3x3_backward(bc.a1, p.get(block_name(b, "conv1.w")), d_c1,
                         grads.get(block_name(b, "conv1.w")), grads.get(block_name(b, "conv1.b")),
                         &d_a1);
        for (int64_t k = 0; k < d_h.numel(); ++k)
            d_h[k] = d_h[k] + d_a1[k] * silu_grad(bc.h_in[k]);
    }

    // gate modulation: h = gate[c] * h0
    Tensor d_h0(d_h.shape);
    std::vector<double> d_gate(static_cast<size_t>(Cb), 0.0);
    for (int f = 0; f < F; ++f)
        for (int ch = 0; ch < Cb; ++ch) {
            const double g = c.gate[static_cast<size_t>(ch)];
            const double* dh = &d_h.at4(f, ch, 0, 0);
            const double* h0p = &c.h0.at4(f, ch, 0, 0);
            double* d0 = &d_h0.at4(f, ch, 0, 0);
            double acc = 0;
            for (int k = 0; k < H * W; ++k) {
                d0[k] = g * dh[k];
                acc += dh[k] * h0p[k];
            }
            d_gate[static_cast<size_t>(ch)] += acc;
        }
    Tensor& g_gw = grads.get("gate.w");
    Tensor& g_gb = grads.get("gate.b");
    for (int ch = 0; ch < Cb; ++ch) {
        const double z = c.gate_z[static_cast<size_t>(ch)];
        const double s = sigmoid(z);
        const double dz = d_gate[static_cast<size_t>(ch)] * 2.0 * s * (1.0 - s);
        g_gb[ch] += dz;
        for (int j = 0; j < cfg.cond_dim(); ++j)
            g_gw.at2(ch, j) += dz * c.cond_vec[static_cast<size_t>(j)];
    }

    conv3x3_backward(c.input, p.get("conv_in.w"), d_h0, grads.get("conv_in.w"),
                     grads.get("conv_in.b"), nullptr);

    // time-conditioning vector
    Tensor& g_wt = grads.get("time.w_t");
    Tensor& g_wg = grads.get("time.w_guidance");
    Tensor& g_wsb = grads.get("time.w_boundary");
    Tensor& g_bt = grads.get("time.b_t");
    for (int i = 0; i < D; ++i) {
        const double dpre = d_v[static_cast<size_t>(i)] * silu_grad(c.pre_v[static_cast<size_t>(i)]);
        g_bt[i] += dpre;
        for (int j = 0; j < D; ++j) {
            g_wt.at2(i, j) += dpre * c.emb_t[static_cast<size_t>(j)];
            g_wg.at2(i, j) += dpre * c.emb_w[static_cast<size_t>(j)];
            g_wsb.at2(i, j) += dpre * c.emb_s[static_cast<size_t>(j)];
        }
    }
}

double c_skip(int u, int T) {
    const double sigma_d = 0.5;
    const double us = u * (10.0 / T);
    return sigma_d * sigma_d / (us * us + sigma_d * sigma_d);
}

double c_out(int u, int T) {
    const double sigma_d = 0.5;
    const double us = u * (10.0 / T);
    return us / std::sqrt(us * us + sigma_d * sigma_d);
}

std::pair<Tensor, double> consistency_from_prediction(const Tensor& x_t, int t, int s_o,
                                                      const Tensor& prediction,
                                                      PredictionTarget target,
                                                      const NoiseSchedule& sched) {
    const int T = sched.num_timesteps;
    const double cs = c_skip(t - s_o, T);
    const double co = c_out(t - s_o, T);
    const double ab_t = sched.ab(t);
    const double sq_t = std::sqrt(ab_t), sig_t = std::sqrt(1.0 - ab_t);

    // x0_hat from the configured prediction target
    double dx0_dpred;
    Tensor x0_hat(x_t.shape);
    if (target == PredictionTarget::epsilon) {
        for (int64_t k = 0; k < x_t.numel(); ++k)
            x0_hat[k] = (x_t[k] - sig_t * prediction[k]) / sq_t;
        dx0_dpred = -sig_t / sq_t;
    } else {
        x0_hat = prediction;
        dx0_dpred = 1.0;
    }

    Tensor blend(x_t.shape);
    for (int64_t k = 0; k < x_t.numel(); ++k) blend[k] = cs * x_t[k] + co * x0_hat[k];

    if (s_o == 0) return {std::move(blend), co * dx0_dpred};

    Tensor out = ddim_step(x_t, blend, t, s_o, sched);
    const double ab_s = sched.ab(s_o);
    const double ratio = std::sqrt(1.0 - ab_s) / sig_t;
    const double B = std::sqrt(ab_s) - sq_t * ratio;  // d out / d blend
    return {std::move(out), B * co * dx0_dpred};
}

ConsistencyResult consistency_forward(const ModelParams& model, const Tensor& x_t, int t, int s_o,
                                      const ConditionBundle& cond, const NoiseSchedule& sched,
                                      DenoiserWorkspace& ws) {
    if (s_o > t) throw ArgumentError("consistency_function: s_o > t");
    ConsistencyResult res;
    if (t == s_o) {
        // exact identity at the segment boundary; no forward pass involved
        res.output = x_t;
        res.d_output_d_pred = 0.0;
        return res;
    }

    auto [pred, feats] = raw_forward(model, x_t, t, cond, sched, &ws);
    res.features = feats;
    auto [out, factor] =
        consistency_from_prediction(x_t, t, s_o, pred, model.config.target, sched);
    res.output = std::move(out);
    res.d_output_d_pred = factor;
    return res;
}

Tensor consistency_function(const ModelParams& model, const Tensor& x_t, int t, int s_o,
                            const ConditionBundle& cond, const NoiseSchedule& sched) {
    DenoiserWorkspace ws;
    return consistency_forward(model, x_t, t, s_o, cond, sched, ws).output;
}

Tensor aux_head_predict(const ModelParams& model, const Tensor& features) {
    const DenoiserConfig& cfg = model.config;
    if (features.ndim() != 4 || features.dim(1) != cfg.base_channels)
        throw ArgumentError("aux_head_predict: feature shape mismatch");
    const int F = features.dim(0), H = features.dim(2), W = features.dim(3);
    const Tensor& w = model.params.get("aux.w");
    const Tensor& b = model.params.get("aux.b");
    Tensor out({F, cfg.latent_channels, H, W});
    for (int f = 0; f < F; ++f)
        for (int oc = 0; oc < cfg.latent_channels; ++oc) {
            double* op = &out.at4(f, oc, 0, 0);
            for (int k = 0; k < H * W; ++k) op[k] = b[oc];
            for (int ic = 0; ic < cfg.base_channels; ++ic) {
                const double wv = w.at2(oc, ic);
                const double* ip = &features.at4(f, ic, 0, 0);
                for (int k = 0; k < H * W; ++k) op[k] += wv * ip[k];
            }
        }
    return out;
}

void aux_head_backward(const ModelParams& model, const Tensor& features, const Tensor& d_aux,
                       ParamSet& grads, Tensor& d_features) {
    const DenoiserConfig& cfg = model.config;
    const int F = features.dim(0), H = features.dim(2), W = features.dim(3);
    const Tensor& w = model.params.get("aux.w");
    Tensor& gw = grads.get("aux.w");
    Tensor& gb = grads.get("aux.b");
    for (int f = 0; f < F; ++f)
        for (int oc = 0; oc < cfg.latent_channels; ++oc) {
            const double* dp = &d_aux.at4(f, oc, 0, 0);
            double s = 0;
            for (int k = 0; k < H * W; ++k) s += dp[k];
            gb[oc] += s;
            for (int ic = 0; ic < cfg.base_channels; ++ic) {
                const double* ip = &features.at4(f, ic, 0, 0);
                double* dfp = &d_features.at4(f, ic, 0, 0);
                const double wv = w.at2(oc, ic);
                double acc = 0;
                for (int k = 0; k < H * W; ++k) {
                    acc += dp[k] * ip[k];
                    dfp[k] += wv * dp[k];
                }
                gw.at2(oc, ic) += acc;
            }
        }
}

void ema_update(ModelParams& theta_minus, const ModelParams& theta, double mu) {
    if (mu < 0.0 || mu >= 1.0) throw ArgumentError("ema_update: mu must be in [0, 1)");
    if (theta_minus.params.size() != theta.params.size())
        throw ArgumentError("ema_update: parameter sets differ");
    for (size_t i = 0; i < theta.params.size(); ++i) {
        if (theta_minus.params.names[i] != theta.params.names[i])
            throw ArgumentError("ema_update: name mismatch at slot " + std::to_string(i));
        Tensor& a = theta_minus.params.tensors[i];
        const Tensor& b = theta.params.tensors[i];
        require_same_shape(a, b, "ema_update");
        for (int64_t k = 0; k < a.numel(); ++k) a[k] = mu * a[k] + (1.0 - mu) * b[k];
    }
}

}  // namespace scd
