// SPDX-License-Identifier: Apache-2.0
#include "scd/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "scd/errors.hpp"
#include "scd/io.hpp"

namespace scd {

namespace {
constexpr double kPseudoHuberC = 0.03;
}

MotionMask compute_motion_mask(const VideoClip& clip, double delta) {
    const int F = clip.frames;
    if (F < 2) throw ArgumentError("compute_motion_mask: need at least 2 frames");
    if (delta <= 0.0) throw ArgumentError("compute_motion_mask: delta must be positive");
    const int C = clip.channels(), H = clip.height(), W = clip.width();

    MotionMask m;
    m.delta = delta;
    m.mask = BoolTensor({F, H, W});

    // channel-max |frame_t - frame_{t+1}| per pixel, computed once per pair
    std::vector<double> diff(static_cast<size_t>(F - 1) * H * W, 0.0);
    for (int t = 0; t + 1 < F; ++t) {
        double* d = diff.data() + static_cast<size_t>(t) * H * W;
        for (int c = 0; c < C; ++c) {
            const double* a = clip.pixels.ptr() +
                              ((static_cast<size_t>(t) * C + c) * H) * W;
            const double* b = clip.pixels.ptr() +
                              ((static_cast<size_t>(t + 1) * C + c) * H) * W;
            for (int k = 0; k < H * W; ++k) d[k] = std::max(d[k], std::abs(a[k] - b[k]));
        }
    }

    for (int t = 0; t < F; ++t)
        for (int k = 0; k < H * W; ++k) {
            const bool fwd = t + 1 < F && diff[static_cast<size_t>(t) * H * W + k] > delta;
            const bool bwd = t - 1 >= 0 && diff[static_cast<size_t>(t - 1) * H * W + k] > delta;
            m.mask.data[static_cast<size_t>(t) * H * W + k] = (fwd || bwd) ? 1 : 0;
        }
    return m;
}

BoolTensor project_mask_to_latent(const MotionMask& m, int f) {
    const int F = m.mask.dim(0), H = m.mask.dim(1), W = m.mask.dim(2);
    if (f < 1) throw ArgumentError("project_mask_to_latent: factor must be >= 1");
    if (H % f != 0 || W % f != 0)
        throw ArgumentError("project_mask_to_latent: H, W not divisible by factor");
    if (f == 1) return m.mask;
    BoolTensor out({F, H / f, W / f});
    for (int t = 0; t < F; ++t)
        for (int y = 0; y < H / f; ++y)
            for (int x = 0; x < W / f; ++x) {
                uint8_t any = 0;
                for (int dy = 0; dy < f && !any; ++dy)
                    for (int dx = 0; dx < f; ++dx)
                        if (m.mask.at3(t, y * f + dy, x * f + dx)) { any = 1; break; }
                out.at3(t, y, x) = any;
            }
    return out;
}

MotionMask compute_latent_motion_mask(const VideoClip& clip, double delta, int f) {
    MotionMask m = compute_motion_mask(clip, delta);
    m.latent_mask = project_mask_to_latent(m, f);
    return m;
}

namespace {

double point_distance(double d, DistanceKind kind) {
    if (kind == DistanceKind::squared) return d * d;
    return std::sqrt(d * d + kPseudoHuberC * kPseudoHuberC) - kPseudoHuberC;
}

double point_distance_grad(double d, DistanceKind kind) {
    if (kind == DistanceKind::squared) return 2.0 * d;
    return d / std::sqrt(d * d + kPseudoHuberC * kPseudoHuberC);
}

}  // namespace

double base_distance(const Tensor& pred, const Tensor& target, DistanceKind kind) {
    require_same_shape(pred, target, "base_distance");
    double s = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) s += point_distance(pred[i] - target[i], kind);
    return s / static_cast<double>(pred.numel());
}

double base_distance_backward(const Tensor& pred, const Tensor& target, DistanceKind kind,
                              double upstream, Tensor& grad_pred) {
    require_same_shape(pred, target, "base_distance_backward");
    require_same_shape(pred, grad_pred, "base_distance_backward");
    const double inv = upstream / static_cast<double>(pred.numel());
    double s = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - target[i];
        s += point_distance(d, kind);
        grad_pred[i] += inv * point_distance_grad(d, kind);
    }
    return s / static_cast<double>(pred.numel());
}

namespace {

// Shared core: mask is [F, h, w], latents are [F, C, h, w]; the masked term
// averages over masked cells times channels.
template <typename Fn>
double mwd_core(const Tensor& pred, const Tensor& target, const BoolTensor& latent_mask,
                double lambda1, DistanceKind kind, Fn&& per_entry) {
    require_same_shape(pred, target, "motion_weighted_distance");
    if (pred.ndim() != 4) throw ArgumentError("motion_weighted_distance: expected [F,C,h,w]");
    const int F = pred.dim(0), C = pred.dim(1), h = pred.dim(2), w = pred.dim(3);
    if (latent_mask.shape != std::vector<int>{F, h, w})
        throw ArgumentError("motion_weighted_distance: mask must be [F,h,w]");

    const int64_t n_all = pred.numel();
    const int64_t n_masked_cells = latent_mask.count();
    const int64_t n_masked = n_masked_cells * C;

    double sum_all = 0, sum_masked = 0;
    for (int t = 0; t < F; ++t)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double d = pred.at4(t, c, y, x) - target.at4(t, c, y, x);
                    const bool in_mask = latent_mask.at3(t, y, x) != 0;
                    sum_all += point_distance(d, kind);
                    if (in_mask) sum_masked += point_distance(d, kind);
                    per_entry(t, c, y, x, d, in_mask, n_all, n_masked);
                }
    double loss = sum_all / static_cast<double>(n_all);
    if (n_masked > 0) loss += lambda1 * sum_masked / static_cast<double>(n_masked);
    return loss;
}

}  // namespace

double motion_weighted_distance(const Tensor& pred, const Tensor& target,
                                const BoolTensor& latent_mask, double lambda1,
                                DistanceKind kind) {
    return mwd_core(pred, target, latent_mask, lambda1, kind,
                    [](int, int, int, int, double, bool, int64_t, int64_t) {});
}

double motion_weighted_distance_backward(const Tensor& pred, const Tensor& target,
                                         const BoolTensor& latent_mask, double lambda1,
                                         DistanceKind kind, double upstream, Tensor& grad_pred) {
    require_same_shape(pred, grad_pred, "motion_weighted_distance_backward");
    return mwd_core(pred, target, latent_mask, lambda1, kind,
                    [&](int t, int c, int y, int x, double d, bool in_mask, int64_t n_all,
                        int64_t n_masked) {
                        double g = point_distance_grad(d, kind) / static_cast<double>(n_all);
                        if (in_mask && n_masked > 0)
                            g += lambda1 * point_distance_grad(d, kind) /
                                 static_cast<double>(n_masked);
                        grad_pred.at4(t, c, y, x) += upstream * g;
                    });
}

Tensor bilinear_resize(const Tensor& chw, int out_h, int out_w) {
    if (chw.ndim() != 3) throw ArgumentError("bilinear_resize: expected [C,H,W]");
    const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    Tensor out({C, out_h, out_w});
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, H - 1.0);
                const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, W - 1.0);
                const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                const double wy = fy - y0, wx = fx - x0;
                out.at3(c, y, x) = (1 - wy) * ((1 - wx) * chw.at3(c, y0, x0) +
                                               wx * chw.at3(c, y0, x1)) +
                                   wy * ((1 - wx) * chw.at3(c, y1, x0) +
                                         wx * chw.at3(c, y1, x1));
            }
    return out;
}

FaceFeature extract_face_feature_at(const Tensor& frame, const FaceBox& box,
                                    const ToyAutoencoder& ae, int crop_size) {
    if (frame.ndim() != 3) throw ArgumentError("extract_face_feature: expected [C,H,W] frame");
    const int C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
    if (!box.valid_in(H, W)) throw ArgumentError("extract_face_feature: degenerate face box");
    if (crop_size < ae.factor || crop_size % ae.factor != 0)
        throw ArgumentError("extract_face_feature: crop size must be a positive multiple of f");

    Tensor crop({C, box.height(), box.width()});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < box.height(); ++y)
            for (int x = 0; x < box.width(); ++x)
                crop.at3(c, y, x) = frame.at3(c, box.y0 + y, box.x0 + x);

    Tensor resized = bilinear_resize(crop, crop_size, crop_size);
    Tensor as_frames({1, C, crop_size, crop_size});
    as_frames.data = resized.data;
    Tensor lat = avg_pool_frames(as_frames, ae.factor);

    // pool further to a fixed grid; feature dim = C * pool^2
    const int g = kFaceFeaturePool;
    const int lh = lat.dim(2), lw = lat.dim(3);
    if (lh % g != 0 || lw % g != 0)
        throw ArgumentError("extract_face_feature: encoded crop not divisible by pool grid");
    FaceFeature feat;
    feat.source_box = box;
    feat.crop_size = crop_size;
    feat.vector.assign(static_cast<size_t>(C) * g * g, 0.0);
    const int by = lh / g, bx = lw / g;
    for (int c = 0; c < C; ++c)
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                double s = 0;
                for (int y = 0; y < by; ++y)
                    for (int x = 0; x < bx; ++x) s += lat.at4(0, c, gy * by + y, gx * bx + x);
                feat.vector[(static_cast<size_t>(c) * g + gy) * g + gx] = s / (by * bx);
            }
    return feat;
}

FaceFeature extract_face_feature(const VideoClip& clip, const ToyAutoencoder& ae, int crop_size) {
    return extract_face_feature_at(clip.reference_frame, clip.face_box, ae, crop_size);
}

void export_mask_bitmaps(const MotionMask& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const int F = m.mask.dim(0), H = m.mask.dim(1), W = m.mask.dim(2);
    for (int t = 0; t < F; ++t) {
        Tensor img({H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) img.at2(y, x) = m.mask.at3(t, y, x) ? 1.0 : 0.0;
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.pgm", t);
        io::save_pgm(dir / name, img);
    }
}

}  // namespace scd
