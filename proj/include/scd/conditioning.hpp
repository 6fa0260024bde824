// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "scd/synthetic.hpp"
#include "scd/tensor.hpp"

namespace scd {

enum class DistanceKind { squared, pseudo_huber };

// Per-pixel motion indicator: a pixel is "moving" when its channel-max
// difference to either temporal neighbour exceeds delta. Edge frames use the
// single neighbour they have.
struct MotionMask {
    BoolTensor mask;         // [F, H, W]
    double delta = 0.2;
    BoolTensor latent_mask;  // [F, H/f, W/f], filled by project_mask_to_latent
};

inline constexpr double kDefaultMotionDelta = 0.2;
inline constexpr double kDefaultLambda1 = 0.5;

MotionMask compute_motion_mask(const VideoClip& clip, double delta = kDefaultMotionDelta);

// Latent cell is true iff any pixel in its f x f footprint is true.
BoolTensor project_mask_to_latent(const MotionMask& m, int f);

MotionMask compute_latent_motion_mask(const VideoClip& clip, double delta, int f);

// d(pred, target) + lambda1 * d over the masked entries, where d is a mean
// over the contributing entries. The mask is broadcast across channels.
double motion_weighted_distance(const Tensor& pred, const Tensor& target,
                                const BoolTensor& latent_mask, double lambda1,
                                DistanceKind kind = DistanceKind::squared);

// Same value plus d(loss)/d(pred) accumulated into grad_pred.
double motion_weighted_distance_backward(const Tensor& pred, const Tensor& target,
                                         const BoolTensor& latent_mask, double lambda1,
                                         DistanceKind kind, double upstream, Tensor& grad_pred);

// Plain (unmasked) base distance and its gradient; used by the auxiliary loss.
double base_distance(const Tensor& pred, const Tensor& target, DistanceKind kind);
double base_distance_backward(const Tensor& pred, const Tensor& target, DistanceKind kind,
                              double upstream, Tensor& grad_pred);

struct FaceFeature {
    std::vector<double> vector;
    FaceBox source_box;
    int crop_size = 0;
};

inline constexpr int kDefaultFaceCrop = 16;
// Pooled grid edge of the encoded face crop; feature dim = channels * pool^2.
inline constexpr int kFaceFeaturePool = 2;

// Crop the reference frame to the face box, bilinear-resize to
// crop_size x crop_size, encode with the toy autoencoder and average-pool to
// a fixed-dimension vector.
FaceFeature extract_face_feature(const VideoClip& clip, const ToyAutoencoder& ae,
                                 int crop_size = kDefaultFaceCrop);

// Same pipeline applied to an arbitrary frame/box; lets the identity metric
// track a moving face.
FaceFeature extract_face_feature_at(const Tensor& frame, const FaceBox& box,
                                    const ToyAutoencoder& ae, int crop_size);

Tensor bilinear_resize(const Tensor& chw, int out_h, int out_w);

// One PGM per frame: frame_000.pgm, frame_001.pgm, ...
void export_mask_bitmaps(const MotionMask& m, const std::filesystem::path& dir);

}  // namespace scd
