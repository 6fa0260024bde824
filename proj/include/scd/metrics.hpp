// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "scd/conditioning.hpp"
#include "scd/model.hpp"
#include "scd/sampling.hpp"
#include "scd/synthetic.hpp"

namespace scd {

inline constexpr double kPsnrMseFloor = 1e-10;  // caps PSNR at 100 dB
inline constexpr int kDefaultFrechetDim = 12;

struct FrameMetrics {
    double l1 = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

// L1, capped PSNR and single-scale SSIM (7x7 uniform window) between two
// [F, C, H, W] pixel arrays in [0, 1].
FrameMetrics frame_metrics(const Tensor& pred, const Tensor& ref);

// FVD stand-in: Frechet distance between Gaussian fits of fixed seeded
// random spatiotemporal convolution features. Comparisons are only valid
// within one feature seed.
double frechet_feature_distance(const std::vector<VideoClip>& a, const std::vector<VideoClip>& b,
                                uint64_t feature_seed, int feature_dim = kDefaultFrechetDim);

// Mean cosine similarity between the per-frame face features of `pred`
// (cropped along the reference clip's face track) and the reference face
// feature. Zero-norm features score 0.
double face_identity_similarity(const VideoClip& pred, const VideoClip& ref,
                                const ToyAutoencoder& ae, int crop_size);

struct EvalReport {
    double l1 = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double frechet = 0.0;
    double identity = 0.0;
    int clip_count = 0;
    uint64_t feature_seed = 0;
    std::string config_digest;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
    // Aligned table in the L1 / PSNR / SSIM / Frechet / Identity column order.
    std::string table(const std::string& row_label) const;
};

struct EvalContext {
    NoiseSchedule sched;
    TrajectorySegmentation seg;
    ToyAutoencoder ae;
    int face_crop = kDefaultFaceCrop;
    uint64_t feature_seed = 7;
    int feature_dim = kDefaultFrechetDim;
    bool use_face = true;
    std::string config_digest;
    int threads = 0;
};

ConditionBundle condition_from_clip(const VideoClip& clip, const ToyAutoencoder& ae,
                                    int face_crop, bool use_face = true);

// Samples every eval clip's conditioning with multistep_sample, decodes and
// scores against the ground-truth clips.
EvalReport evaluate_suite(const ModelParams& model, const std::vector<VideoClip>& eval_set,
                          const SamplePlan& plan, const EvalContext& ctx);

// Decoded pixels clamped to [0,1], packaged with the reference clip's
// conditioning metadata so identity metrics can track the face.
VideoClip clip_from_latents(const LatentVideo& lat, const ToyAutoencoder& ae,
                            const VideoClip& like);

}  // namespace scd
