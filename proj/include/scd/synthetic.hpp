// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scd/tensor.hpp"

namespace scd {

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct FaceBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool valid_in(int H, int W) const {
        return x0 >= 0 && y0 >= 0 && x1 <= W && y1 <= H && width() > 0 && height() > 0;
    }
};

// A toy animation clip: a body blob with a colored face disc following a
// smooth random walk, plus the rendered joint track used as pose conditioning.
struct VideoClip {
    int frames = 0;
    Tensor pixels;           // [F, C, H, W] in [0, 1]
    Tensor pose_map;         // [F, 1, H, W]
    Tensor reference_frame;  // [C, H, W] (copy of frame 0)
    FaceBox face_box;        // face location in the reference frame
    std::vector<FaceBox> face_track;  // per-frame face locations
    uint64_t seed = 0;

    int channels() const { return pixels.dim(1); }
    int height() const { return pixels.dim(2); }
    int width() const { return pixels.dim(3); }
};

VideoClip generate_clip(uint64_t seed, int F, int H, int W, double motion_amplitude = 1.0);

// Fixed linear stand-in for a pretrained VAE: average-pool encode,
// nearest-neighbour decode. Channels pass through unchanged.
struct ToyAutoencoder {
    int factor = 2;
};

struct LatentVideo {
    Tensor latents;  // [F, C, H/f, W/f]
};

LatentVideo encode_latent(const VideoClip& clip, const ToyAutoencoder& ae);

// Shared pooling kernels, usable for any [F, C, H, W] array (pose maps too).
Tensor avg_pool_frames(const Tensor& frames, int f);
Tensor nearest_upsample_frames(const Tensor& latents, int f);

// Pure linear inverse of encode; no clamping so linearity holds exactly.
Tensor decode_latent(const LatentVideo& lat, const ToyAutoencoder& ae);

// Directory layout: pixels.npy, pose.npy, reference.npy, meta.json.
void save_clip(const std::filesystem::path& dir, const VideoClip& clip);
VideoClip load_clip(const std::filesystem::path& dir);

}  // namespace scd
