// SPDX-License-Identifier: Apache-2.0
#include "scd/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "scd/errors.hpp"
#include "scd/io.hpp"
#include "scd/rng.hpp"

namespace scd {

namespace {

struct Vec2 {
    double x = 0, y = 0;
};

// Soft-edged disc coverage: 1 inside, antialiased over a one-pixel band.
double disc_coverage(double px, double py, double cx, double cy, double r) {
    const double d = std::hypot(px - cx, py - cy);
    return std::clamp(r + 0.5 - d, 0.0, 1.0);
}

void paint_disc(Tensor& frame, double cx, double cy, double r, const double rgb[3]) {
    const int C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + r + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + r + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double a = disc_coverage(x, y, cx, cy, r);
            if (a <= 0.0) continue;
            for (int c = 0; c < C; ++c) {
                double& v = frame.at3(c, y, x);
                v = (1.0 - a) * v + a * rgb[std::min(c, 2)];
            }
        }
}

void paint_dot(Tensor& pose_frame, double cx, double cy, double r, double intensity) {
    const int H = pose_frame.dim(1), W = pose_frame.dim(2);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + r + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + r + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double a = disc_coverage(x, y, cx, cy, r);
            if (a > 0.0) pose_frame.at3(0, y, x) = std::max(pose_frame.at3(0, y, x), a * intensity);
        }
}

FaceBox box_around(double cx, double cy, double r, int H, int W) {
    FaceBox b;
    b.x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    b.y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    b.x1 = std::min(W, static_cast<int>(std::ceil(cx + r + 1)) + 1);
    b.y1 = std::min(H, static_cast<int>(std::ceil(cy + r + 1)) + 1);
    return b;
}

}  // namespace

VideoClip generate_clip(uint64_t seed, int F, int H, int W, double motion_amplitude) {
    if (F < 2) throw ConfigError("generate_clip: need at least 2 frames");
    if (H < 16 || W < 16) throw ConfigError("generate_clip: frames smaller than 16x16");
    const int C = 3;

    Rng root(seed, /*stream=*/0x5ca1ab1e);
    Rng color_rng = root.fork("colors");
    Rng traj_rng = root.fork("trajectory");

    // Per-seed identity: a body color plus three face sector colors.
    double body_rgb[3], face_rgb[3][3];
    for (double& v : body_rgb) v = color_rng.uniform(0.35, 0.85);
    for (auto& sector : face_rgb)
        for (double& v : sector) v = color_rng.uniform(0.15, 0.95);

    const double body_r = 0.19 * std::min(H, W);
    const double face_r = 0.105 * std::min(H, W);
    // face disc sits inside the body blob so the sprite centroid stays at the
    // body center
    const double face_dy = -(body_r - face_r) * 0.9;
    const double hand_dist = body_r + 1.5;
    const double margin = body_r + 2.5;

    Vec2 pos{W / 2.0 + traj_rng.uniform(-3.0, 3.0), H / 2.0 + traj_rng.uniform(-3.0, 3.0)};
    Vec2 vel{traj_rng.uniform(-1.0, 1.0) * motion_amplitude,
             traj_rng.uniform(-1.0, 1.0) * motion_amplitude};
    double hand_phase = traj_rng.uniform(0.0, 2.0 * M_PI);
    const double hand_omega = traj_rng.uniform(0.25, 0.55);
    const double max_speed = 2.0 * motion_amplitude;

    VideoClip clip;
    clip.frames = F;
    clip.seed = seed;
    clip.pixels = Tensor({F, C, H, W});
    clip.pose_map = Tensor({F, 1, H, W});
    clip.face_track.resize(static_cast<size_t>(F));

    for (int i = 0; i < F; ++i) {
        if (i > 0) {
            vel.x = 0.82 * vel.x + 0.55 * motion_amplitude * traj_rng.normal();
            vel.y = 0.82 * vel.y + 0.55 * motion_amplitude * traj_rng.normal();
            const double speed = std::hypot(vel.x, vel.y);
            if (speed > max_speed) {
                vel.x *= max_speed / speed;
                vel.y *= max_speed / speed;
            }
            pos.x += vel.x;
            pos.y += vel.y;
            if (pos.x < margin) { pos.x = 2 * margin - pos.x; vel.x = -vel.x; }
            if (pos.x > W - margin) { pos.x = 2 * (W - margin) - pos.x; vel.x = -vel.x; }
            if (pos.y < margin) { pos.y = 2 * margin - pos.y; vel.y = -vel.y; }
            if (pos.y > H - margin) { pos.y = 2 * (H - margin) - pos.y; vel.y = -vel.y; }
            hand_phase += hand_omega;
        }

        Tensor frame({C, H, W});
        paint_disc(frame, pos.x, pos.y, body_r, body_rgb);

        const double fx = pos.x, fy = pos.y + face_dy;
        // three angular sectors give the face a seed-specific pattern
        {
            const int y0 = std::max(0, static_cast<int>(std::floor(fy - face_r - 1)));
            const int y1 = std::min(H - 1, static_cast<int>(std::ceil(fy + face_r + 1)));
            const int x0 = std::max(0, static_cast<int>(std::floor(fx - face_r - 1)));
            const int x1 = std::min(W - 1, static_cast<int>(std::ceil(fx + face_r + 1)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double a = disc_coverage(x, y, fx, fy, face_r);
                    if (a <= 0.0) continue;
                    const double ang = std::atan2(y - fy, x - fx) + M_PI;
                    int sector = static_cast<int>(ang * 3.0 / (2.0 * M_PI + 1e-12));
                    sector = std::clamp(sector, 0, 2);
                    for (int c = 0; c < C; ++c) {
                        double& v = frame.at3(c, y, x);
                        v = (1.0 - a) * v + a * face_rgb[sector][c];
                    }
                }
        }

        for (int64_t k = 0; k < frame.numel(); ++k)
            clip.pixels[static_cast<int64_t>(i) * frame.numel() + k] =
                std::clamp(frame[k], 0.0, 1.0);

        // joints: torso (root), head, two hands orbiting the torso
        Tensor pose({1, H, W});
        paint_dot(pose, pos.x, pos.y, 1.25, 1.0);
        paint_dot(pose, fx, fy, 1.25, 0.6);
        const double hx = std::cos(hand_phase) * hand_dist;
        const double hy = std::sin(hand_phase) * hand_dist * 0.6;
        paint_dot(pose, pos.x + hx, pos.y + hy, 1.0, 0.4);
        paint_dot(pose, pos.x - hx, pos.y - hy, 1.0, 0.4);
        for (int64_t k = 0; k < pose.numel(); ++k)
            clip.pose_map[static_cast<int64_t>(i) * pose.numel() + k] = pose[k];

        clip.face_track[static_cast<size_t>(i)] = box_around(fx, fy, face_r, H, W);
    }

    clip.reference_frame = Tensor({C, H, W});
    for (int64_t k = 0; k < clip.reference_frame.numel(); ++k)
        clip.reference_frame[k] = clip.pixels[k];
    clip.face_box = clip.face_track[0];
    return clip;
}

Tensor avg_pool_frames(const Tensor& frames, int f) {
    if (frames.ndim() != 4) throw ArgumentError("avg_pool_frames: expected [F,C,H,W]");
    const int F = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    if (f < 1) throw ConfigError("avg_pool_frames: factor must be >= 1");
    if (H % f != 0 || W % f != 0)
        throw ConfigError("avg_pool_frames: H, W must be divisible by factor " +
                          std::to_string(f));
    if (f == 1) return frames;
    const int h = H / f, w = W / f;
    Tensor out({F, C, h, w});
    const double inv = 1.0 / (f * f);
    for (int i = 0; i < F; ++i)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double s = 0;
                    for (int dy = 0; dy < f; ++dy)
                        for (int dx = 0; dx < f; ++dx)
                            s += frames.at4(i, c, y * f + dy, x * f + dx);
                    out.at4(i, c, y, x) = s * inv;
                }
    return out;
}

Tensor nearest_upsample_frames(const Tensor& latents, int f) {
    if (latents.ndim() != 4) throw ArgumentError("nearest_upsample_frames: expected [F,C,h,w]");
    if (f < 1) throw ConfigError("nearest_upsample_frames: factor must be >= 1");
    if (f == 1) return latents;
    const int F = latents.dim(0), C = latents.dim(1), h = latents.dim(2), w = latents.dim(3);
    Tensor out({F, C, h * f, w * f});
    for (int i = 0; i < F; ++i)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h * f; ++y)
                for (int x = 0; x < w * f; ++x)
                    out.at4(i, c, y, x) = latents.at4(i, c, y / f, x / f);
    return out;
}

LatentVideo encode_latent(const VideoClip& clip, const ToyAutoencoder& ae) {
    return LatentVideo{avg_pool_frames(clip.pixels, ae.factor)};
}

Tensor decode_latent(const LatentVideo& lat, const ToyAutoencoder& ae) {
    return nearest_upsample_frames(lat.latents, ae.factor);
}

void save_clip(const std::filesystem::path& dir, const VideoClip& clip) {
    std::filesystem::create_directories(dir);
    io::save_npy(dir / "pixels.npy", clip.pixels);
    io::save_npy(dir / "pose.npy", clip.pose_map);
    io::save_npy(dir / "reference.npy", clip.reference_frame);

    nlohmann::json meta;
    meta["seed"] = clip.seed;
    meta["frames"] = clip.frames;
    meta["channels"] = clip.channels();
    meta["height"] = clip.height();
    meta["width"] = clip.width();
    meta["face_box"] = {clip.face_box.x0, clip.face_box.y0, clip.face_box.x1, clip.face_box.y1};
    nlohmann::json track = nlohmann::json::array();
    for (const auto& b : clip.face_track) track.push_back({b.x0, b.y0, b.x1, b.y1});
    meta["face_track"] = track;
    io::write_text_file(dir / "meta.json", meta.dump(2) + "\n");
}

VideoClip load_clip(const std::filesystem::path& dir) {
    VideoClip clip;
    clip.pixels = io::load_npy(dir / "pixels.npy");
    clip.pose_map = io::load_npy(dir / "pose.npy");
    clip.reference_frame = io::load_npy(dir / "reference.npy");

    nlohmann::json meta = nlohmann::json::parse(io::read_text_file(dir / "meta.json"));
    clip.seed = meta.at("seed").get<uint64_t>();
    clip.frames = meta.at("frames").get<int>();
    auto fb = meta.at("face_box");
    clip.face_box = FaceBox{fb[0], fb[1], fb[2], fb[3]};
    for (const auto& b : meta.at("face_track"))
        clip.face_track.push_back(FaceBox{b[0], b[1], b[2], b[3]});
    if (clip.pixels.ndim() != 4 || clip.pixels.dim(0) != clip.frames)
        throw IntegrityError("load_clip: pixel array inconsistent with meta.json");
    return clip;
}

}  // namespace scd
