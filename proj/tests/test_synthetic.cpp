// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "scd/errors.hpp"
#include "scd/rng.hpp"
#include "scd/synthetic.hpp"

using namespace scd;

TEST_CASE("generate_clip is bitwise deterministic per seed") {
    VideoClip a = generate_clip(123, 8, 32, 32);
    VideoClip b = generate_clip(123, 8, 32, 32);
    CHECK(a.pixels.data == b.pixels.data);
    CHECK(a.pose_map.data == b.pose_map.data);
    CHECK(a.face_box.x0 == b.face_box.x0);
    VideoClip c = generate_clip(124, 8, 32, 32);
    CHECK(a.pixels.data != c.pixels.data);
}

TEST_CASE("face box is inside bounds with positive area") {
    for (uint64_t seed = 0; seed < 12; ++seed) {
        VideoClip clip = generate_clip(seed, 16, 32, 32);
        CHECK(clip.face_box.valid_in(32, 32));
        CHECK(clip.face_box.width() * clip.face_box.height() > 0);
        CHECK(static_cast<int>(clip.face_track.size()) == clip.frames);
        for (const auto& b : clip.face_track) CHECK(b.valid_in(32, 32));
    }
}

TEST_CASE("pixel values stay in [0,1] and pose map is sparse") {
    VideoClip clip = generate_clip(5, 16, 32, 32);
    for (double v : clip.pixels.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    int64_t nonzero = 0;
    for (double v : clip.pose_map.data)
        if (v != 0.0) ++nonzero;
    // joints cover a small fraction of each frame
    CHECK(nonzero > 0);
    CHECK(nonzero < clip.pose_map.numel() / 10);
}

TEST_CASE("interframe motion fraction is moderate") {
    // fraction of pixels changing by > 0.2 between consecutive frames
    for (uint64_t seed = 0; seed < 6; ++seed) {
        VideoClip clip = generate_clip(seed, 16, 32, 32);
        int64_t moving = 0, total = 0;
        const int C = clip.channels(), H = clip.height(), W = clip.width();
        for (int f = 0; f + 1 < clip.frames; ++f)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double d = 0;
                    for (int c = 0; c < C; ++c)
                        d = std::max(d, std::abs(clip.pixels.at4(f, c, y, x) -
                                                 clip.pixels.at4(f + 1, c, y, x)));
                    if (d > 0.2) ++moving;
                    ++total;
                }
        const double frac = static_cast<double>(moving) / total;
        CHECK(frac > 0.0);
        CHECK(frac < 0.5);
    }
}

TEST_CASE("sprite centroid tracks the pose root joint") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
        VideoClip clip = generate_clip(seed, 12, 32, 32);
        const int C = clip.channels(), H = clip.height(), W = clip.width();
        for (int f = 0; f < clip.frames; ++f) {
            double mass = 0, cx = 0, cy = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double v = 0;
                    for (int c = 0; c < C; ++c) v += clip.pixels.at4(f, c, y, x);
                    mass += v;
                    cx += v * x;
                    cy += v * y;
                }
            cx /= mass;
            cy /= mass;
            double pmass = 0, px = 0, py = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double v = clip.pose_map.at4(f, 0, y, x);
                    pmass += v;
                    px += v * x;
                    py += v * y;
                }
            px /= pmass;
            py /= pmass;
            CHECK(std::hypot(cx - px, cy - py) < 1.0);
        }
    }
}

TEST_CASE("generate_clip argument checks") {
    CHECK_THROWS_AS(generate_clip(0, 1, 32, 32), ConfigError);
    CHECK_THROWS_AS(generate_clip(0, 8, 8, 8), ConfigError);
}

TEST_CASE("encode is average pooling, decode is nearest upsampling") {
    ToyAutoencoder ae{2};

    SUBCASE("constant frame pools to the same constant") {
        VideoClip clip = generate_clip(1, 4, 32, 32);
        for (auto& v : clip.pixels.data) v = 0.37;
        LatentVideo lat = encode_latent(clip, ae);
        CHECK(lat.latents.dim(2) == 16);
        for (double v : lat.latents.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
    }
    SUBCASE("factor 1 is the identity both ways") {
        ToyAutoencoder id{1};
        VideoClip clip = generate_clip(2, 4, 32, 32);
        LatentVideo lat = encode_latent(clip, id);
        CHECK(lat.latents.data == clip.pixels.data);
        CHECK(decode_latent(lat, id).data == clip.pixels.data);
    }
    SUBCASE("2x2 block [0,0;1,1] averages to 0.5") {
        Tensor frames({1, 1, 2, 2});
        frames.at4(0, 0, 1, 0) = 1.0;
        frames.at4(0, 0, 1, 1) = 1.0;
        Tensor lat = avg_pool_frames(frames, 2);
        CHECK(lat.numel() == 1);
        CHECK(lat[0] == doctest::Approx(0.5));
    }
    SUBCASE("decode(encode) is exact on block-constant input") {
        Tensor frames({2, 3, 8, 8});
        Rng rng(3);
        Tensor lat({2, 3, 4, 4});
        for (auto& v : lat.data) v = rng.uniform01();
        frames = nearest_upsample_frames(lat, 2);
        Tensor roundtrip = nearest_upsample_frames(avg_pool_frames(frames, 2), 2);
        for (int64_t i = 0; i < frames.numel(); ++i)
            CHECK(roundtrip[i] == doctest::Approx(frames[i]).epsilon(1e-14));
    }
    SUBCASE("single latent upsamples to a constant block") {
        Tensor lat({1, 1, 1, 1});
        lat[0] = 0.5;
        Tensor up = nearest_upsample_frames(lat, 2);
        CHECK(up.numel() == 4);
        for (double v : up.data) CHECK(v == 0.5);
    }
    SUBCASE("divisibility errors") {
        Tensor frames({1, 1, 3, 3});
        CHECK_THROWS_AS(avg_pool_frames(frames, 2), ConfigError);
    }
}

TEST_CASE("encode/decode are linear") {
    ToyAutoencoder ae{2};
    Rng rng(11);
    Tensor x({2, 3, 8, 8}), y({2, 3, 8, 8});
    for (auto& v : x.data) v = rng.normal();
    for (auto& v : y.data) v = rng.normal();
    const double a = 0.7, b = -1.3;
    Tensor mix(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) mix[i] = a * x[i] + b * y[i];
    Tensor ex = avg_pool_frames(x, 2), ey = avg_pool_frames(y, 2), em = avg_pool_frames(mix, 2);
    for (int64_t i = 0; i < em.numel(); ++i)
        CHECK(em[i] == doctest::Approx(a * ex[i] + b * ey[i]).epsilon(1e-12));
}

TEST_CASE("clip directory round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "scd_clip_test";
    std::filesystem::remove_all(dir);
    VideoClip clip = generate_clip(77, 6, 32, 32);
    save_clip(dir, clip);
    VideoClip back = load_clip(dir);
    CHECK(back.pixels.data == clip.pixels.data);
    CHECK(back.pose_map.data == clip.pose_map.data);
    CHECK(back.reference_frame.data == clip.reference_frame.data);
    CHECK(back.seed == clip.seed);
    CHECK(back.face_box.x1 == clip.face_box.x1);
    CHECK(back.face_track.size() == clip.face_track.size());
    std::filesystem::remove_all(dir);
}
