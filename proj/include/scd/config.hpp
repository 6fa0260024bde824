// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scd/distill.hpp"
#include "scd/metrics.hpp"
#include "scd/model.hpp"
#include "scd/schedule.hpp"

namespace scd {

// Everything a run needs, loadable from one JSON file. Unknown keys are
// rejected; dotted-path --set overrides must name existing keys.
struct RunConfig {
    uint64_t seed = 0;
    std::string out_dir = "runs/default";

    ScheduleKind schedule_kind = ScheduleKind::linear_beta;
    int timesteps = kDefaultTimesteps;

    // data
    int frames = 16;
    int height = 32;
    int width = 32;
    int downsample = 2;
    int train_clips = 64;
    int eval_clips = 24;
    uint64_t train_seed = 100;
    uint64_t eval_seed = 5000;

    // model
    int base_channels = 12;
    int blocks = 2;
    int temporal_kernel = 3;
    int time_embed_dim = 32;
    std::string prediction = "epsilon";

    // face conditioning
    bool face_enabled = true;
    int face_crop = kDefaultFaceCrop;

    // teacher pretraining (the toy teacher is trained from scratch, so its
    // optimizer setup is desk-scale, not paper-anchored)
    int teacher_steps = 2000;
    double teacher_lr = 3e-3;
    int teacher_batch = 4;
    double uncond_drop_prob = 0.1;

    DistillConfig distill;

    int sample_steps = 4;

    uint64_t feature_seed = 7;
    int feature_dim = kDefaultFrechetDim;

    DenoiserConfig model_config() const;
    ToyAutoencoder autoencoder() const { return ToyAutoencoder{downsample}; }
    NoiseSchedule schedule() const { return build_schedule(schedule_kind, timesteps); }

    std::string to_json() const;       // canonical resolved form
    std::string digest() const;        // FNV-1a 64 of the canonical form, hex
};

RunConfig default_run_config();

// Parse from JSON text; every key must be known. `source` names the file in
// error messages.
RunConfig parse_run_config(const std::string& json_text, const std::string& source = "<config>");

RunConfig load_run_config(const std::filesystem::path& path);

// Applies "dotted.path=value" overrides on top of the config's JSON form.
RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& sets);

}  // namespace scd
