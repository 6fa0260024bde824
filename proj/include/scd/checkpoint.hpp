// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "scd/distill.hpp"

namespace scd {

struct CheckpointMeta {
    int version = 1;
    std::string phase;  // "teacher" or "distill"
    int64_t step = 0;
    std::string config_digest;
    std::string schedule_kind = "linear_beta";
    int timesteps = kDefaultTimesteps;
    int segments = 0;  // K during distillation, 0 otherwise
    // the auxiliary head taps the activations just before the output block
    std::string aux_tap = "penultimate";
};

// Named-array container with a JSON header and checksummed sections;
// round-trips bit-exactly (parameters, EMA, teacher, Adam moments, RNG).
void save_checkpoint(const TrainState& state, const CheckpointMeta& meta,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
    TrainState state;
    CheckpointMeta meta;
};

// Refuses a config-digest mismatch unless force is set.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::string& expected_digest = "", bool force = false);

}  // namespace scd
