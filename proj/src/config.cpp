// SPDX-License-Identifier: Apache-2.0
#include "scd/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "scd/errors.hpp"
#include "scd/io.hpp"

namespace scd {

using nlohmann::json;

namespace {

std::string distance_to_string(DistanceKind k) {
    return k == DistanceKind::squared ? "squared" : "pseudo_huber";
}

DistanceKind distance_from_string(const std::string& s) {
    if (s == "squared") return DistanceKind::squared;
    if (s == "pseudo_huber") return DistanceKind::pseudo_huber;
    throw ConfigError("unknown distance kind: " + s);
}

json config_to_json_obj(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["schedule"] = {{"kind", to_string(c.schedule_kind)}, {"timesteps", c.timesteps}};
    j["data"] = {{"frames", c.frames},         {"height", c.height},
                 {"width", c.width},           {"downsample", c.downsample},
                 {"train_clips", c.train_clips}, {"eval_clips", c.eval_clips},
                 {"train_seed", c.train_seed}, {"eval_seed", c.eval_seed}};
    j["model"] = {{"base_channels", c.base_channels},
                  {"blocks", c.blocks},
                  {"temporal_kernel", c.temporal_kernel},
                  {"time_embed_dim", c.time_embed_dim},
                  {"prediction", c.prediction}};
    j["face"] = {{"enabled", c.face_enabled}, {"crop_size", c.face_crop}};
    j["teacher"] = {{"steps", c.teacher_steps},
                    {"lr", c.teacher_lr},
                    {"batch_size", c.teacher_batch},
                    {"uncond_drop_prob", c.uncond_drop_prob}};
    j["distill"] = {{"segments", c.distill.K},
                    {"motion_delta", c.distill.delta},
                    {"lambda1", c.distill.lambda1},
                    {"lambda2", c.distill.lambda2},
                    {"ema_rate", c.distill.ema_rate},
                    {"lr", c.distill.lr},
                    {"batch_size", c.distill.batch_size},
                    {"steps", c.distill.total_steps},
                    {"w_min", c.distill.w_min},
                    {"w_max", c.distill.w_max},
                    {"distance", distance_to_string(c.distill.distance)},
                    {"threads", c.distill.threads},
                    {"eval_every", c.distill.eval_every},
                    {"checkpoint_every", c.distill.checkpoint_every}};
    j["sample"] = {{"steps", c.sample_steps}};
    j["metrics"] = {{"feature_seed", c.feature_seed}, {"feature_dim", c.feature_dim}};
    return j;
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where, const std::string& source) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(source + ": unknown key '" + where + it.key() + "'");
}

template <typename T>
void read_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

DenoiserConfig RunConfig::model_config() const {
    DenoiserConfig m;
    m.latent_channels = 3;
    m.base_channels = base_channels;
    m.num_blocks = blocks;
    m.temporal_kernel = temporal_kernel;
    m.time_embed_dim = time_embed_dim;
    m.face_feature_dim = 3 * kFaceFeaturePool * kFaceFeaturePool;
    m.target = prediction_target_from_string(prediction);
    return m;
}

RunConfig default_run_config() { return RunConfig{}; }

std::string RunConfig::to_json() const { return config_to_json_obj(*this).dump(2) + "\n"; }

std::string RunConfig::digest() const {
    const std::string canon = config_to_json_obj(*this).dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : canon) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig parse_run_config(const std::string& json_text, const std::string& source) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(source + ": " + e.what());
    }
    RunConfig c;
    reject_unknown(j, {"seed", "out_dir", "schedule", "data", "model", "face", "teacher",
                       "distill", "sample", "metrics"},
                   "", source);
    try {
        read_if(j, "seed", c.seed);
        read_if(j, "out_dir", c.out_dir);
        if (j.contains("schedule")) {
            const json& s = j["schedule"];
            reject_unknown(s, {"kind", "timesteps"}, "schedule.", source);
            if (s.contains("kind")) c.schedule_kind = schedule_kind_from_string(s["kind"]);
            read_if(s, "timesteps", c.timesteps);
        }
        if (j.contains("data")) {
            const json& s = j["data"];
            reject_unknown(s,
                           {"frames", "height", "width", "downsample", "train_clips",
                            "eval_clips", "train_seed", "eval_seed"},
                           "data.", source);
            read_if(s, "frames", c.frames);
            read_if(s, "height", c.height);
            read_if(s, "width", c.width);
            read_if(s, "downsample", c.downsample);
            read_if(s, "train_clips", c.train_clips);
            read_if(s, "eval_clips", c.eval_clips);
            read_if(s, "train_seed", c.train_seed);
            read_if(s, "eval_seed", c.eval_seed);
        }
        if (j.contains("model")) {
            const json& s = j["model"];
            reject_unknown(
                s, {"base_channels", "blocks", "temporal_kernel", "time_embed_dim", "prediction"},
                "model.", source);
            read_if(s, "base_channels", c.base_channels);
            read_if(s, "blocks", c.blocks);
            read_if(s, "temporal_kernel", c.temporal_kernel);
            read_if(s, "time_embed_dim", c.time_embed_dim);
            read_if(s, "prediction", c.prediction);
        }
        if (j.contains("face")) {
            const json& s = j["face"];
            reject_unknown(s, {"enabled", "crop_size"}, "face.", source);
            read_if(s, "enabled", c.face_enabled);
            read_if(s, "crop_size", c.face_crop);
        }
        if (j.contains("teacher")) {
            const json& s = j["teacher"];
            reject_unknown(s, {"steps", "lr", "batch_size", "uncond_drop_prob"}, "teacher.",
                           source);
            read_if(s, "steps", c.teacher_steps);
            read_if(s, "lr", c.teacher_lr);
            read_if(s, "batch_size", c.teacher_batch);
            read_if(s, "uncond_drop_prob", c.uncond_drop_prob);
        }
        if (j.contains("distill")) {
            const json& s = j["distill"];
            reject_unknown(s,
                           {"segments", "motion_delta", "lambda1", "lambda2", "ema_rate", "lr",
                            "batch_size", "steps", "w_min", "w_max", "distance", "threads",
                            "eval_every", "checkpoint_every"},
                           "distill.", source);
            read_if(s, "segments", c.distill.K);
            read_if(s, "motion_delta", c.distill.delta);
            read_if(s, "lambda1", c.distill.lambda1);
            read_if(s, "lambda2", c.distill.lambda2);
            read_if(s, "ema_rate", c.distill.ema_rate);
            read_if(s, "lr", c.distill.lr);
            read_if(s, "batch_size", c.distill.batch_size);
            read_if(s, "steps", c.distill.total_steps);
            read_if(s, "w_min", c.distill.w_min);
            read_if(s, "w_max", c.distill.w_max);
            if (s.contains("distance")) c.distill.distance = distance_from_string(s["distance"]);
            read_if(s, "threads", c.distill.threads);
            read_if(s, "eval_every", c.distill.eval_every);
            read_if(s, "checkpoint_every", c.distill.checkpoint_every);
        }
        if (j.contains("sample")) {
            const json& s = j["sample"];
            reject_unknown(s, {"steps"}, "sample.", source);
            read_if(s, "steps", c.sample_steps);
        }
        if (j.contains("metrics")) {
            const json& s = j["metrics"];
            reject_unknown(s, {"feature_seed", "feature_dim"}, "metrics.", source);
            read_if(s, "feature_seed", c.feature_seed);
            read_if(s, "feature_dim", c.feature_dim);
        }
    } catch (const json::exception& e) {
        throw ConfigError(source + ": " + e.what());
    }
    c.distill.seed = c.seed;
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(io::read_text_file(path), path.string());
}

RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& sets) {
    json j = json::parse(cfg.to_json());
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + s + "' is not of the form path=value");
        const std::string path = s.substr(0, eq);
        const std::string value = s.substr(eq + 1);

        json* node = &j;
        size_t start = 0;
        std::vector<std::string> parts;
        while (true) {
            const auto dot = path.find('.', start);
            parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        for (size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->contains(parts[i]))
                throw ConfigError("override names unknown key '" + path + "'");
            node = &(*node)[parts[i]];
        }
        if (!node->contains(parts.back()))
            throw ConfigError("override names unknown key '" + path + "'");
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;  // plain strings need no quotes on the command line
        }
        (*node)[parts.back()] = parsed;
    }
    return parse_run_config(j.dump(), "<override>");
}

}  // namespace scd
