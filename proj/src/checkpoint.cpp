// SPDX-License-Identifier: Apache-2.0
#include "scd/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "scd/errors.hpp"

namespace scd {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'C', 'D', 'C', 'K', 'P', 'T', '1'};

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_i64(std::string& out, int64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), 8); }

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    const std::string where;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw IntegrityError(where + ": truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string encode_params(const ParamSet& p) {
    std::string out;
    put_u32(out, static_cast<uint32_t>(p.size()));
    for (size_t i = 0; i < p.size(); ++i) {
        put_u32(out, static_cast<uint32_t>(p.names[i].size()));
        out += p.names[i];
        const Tensor& t = p.tensors[i];
        put_u32(out, static_cast<uint32_t>(t.ndim()));
        for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        put_u64(out, static_cast<uint64_t>(t.numel()));
        out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    }
    return out;
}

ParamSet decode_params(const std::string& payload, const std::string& where) {
    Reader r{payload, 0, where};
    ParamSet p;
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u32());
        std::vector<int> shape(r.u32());
        for (auto& d : shape) d = static_cast<int>(r.u32());
        const uint64_t numel = r.u64();
        Tensor& t = p.add(name, shape);
        if (static_cast<uint64_t>(t.numel()) != numel)
            throw IntegrityError(where + ": element count mismatch for " + name);
        const std::string raw = r.bytes(numel * sizeof(double));
        std::memcpy(t.data.data(), raw.data(), raw.size());
    }
    return p;
}

json config_json(const DenoiserConfig& c) {
    return json{{"latent_channels", c.latent_channels},
                {"base_channels", c.base_channels},
                {"num_blocks", c.num_blocks},
                {"temporal_kernel", c.temporal_kernel},
                {"time_embed_dim", c.time_embed_dim},
                {"face_feature_dim", c.face_feature_dim},
                {"target", to_string(c.target)}};
}

DenoiserConfig config_from_json(const json& j) {
    DenoiserConfig c;
    c.latent_channels = j.at("latent_channels");
    c.base_channels = j.at("base_channels");
    c.num_blocks = j.at("num_blocks");
    c.temporal_kernel = j.at("temporal_kernel");
    c.time_embed_dim = j.at("time_embed_dim");
    c.face_feature_dim = j.at("face_feature_dim");
    c.target = prediction_target_from_string(j.at("target"));
    return c;
}

void write_section(std::ofstream& f, const std::string& name, const std::string& payload) {
    uint32_t nl = static_cast<uint32_t>(name.size());
    f.write(reinterpret_cast<const char*>(&nl), 4);
    f.write(name.data(), nl);
    uint64_t pl = payload.size();
    f.write(reinterpret_cast<const char*>(&pl), 8);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    uint64_t h = fnv1a(payload);
    f.write(reinterpret_cast<const char*>(&h), 8);
}

}  // namespace

void save_checkpoint(const TrainState& state, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("save_checkpoint: cannot open " + path.string());
    f.write(kMagic, 8);

    json header;
    header["version"] = meta.version;
    header["phase"] = meta.phase;
    header["step"] = state.step;
    header["config_digest"] = meta.config_digest;
    header["schedule_kind"] = meta.schedule_kind;
    header["timesteps"] = meta.timesteps;
    header["segments"] = meta.segments;
    header["aux_tap"] = meta.aux_tap;
    header["model_config"] = config_json(state.student.config);
    header["has_ema"] = state.has_ema;
    header["has_teacher"] = state.has_teacher;
    auto [key, ctr] = state.rng.state();
    header["rng"] = {{"key", key}, {"ctr", ctr}};
    header["adam"] = {{"step", state.opt.step},
                      {"beta1", state.opt.beta1},
                      {"beta2", state.opt.beta2},
                      {"eps", state.opt.eps}};
    const std::string htext = header.dump();
    uint32_t hlen = static_cast<uint32_t>(htext.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(htext.data(), hlen);

    write_section(f, "student", encode_params(state.student.params));
    if (state.has_ema) write_section(f, "ema", encode_params(state.ema.params));
    if (state.has_teacher) write_section(f, "teacher", encode_params(state.teacher.params));
    write_section(f, "adam_m", encode_params(state.opt.m));
    write_section(f, "adam_v", encode_params(state.opt.v));
    if (!f) throw IntegrityError("save_checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::string& expected_digest, bool force) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("load_checkpoint: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw IntegrityError("load_checkpoint: bad magic in " + path.string());

    Reader r{buf, 8, path.string()};
    const std::string htext = r.bytes(r.u32());
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw IntegrityError("load_checkpoint: header corrupt: " + std::string(e.what()));
    }

    LoadedCheckpoint out;
    out.meta.version = header.at("version");
    out.meta.phase = header.at("phase");
    out.meta.step = header.at("step");
    out.meta.config_digest = header.at("config_digest");
    out.meta.schedule_kind = header.at("schedule_kind");
    out.meta.timesteps = header.at("timesteps");
    out.meta.segments = header.at("segments");
    out.meta.aux_tap = header.at("aux_tap");

    if (!expected_digest.empty() && out.meta.config_digest != expected_digest && !force)
        throw IntegrityError("load_checkpoint: config digest mismatch (checkpoint " +
                             out.meta.config_digest + ", expected " + expected_digest +
                             "); pass force to override");

    DenoiserConfig mc = config_from_json(header.at("model_config"));
    TrainState& st = out.state;
    st.step = header.at("step");
    st.has_ema = header.at("has_ema");
    st.has_teacher = header.at("has_teacher");
    st.rng.set_state(header.at("rng").at("key"), header.at("rng").at("ctr"));
    st.opt.step = header.at("adam").at("step");
    st.opt.beta1 = header.at("adam").at("beta1");
    st.opt.beta2 = header.at("adam").at("beta2");
    st.opt.eps = header.at("adam").at("eps");

    while (r.pos < buf.size()) {
        const std::string name = r.bytes(r.u32());
        const std::string payload = r.bytes(r.u64());
        const uint64_t h = r.u64();
        if (h != fnv1a(payload))
            throw IntegrityError("load_checkpoint: checksum failure in section '" + name + "'");
        if (name == "student") {
            st.student.config = mc;
            st.student.params = decode_params(payload, "student");
        } else if (name == "ema") {
            st.ema.config = mc;
            st.ema.params = decode_params(payload, "ema");
        } else if (name == "teacher") {
            st.teacher.config = mc;
            st.teacher.params = decode_params(payload, "teacher");
        } else if (name == "adam_m") {
            st.opt.m = decode_params(payload, "adam_m");
        } else if (name == "adam_v") {
            st.opt.v = decode_params(payload, "adam_v");
        } else {
            throw IntegrityError("load_checkpoint: unknown section '" + name + "'");
        }
    }
    if (st.student.params.size() == 0)
        throw IntegrityError("load_checkpoint: missing student section");
    return out;
}

}  // namespace scd
