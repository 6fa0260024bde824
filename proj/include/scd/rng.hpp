// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>

namespace scd {

// Counter-based PRNG (splitmix64 output function over key + counter).
// Two words of state make runs trivially resumable from a checkpoint and give
// bit-identical streams on every platform, unlike <random> distributions.
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t stream = 0)
        : key_(mix(seed ^ mix(stream + 0x633a5e1574bd7a11ULL))), ctr_(0) {}

    static Rng from_state(uint64_t key, uint64_t ctr) {
        Rng r(0);
        r.key_ = key;
        r.ctr_ = ctr;
        return r;
    }

    uint64_t next_u64() { return mix(key_ + (++ctr_) * 0x9E3779B97F4A7C15ULL); }

    // [0, 1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Inclusive integer range [lo, hi].
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        const auto wide = static_cast<unsigned __int128>(next_u64()) * span;
        return lo + static_cast<int64_t>(wide >> 64);
    }

    // Box-Muller; consumes two words per draw so the state stays a plain counter.
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Independent child stream derived from a tag; the parent is untouched.
    Rng fork(std::string_view tag) const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return Rng::from_state(mix(key_ ^ mix(h)), 0);
    }
    Rng fork(uint64_t salt) const { return Rng::from_state(mix(key_ ^ mix(salt + 1)), 0); }

    std::pair<uint64_t, uint64_t> state() const { return {key_, ctr_}; }
    void set_state(uint64_t key, uint64_t ctr) {
        key_ = key;
        ctr_ = ctr;
    }

    static uint64_t mix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

  private:
    uint64_t key_;
    uint64_t ctr_;
};

}  // namespace scd
