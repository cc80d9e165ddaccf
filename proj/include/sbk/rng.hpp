#pragma once

#include <cmath>
#include <cstdint>

namespace sbk {

// Counter-based splittable PRNG. Output i of stream `key` is
// mix64(key + (i+1) * 0x9E3779B97F4A7C15) where mix64 is the SplitMix64
// finalizer, so a (key, counter) pair fully determines every draw and the
// state can be copied or split freely. Runs replay across machines.
struct RandomState {
    uint64_t key = 0;
    uint64_t counter = 0;

    static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    static uint64_t mix64(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    static RandomState from_seed(uint64_t seed) {
        return RandomState{mix64(seed + kGolden), 0};
    }

    // Derives an independent stream; does not advance this one.
    RandomState split(uint64_t tag) const {
        return RandomState{mix64(key ^ mix64(tag + kGolden)), 0};
    }

    uint64_t next_u64() {
        counter += 1;
        return mix64(key + counter * kGolden);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes two draws per value.
    double next_gauss() {
        // u1 in (0, 1] so log() is finite.
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }
};

} // namespace sbk
