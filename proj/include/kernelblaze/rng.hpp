#pragma once

#include <cstdint>
#include <string_view>

#include "kernelblaze/util.hpp"

namespace kblaze {

/// splitmix64 (Steele/Lea/Flood); used for seeding and seed derivation.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// xoshiro256** seeded via splitmix64. Pure 64-bit integer arithmetic, so
/// streams are bit-identical across platforms and compilers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound) by rejection-free multiply-shift; fine
    /// for the small bounds used here.
    std::uint64_t below(std::uint64_t bound) { return bound == 0 ? 0 : next_u64() % bound; }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4];
};

/// Stable per-component seed derivation: every rollout, step and sampler
/// draws from a seed that depends only on the run seed and its coordinates,
/// never on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view task_id,
                                 std::uint64_t trajectory_index, std::uint64_t step_index) {
    std::uint64_t s = run_seed;
    s ^= fnv1a64(task_id);
    splitmix64_next(s);
    s ^= 0x9E3779B97F4A7C15ULL * (trajectory_index + 1);
    splitmix64_next(s);
    s ^= 0xC2B2AE3D27D4EB4FULL * (step_index + 1);
    return splitmix64_next(s);
}

} // namespace kblaze
