#pragma once

#include <cstdint>
#include <random>

namespace prism {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; turns (seed, stream) pairs into well separated generator seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) { return Rng(mix_seed(seed, stream)); }

// Portable uniform integer in [lo, hi]; std distributions are implementation defined.
inline int uniform_int(Rng& rng, int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = Rng::max() - Rng::max() % span;
    std::uint64_t r;
    do r = rng();
    while (r >= limit);
    return lo + static_cast<int>(r % span);
}

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace prism
