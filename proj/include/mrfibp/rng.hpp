#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mrfibp {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const char c : text) {
        hash ^= static_cast<std::uint8_t>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

/// Independent stream keyed by (seed, tag, index). Per-image sweeps use
/// tag = fnv1a(image_id) and index = sweep number, so results do not depend
/// on which thread runs which image.
inline Rng make_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

inline Rng make_stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    return make_stream(seed, fnv1a(tag), index);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

} // namespace mrfibp
