#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cmc {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to fold structured seeds into one stream key.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derive an independent generator from a tuple of integers. Used for
/// per-sample and per-step streams so results never depend on call order.
inline Rng derive_rng(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x243F6A8885A308D3ULL;
    for (auto p : parts) h = mix64(h ^ mix64(p));
    return Rng(h);
}

inline double uniform(Rng& rng, double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
    if (lo >= hi) return lo;
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace cmc
