#pragma once

#include <cstdint>
#include <initializer_list>

namespace ssync {

/// SplitMix64 finalizer. Bijective scrambler of a 64-bit word.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * UINT64_C(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94d049bb133111eb);
    return z ^ (z >> 31);
}

/// Deterministic pseudo-random stream (SplitMix64, Vigna 2015).
///
/// Every random decision in the engine is drawn from a stream seeded as
/// derive_seed(base_seed, {purpose, indices...}) so that runs are bitwise
/// reproducible for a fixed config, independent of thread count and easy
/// to replicate in other languages.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += UINT64_C(0x9e3779b97f4a7c15);
        return mix64(state_);
    }

    /// Uniform double in [0, 1), 53 mantissa bits.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n). n must be > 0. Modulo reduction: the tiny
    /// bias is irrelevant at these ranges and keeps the draw portable.
    uint64_t next_below(uint64_t n) { return next() % n; }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

/// Folds a path of identifiers into a fresh seed. Each derived stream is
/// effectively independent of streams with a different path.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> path) {
    uint64_t acc = mix64(base + UINT64_C(0x9e3779b97f4a7c15));
    for (uint64_t v : path) {
        acc = mix64(acc ^ mix64(v + UINT64_C(0x9e3779b97f4a7c15)));
    }
    return acc;
}

/// Fixed purpose tags for stream derivation. Values are arbitrary but
/// frozen: changing them changes every seeded result.
namespace seed_tag {
inline constexpr uint64_t kWeights = 1;
inline constexpr uint64_t kScene = 2;
inline constexpr uint64_t kAttnDropout = 3;
inline constexpr uint64_t kRfhDropout = 4;
inline constexpr uint64_t kMaskDropout = 5;
} // namespace seed_tag

} // namespace ssync
