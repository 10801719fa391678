#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

// Deterministic randomness utilities. Every random decision in the
// framework flows from an explicit 64-bit seed through these helpers,
// so results are reproducible bit for bit across runs and platforms
// (no std::random_device, no distribution objects with unspecified
// algorithms).

namespace kernleak {

namespace detail {
inline constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 output scrambler (Steele, Lea, Flood 2014).
inline uint64_t scramble(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
} // namespace detail

// Small, fast, platform-stable PRNG.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += detail::kGolden;
        return detail::scramble(state_);
    }

    // Uniform in [0, 1).
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [0, n). Modulo bias is negligible for the small n used here.
    uint64_t next_below(uint64_t n) {
        return n == 0 ? 0 : next_u64() % n;
    }

private:
    uint64_t state_;
};

// FNV-1a over a byte string.
inline uint64_t stable_hash64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Sub-seed derivation: provides independent random streams per
// (seed, purpose, key) without any shared mutable state.
inline uint64_t derive_seed(uint64_t seed, std::string_view purpose,
                            std::string_view key) {
    uint64_t h = detail::scramble(seed + detail::kGolden);
    h = detail::scramble(h ^ stable_hash64(purpose));
    h = detail::scramble(h ^ stable_hash64(key));
    return h;
}

// Standard normal draw from a counter-based stream keyed by
// (seed, index, channel). Evaluation-order independent: the same key
// always yields the same draw, so records may be produced in parallel.
inline double keyed_normal(uint64_t seed, uint64_t index, uint32_t channel) {
    uint64_t k = detail::scramble(seed + detail::kGolden);
    k = detail::scramble(k ^ (index * 0xD1342543DE82EF95ULL + 1));
    k = detail::scramble(k ^ (static_cast<uint64_t>(channel) * detail::kGolden + 1));
    // Two uniforms in (0,1); the +0.5 offset keeps u1 away from 0.
    double u1 = (static_cast<double>(detail::scramble(k + 1) >> 11) + 0.5) * 0x1.0p-53;
    double u2 = (static_cast<double>(detail::scramble(k + 2) >> 11) + 0.5) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace kernleak
