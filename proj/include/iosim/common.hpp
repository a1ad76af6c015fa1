#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace iosim {

using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

inline constexpr u64 kBlockBytes = 512;
inline constexpr u64 kNsPerSec = 1'000'000'000ULL;

constexpr u64 div_ceil(u64 a, u64 b) { return (a + b - 1) / b; }

// splitmix64: portable, seedable 64-bit generator used anywhere the model
// needs pseudo-randomness (key sampling, invalidation spacing).
struct SplitMix64 {
    u64 state = 0;

    explicit SplitMix64(u64 seed) : state(seed) {}

    u64 next() {
        u64 z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1].
    double next_unit() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }
};

inline u64 mix64(u64 x) {
    SplitMix64 m(x);
    return m.next();
}

} // namespace iosim
