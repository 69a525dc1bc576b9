#pragma once

#include <cmath>
#include <cstdint>

namespace relbal {

// Counter-based SplitMix64 stream. The i-th output is
//   mix64(seed + i * 0x9E3779B97F4A7C15)
// with mix64 the SplitMix64 finalizer (Steele, Lea & Flood 2014), so a
// stream is fully determined by (seed, position) and replay is bit-exact.
// Streams are single-owner; parallel work derives independent streams
// with split(), never by sharing one state.
struct Rng {
  std::uint64_t seed = 0;
  std::uint64_t position = 0;

  Rng() = default;
  explicit Rng(std::uint64_t s) : seed(s) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    position += 1;
    return mix64(seed + position * 0x9E3779B97F4A7C15ULL);
  }

  // Independent child stream; child id is folded into the seed so
  // distinct ids give unrelated sequences.
  Rng split(std::uint64_t child_id) const {
    Rng child;
    child.seed = mix64(seed ^ mix64(child_id + 0x6A09E667F3BCC909ULL));
    return child;
  }

  // Uniform on [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; never returns 0, safe under log().
  double next_double_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound). Rejection keeps the draw unbiased.
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t limit = bound * ((~std::uint64_t{0}) / bound);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
  }

  // Standard normal via Box-Muller (one value per call; the paired
  // value is discarded to keep the call sequence simple to reason about).
  double next_gaussian() {
    const double u1 = next_double_open();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }
};

}  // namespace relbal
