// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

// The standard distributions are implementation-defined, so anything that has
// to be bit-reproducible across toolchains draws through these helpers.

namespace recover::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based hash of a key tuple.
template <typename... Ts>
constexpr std::uint64_t hash_key(std::uint64_t seed, Ts... parts) noexcept {
  std::uint64_t h = splitmix64(seed);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(parts))), ...);
  return h;
}

/// Uniform in [0, 1) with 53 random bits.
constexpr double to_unit(std::uint64_t bits) noexcept { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Standard normal from two hashed uniforms (Box-Muller).
inline double normal_from(std::uint64_t a, std::uint64_t b) noexcept {
  const double u1 = 1.0 - to_unit(a);  // (0, 1]
  const double u2 = to_unit(b);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Unbiased integer in [0, bound) by rejection.
inline std::uint64_t below(std::mt19937_64& gen, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = ~0ULL - (~0ULL % bound);
  std::uint64_t x = gen();
  while (x >= limit) x = gen();
  return x % bound;
}

inline double unit(std::mt19937_64& gen) { return to_unit(gen()); }

}  // namespace recover::rng
