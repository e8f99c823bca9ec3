#pragma once

#include <cstdint>
#include <random>

namespace abc3 {

using Rng = std::mt19937_64;

// Distribution helpers with fully specified algorithms, so seeded streams do not
// depend on the standard library's distribution implementations.

/// Uniform integer in [0, n), unbiased (rejection sampling).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = (Rng::max() / n) * n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

/// Fair coin.
inline bool coin(Rng& rng) { return (rng() >> 63) != 0; }

}  // namespace abc3
