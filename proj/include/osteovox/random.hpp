#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace osteovox {

// Portable draws on top of mt19937_64; the std distributions are
// implementation-defined and would break cross-toolchain reproducibility.

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n), n > 0, by rejection.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r = 0;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

/// Standard normal variate (Box-Muller, one value per call).
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = 0.0;
  do {
    u1 = uniform01(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace osteovox
