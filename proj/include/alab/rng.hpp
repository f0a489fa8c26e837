#pragma once

#include <cstdint>
#include <random>

namespace alab {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for (seed, stream...); streams never overlap in
/// practice because every coordinate passes through the mixer.
template <typename... Ts>
std::mt19937_64 make_rng(std::uint64_t seed, Ts... stream) {
  std::uint64_t h = splitmix64(seed);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(stream))), ...);
  return std::mt19937_64(h);
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(g);
}

}  // namespace alab
