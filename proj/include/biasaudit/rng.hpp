#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace biasaudit {

// FNV-1a 64-bit hash, used for content fingerprints and seed derivation.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// splitmix64 finalizer; decorrelates seeds that differ in few bits.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent seed for a named stage from a root seed.  Every
// stochastic stage draws from its own substream so that stages can be rerun
// or reordered without perturbing each other.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view stage) {
  return mix64(root ^ fnv1a64(stage));
}

inline std::uint64_t substream_seed(std::uint64_t root, std::string_view stage,
                                    std::uint64_t index) {
  return mix64(substream_seed(root, stage) ^ mix64(index + 1));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace biasaudit
