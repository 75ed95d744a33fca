#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace volnet {

// All production randomness goes through mt19937_64 raw outputs plus the
// explicit mappings below. std::uniform_*_distribution is avoided: its
// output sequence is implementation-defined, and seeds here are contracts
// (bitwise-reproducible init, shuffles and phantom volumes).
using Rng = std::mt19937_64;

inline double unit_double(std::uint64_t x) {
  // 53 high bits -> [0, 1)
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

inline double rand_uniform(Rng& rng, double lo, double hi) {
  return lo + unit_double(rng()) * (hi - lo);
}

// Bounded draw via modulo; bias is irrelevant at the sizes used and the
// fixed rule keeps transcripts reproducible outside C++.
inline std::uint64_t rand_index(Rng& rng, std::uint64_t n) {
  return rng() % n;
}

// Fisher-Yates, descending index, j = next() % (i+1).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i-- > 1;) {
    std::size_t j = static_cast<std::size_t>(rand_index(rng, i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Derives an independent child seed for (seed, index, stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(seed ^ splitmix64(index)) ^ stream);
}

}  // namespace volnet
