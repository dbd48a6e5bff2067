#pragma once

// Seeded randomness helpers. Everything here maps raw mt19937_64 output to
// values directly instead of going through std:: distributions, whose results
// are implementation-defined. All sampling in the library must stay bit-stable
// across platforms and compiler versions.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace fewlens {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives a child seed for a named purpose from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return splitmix64(seed ^ fnv1a64(stream));
}

// Derives an independent stream for a named purpose from one user seed.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream) {
  return std::mt19937_64(derive_seed(seed, stream));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(splitmix64(seed));
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

// Unbiased integer in [0, n) via rejection.
inline std::uint64_t uniform_index(std::mt19937_64& g, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = g();
  } while (x >= limit);
  return x % n;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_index(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

// Selection sampling (Knuth algorithm S): k of n indices, ascending order.
inline std::vector<std::size_t> sample_indices(std::mt19937_64& g, std::size_t n,
                                               std::size_t k) {
  std::vector<std::size_t> out;
  out.reserve(k);
  std::size_t remaining = k;
  for (std::size_t i = 0; i < n && remaining > 0; ++i) {
    if (uniform01(g) * static_cast<double>(n - i) <
        static_cast<double>(remaining)) {
      out.push_back(i);
      --remaining;
    }
  }
  return out;
}

}  // namespace fewlens
