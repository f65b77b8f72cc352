#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace senpa {

using Rng = std::mt19937_64;

/// splitmix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the stream identified by (master, a, b), e.g. (seed, epoch, batch).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(master) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

/// Uniform double in [0, 1) built from 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// k distinct indices from [0, n), in draw order.
inline std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, n - i)]);
  pool.resize(k);
  return pool;
}

/// Uniform draw from the (k-1)-simplex.
inline std::vector<double> sample_simplex(Rng& rng, std::size_t k) {
  std::vector<double> w(k);
  double total = 0.0;
  for (auto& v : w) {
    v = -std::log1p(-uniform01(rng));
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace senpa
