#pragma once

#include <cstdint>
#include <random>

namespace anonqcd {

using Rng = std::mt19937_64;

// Named sub-streams of one replication. Every (master, replication, role)
// triple gets its own independent seed.
enum class StreamRole : std::uint64_t {
  observations = 1,
  schedule = 2,
  pilot = 3,
  benchmark = 4,
  auxiliary = 5,
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t replication,
                                 StreamRole role) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ replication);
  h = splitmix64(h ^ static_cast<std::uint64_t>(role));
  return h;
}

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace anonqcd
