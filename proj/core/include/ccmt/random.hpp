#ifndef CCMT_RANDOM_HPP_
#define CCMT_RANDOM_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ccmt {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stable child seed for a (seed, tag...) path, so independent streams do not
/// depend on the order in which they are created.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(seed);
  for (auto p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Uniform double in [0,1) from a 64-bit hash.
inline double unit_from_hash(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace ccmt

#endif  // CCMT_RANDOM_HPP_
