#pragma once

#include <cstdint>
#include <random>

namespace hrg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, case): results never depend on how cases are scheduled.
inline std::mt19937_64 case_rng(std::uint64_t seed, std::uint64_t case_index) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(case_index + 1)));
}

}  // namespace hrg
