#pragma once

// Stateless counter-based uniform generator. Every draw is a pure function of
// (seed, index), so dropout masks do not depend on evaluation order.

#include <cstdint>

namespace lsf {

constexpr std::uint64_t splitmix64_mix(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + index * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Top 53 bits scaled into [0, 1).
constexpr double rand_uniform(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(splitmix64_mix(seed, index) >> 11) * 0x1.0p-53;
}

struct CounterRng {
  std::uint64_t seed = 0;

  constexpr double operator()(std::uint64_t index) const { return rand_uniform(seed, index); }

  // Uniform in [lo, hi).
  constexpr double uniform(std::uint64_t index, double lo, double hi) const {
    return lo + (hi - lo) * rand_uniform(seed, index);
  }

  // Integer in [0, n).
  constexpr std::uint64_t below(std::uint64_t index, std::uint64_t n) const {
    return static_cast<std::uint64_t>(rand_uniform(seed, index) * static_cast<double>(n)) % n;
  }
};

// Derives independent stream seeds for the dropout sites of one training step.
// Sites are numbered by the caller; the tuple is mixed rather than summed so
// neighbouring (step, site) pairs do not collide.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t step, std::uint64_t site) {
  return splitmix64_mix(splitmix64_mix(base, step + 1), site + 1);
}

}  // namespace lsf
