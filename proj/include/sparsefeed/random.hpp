#pragma once

// Counter-keyed random streams. Every random decision in a simulated run is
// drawn from a stream identified by (seed, round, worker, channel), so the
// result of a round does not depend on the order in which workers execute.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

namespace sparsefeed {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  std::uint64_t s = h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  return splitmix64(s);
}

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64(state_); }

  /// Uniform integer in [0, n). Rejection sampling keeps it exactly uniform.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = max() - (max() % range);
    std::uint64_t r = (*this)();
    while (r >= limit) r = (*this)();
    return static_cast<std::size_t>(r % range);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(*this); }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

enum class Channel : std::uint64_t {
  sample = 0,
  subset_y = 1,  // the only subset channel for single-message methods
  subset_z = 2,
  output = 3,
  data = 4,
};

/// Derives independent streams keyed by (round, worker, channel).
class StreamFactory {
 public:
  explicit StreamFactory(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Stream stream(std::uint64_t t, std::uint64_t p, Channel c) const {
    std::uint64_t h = hash_combine(seed_, 0x5eed5eed5eed5eedULL);
    h = hash_combine(h, t);
    h = hash_combine(h, p);
    h = hash_combine(h, static_cast<std::uint64_t>(c));
    return Stream(h);
  }

 private:
  std::uint64_t seed_;
};

}  // namespace sparsefeed
