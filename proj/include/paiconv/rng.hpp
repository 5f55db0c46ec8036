#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace paiconv {

/// Independent sub-streams derived from one user seed, so that e.g. adding a
/// dropout layer does not shift the augmentation noise.
enum class Stream : std::uint64_t {
  kRoot = 0,
  kInit = 1,
  kSampling = 2,
  kDropout = 3,
  kAugment = 4,
  kShuffle = 5,
  kData = 6,
  kKernel = 7,
  kCheck = 8,
};

/// Seeded 64-bit generator: std::mt19937_64 (whose output sequence is fixed
/// by the C++ standard) seeded through SplitMix64. Distributions are
/// implemented here rather than with <random> distribution classes, whose
/// output is implementation-defined, so sequences match across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Child generator for one purpose; depends only on (seed, stream, index).
  Rng stream(Stream s, std::uint64_t index = 0) const {
    return Rng(splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(s) * 0x9E3779B97F4A7C15ULL +
                                             index)));
  }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace paiconv
