#pragma once

#include <cstdint>
#include <random>

namespace addiff {

/// splitmix64 finalizer over (seed, stream). Derives independent stream
/// seeds from the single run seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Explicit source of randomness. Every stochastic operation takes one by
/// reference; the library has no ambient generator. Not thread-safe: give
/// each concurrent caller its own source (see derive()).
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  /// Child stream keyed by `stream`; independent of how far this source has
  /// advanced.
  NoiseSource derive(std::uint64_t stream) const {
    return NoiseSource(mix_seed(seed_, stream));
  }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace addiff
