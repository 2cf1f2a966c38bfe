#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace choreo {

// Explicit, seedable random source. Every stochastic routine takes one of
// these by reference; there is no global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform over {0, ..., n-1}.
  std::size_t index(std::size_t n);

  // Draw an index with probability proportional to weights[i]. Weights must be
  // nonnegative with a positive sum.
  std::size_t categorical(std::span<const double> weights);

  // Derive an independent child generator (used to give sub-components their
  // own streams without coupling their consumption order).
  Rng split();

  std::string serialize() const;
  void deserialize(const std::string& state);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace choreo
