#include "choreo/rng.hpp"

#include <sstream>

#include "choreo/errors.hpp"

namespace choreo {

std::size_t Rng::index(std::size_t n) {
  CHOREO_REQUIRE(n > 0, "Rng::index on empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    CHOREO_REQUIRE(w >= 0.0, "categorical weight must be nonnegative");
    total += w;
  }
  CHOREO_REQUIRE(total > 0.0, "categorical weights sum to zero");
  const double u = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

Rng Rng::split() { return Rng(engine_()); }

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw ParseError("invalid rng state");
}

}  // namespace choreo
