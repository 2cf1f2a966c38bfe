#include "choreo/env.hpp"

#include <algorithm>
#include <cmath>

#include "choreo/errors.hpp"

namespace choreo {

PointMassEnv::PointMassEnv(PointMassConfig config) : config_(config) { reset(); }

std::vector<double> PointMassEnv::reset() { return reset(config_.start); }

std::vector<double> PointMassEnv::reset(std::array<double, 2> position) {
  position_ = {std::clamp(position[0], -1.0, 1.0), std::clamp(position[1], -1.0, 1.0)};
  velocity_ = {0.0, 0.0};
  steps_ = 0;
  done_ = false;
  return observation();
}

std::vector<double> PointMassEnv::observation() const {
  return {position_[0], position_[1], velocity_[0], velocity_[1]};
}

bool PointMassEnv::in_goal() const {
  const double dx = position_[0] - config_.goal[0];
  const double dy = position_[1] - config_.goal[1];
  return std::sqrt(dx * dx + dy * dy) <= config_.goal_radius;
}

void PointMassEnv::restore(std::array<double, 2> position, std::array<double, 2> velocity, int steps, bool done,
                           std::size_t clipped_actions) {
  position_ = position;
  velocity_ = velocity;
  steps_ = steps;
  done_ = done;
  clipped_actions_ = clipped_actions;
}

StepResult PointMassEnv::step(std::span<const double> action) {
  if (done_) throw ContractViolation("PointMassEnv::step called after the episode finished");
  CHOREO_REQUIRE(action.size() == kActDim, "PointMassEnv::step expects a 2-D action");
  bool clipped = false;
  std::array<double, 2> a{};
  for (std::size_t i = 0; i < 2; ++i) {
    a[i] = std::clamp(action[i], -1.0, 1.0);
    clipped = clipped || a[i] != action[i];
  }
  if (clipped) ++clipped_actions_;

  const auto prev = position_;
  for (std::size_t i = 0; i < 2; ++i) {
    velocity_[i] = config_.damping * velocity_[i] + a[i] * config_.dt;
    position_[i] = std::clamp(position_[i] + velocity_[i], -1.0, 1.0);
  }
  if (config_.two_rooms && ((prev[0] < 0.0) != (position_[0] < 0.0))) {
    const double dx = position_[0] - prev[0];
    const double frac = dx == 0.0 ? 0.0 : (0.0 - prev[0]) / dx;
    const double y_cross = prev[1] + frac * (position_[1] - prev[1]);
    if (std::abs(y_cross) > config_.door_half_width) {
      position_[0] = prev[0];
      velocity_[0] = 0.0;
    }
  }
  ++steps_;
  done_ = steps_ >= config_.max_steps;

  StepResult r;
  r.obs = observation();
  if (config_.sparse) {
    r.reward = in_goal() ? 1.0 : 0.0;
  } else {
    const double dx = position_[0] - config_.goal[0];
    const double dy = position_[1] - config_.goal[1];
    r.reward = -std::sqrt(dx * dx + dy * dy);
  }
  r.done = done_;
  return r;
}

std::array<double, 2> RandomWalkPolicy::act(Rng& rng) {
  for (double& a : action_) a = std::clamp(a + rng.normal(0.0, step_std_), -1.0, 1.0);
  return action_;
}

}  // namespace choreo
