#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "choreo/rng.hpp"

namespace choreo {

struct PointMassConfig {
  double dt = 0.02;
  double damping = 0.8;
  int max_steps = 200;
  std::array<double, 2> start{0.0, 0.0};
  std::array<double, 2> goal{0.5, 0.5};
  double goal_radius = 0.1;
  bool sparse = true;
  // Optional dividing wall at x = 0 with a doorway |y| <= door_half_width.
  bool two_rooms = false;
  double door_half_width = 0.2;
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

// 2-D damped point mass in [-1, 1]^2. Observation = (position, velocity).
//   velocity <- damping * velocity + action * dt
//   position <- clip(position + velocity, -1, 1)
// Sparse reward is 1 inside the goal disc and 0 elsewhere; the dense variant
// is the negative distance to the goal.
class PointMassEnv {
 public:
  static constexpr std::size_t kObsDim = 4;
  static constexpr std::size_t kActDim = 2;

  explicit PointMassEnv(PointMassConfig config = {});

  std::vector<double> reset();
  std::vector<double> reset(std::array<double, 2> position);
  StepResult step(std::span<const double> action);

  std::vector<double> observation() const;
  const std::array<double, 2>& position() const { return position_; }
  const std::array<double, 2>& velocity() const { return velocity_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }
  // Number of steps whose action had to be clipped into the box.
  std::size_t clipped_actions() const { return clipped_actions_; }
  const PointMassConfig& config() const { return config_; }
  bool in_goal() const;
  // Puts the simulator back into a previously observed state (checkpoint resume).
  void restore(std::array<double, 2> position, std::array<double, 2> velocity, int steps, bool done,
               std::size_t clipped_actions);

 private:
  PointMassConfig config_;
  std::array<double, 2> position_{};
  std::array<double, 2> velocity_{};
  int steps_ = 0;
  bool done_ = false;
  std::size_t clipped_actions_ = 0;
};

// Scripted exploration used to build offline datasets: the action itself
// performs a clipped Gaussian random walk inside the box.
class RandomWalkPolicy {
 public:
  explicit RandomWalkPolicy(double step_std = 0.3) : step_std_(step_std) {}
  void reset() { action_ = {0.0, 0.0}; }
  std::array<double, 2> act(Rng& rng);

 private:
  double step_std_;
  std::array<double, 2> action_{0.0, 0.0};
};

}  // namespace choreo
