#pragma once

#include <cstdint>

#include "choreo/env.hpp"
#include "choreo/replay.hpp"

namespace choreo {

// One full episode of the scripted random-walk policy.
Episode random_walk_episode(PointMassEnv& env, RandomWalkPolicy& policy, Rng& rng);

// Reward-free offline dataset of `episodes` random-walk episodes.
ReplayBuffer random_walk_dataset(const PointMassConfig& config, std::size_t episodes, std::uint64_t seed,
                                 double step_std = 0.3);

}  // namespace choreo
