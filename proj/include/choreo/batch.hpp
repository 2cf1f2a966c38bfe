#pragma once

#include <vector>

#include "choreo/tensor.hpp"

namespace choreo {

// B sequences of T steps, stored time-major. At step t, `actions[t]` is the
// action that led to `obs[t]` (zero at the start of an episode) and
// `rewards[t]` the reward received on arriving at `obs[t]`.
struct SequenceBatch {
  std::vector<Tensor> obs;      // T x [B, obs_dim]
  std::vector<Tensor> actions;  // T x [B, act_dim]
  std::vector<Tensor> rewards;  // T x [B, 1]

  std::size_t length() const { return obs.size(); }
  std::size_t batch_size() const { return obs.empty() ? 0 : obs.front().rows(); }
};

}  // namespace choreo
