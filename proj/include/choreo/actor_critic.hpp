#pragma once

#include <functional>
#include <string>
#include <vector>

#include "choreo/world_model.hpp"

namespace choreo {

// G_t = r_{t+1} + gamma * ((1 - lambda) * v_{t+1} + lambda * G_{t+1}),  G_H = v_H.
// rewards[t] is r_{t+1} (H entries of [B,1]); values has H+1 entries.
std::vector<Tensor> lambda_returns(const std::vector<Tensor>& rewards, const std::vector<Tensor>& values,
                                   double gamma, double lambda);
std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values, double gamma,
                                double lambda);

struct ActorCriticConfig {
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t horizon = 15;
  double gamma = 0.99;
  double lambda = 0.95;
  double actor_lr = 8e-5;
  double critic_lr = 8e-5;
  double clip = 100.0;
  double std_min = 0.1;
  double std_max = 1.0;
};

struct ActionDist {
  Var mean;  // tanh-squashed, inside the action box
  Var std;   // in [std_min, std_max]
};

// Truncated-normal actor on the box [-1, 1]^act_dim and a scalar critic.
class ActorCritic {
 public:
  ActorCritic(const std::string& prefix, std::size_t input_dim, std::size_t act_dim, ActorCriticConfig config,
              Rng& rng);

  const ActorCriticConfig& config() const { return config_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t act_dim() const { return act_dim_; }
  ParamSet& actor() { return actor_; }
  const ParamSet& actor() const { return actor_; }
  ParamSet& critic() { return critic_; }
  const ParamSet& critic() const { return critic_; }

  ActionDist dist(Tape& tape, Var input) const;
  // Reparameterised draw: mean + std * eps with eps redrawn until the action is
  // inside the box (bounded retries, then clipped straight-through).
  Var sample(Tape& tape, Var input, Rng& rng) const;
  Var value(Tape& tape, Var input) const;

  Tensor mean_action(const Tensor& input) const;
  Tensor sample_action(const Tensor& input, Rng& rng) const;
  Tensor value(const Tensor& input) const;

 private:
  ActorCriticConfig config_;
  std::size_t input_dim_, act_dim_;
  ParamSet actor_, critic_;
  MlpSpec actor_spec_, critic_spec_;
};

// Builds the policy/critic input for a batch of states.
using PolicyInputFn = std::function<Var(Tape&, const StateVars&)>;
// Rewards r_1..r_H ([B,1] each) for an imagined rollout.
using RolloutRewardFn = std::function<std::vector<Var>(Tape&, const TapeRollout&)>;

struct ImaginedTrajectory {
  std::vector<StateBatch> states;  // H + 1
  std::vector<Tensor> actions;     // H
  std::vector<Tensor> rewards;     // H x [B,1]
  std::vector<std::size_t> codes;  // conditioning skill per batch element (empty if unconditioned)
};

struct ActorCriticStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double reward = 0.0;  // mean imagined reward
  double ret = 0.0;     // mean lambda-return
  double value = 0.0;   // mean critic value
};

// Imagined rollout with rewards, critic values, lambda-returns and both losses
// recorded on `tape`. The actor loss is -mean(G); the critic loss is
// 0.5 * mean((v(sg s_t) - sg G_t)^2) over t < H.
struct ActorCriticGraph {
  TapeRollout rollout;
  std::vector<Var> rewards, values, returns;
  Var actor_loss;
  Var critic_loss;
};

ActorCriticGraph build_actor_critic_graph(Tape& tape, const WorldModel& wm, const ActorCritic& ac,
                                          const StateBatch& start, const PolicyInputFn& input,
                                          const RolloutRewardFn& reward, Rng& rng);

// One actor-critic update in imagination: the actor maximises the lambda-return
// by backpropagating through the (frozen) world model, the critic regresses to
// stop-gradient lambda-targets. `frozen` parameter sets are held constant.
ActorCriticStats imagine_and_update(const WorldModel& wm, ActorCritic& ac, const StateBatch& start,
                                    const PolicyInputFn& input, const RolloutRewardFn& reward, Rng& rng,
                                    const std::vector<const ParamSet*>& frozen = {},
                                    ImaginedTrajectory* trajectory = nullptr);

// Uniformly chosen subset of `count` rows (all rows when count is 0 or larger).
std::vector<std::size_t> choose_rows(std::size_t total, std::size_t count, Rng& rng);

}  // namespace choreo
