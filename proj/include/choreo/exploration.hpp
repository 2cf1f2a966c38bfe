#pragma once

#include <string>

#include "choreo/actor_critic.hpp"

namespace choreo {

// Information gain of an observation: KL(posterior || prior), summed over groups.
double lbs_reward(std::span<const double> posterior_logits, std::span<const double> prior_logits, std::size_t classes);
std::vector<double> lbs_reward(const Tensor& posterior_logits, const Tensor& prior_logits, std::size_t classes);

// How the exploration reward is evaluated on imagined states.
//  Imagine: KL between the posterior head applied to the decoded imagined
//           observation and the prior the state was drawn from.
//  Replay:  a regressor fitted to KL values of real replayed steps, queried on
//           imagined states.
enum class ExplorationMode { Imagine, Replay };
ExplorationMode parse_exploration_mode(const std::string& s);
std::string to_string(ExplorationMode m);

struct ExplorationConfig {
  ActorCriticConfig ac;
  ExplorationMode mode = ExplorationMode::Imagine;
  std::size_t imag_starts = 0;
  double regressor_lr = 3e-4;
};

class ExplorationPolicy {
 public:
  ExplorationPolicy(ExplorationConfig config, std::size_t deter_dim, std::size_t act_dim, Rng& rng);

  const ExplorationConfig& config() const { return config_; }
  ActorCritic& ac() { return ac_; }
  const ActorCritic& ac() const { return ac_; }
  ParamSet& regressor() { return regressor_; }
  const ParamSet& regressor() const { return regressor_; }

  Tensor sample_action(std::span<const double> deter, Rng& rng) const;
  Var predicted_gain(Tape& tape, Var deter) const;

 private:
  ExplorationConfig config_;
  ActorCritic ac_;
  ParamSet regressor_;
  MlpSpec regressor_spec_;
};

// Imagined exploration reward r_1..r_H for a rollout under the chosen mode.
std::vector<Var> exploration_rewards(Tape& tape, const WorldModel& wm, const ExplorationPolicy& policy,
                                     const TapeRollout& rollout);

struct ExplorationStats {
  ActorCriticStats ac;
  double regressor_loss = 0.0;
};

// `real` holds posterior states and prior logits of the latest world-model
// batch; they serve as imagination starts and, in Replay mode, as regression
// data for the information-gain predictor.
ExplorationStats train_exploration(const WorldModel& wm, ExplorationPolicy& policy, const WmTrainStats& real,
                                   Rng& rng);

}  // namespace choreo
