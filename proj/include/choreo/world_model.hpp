#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "choreo/autodiff.hpp"
#include "choreo/batch.hpp"
#include "choreo/nn.hpp"
#include "choreo/rng.hpp"

namespace choreo {

// How the discrete stochastic component is produced from its logits.
//  Sample: one-hot draw per group, straight-through gradient to the probabilities.
//  Mean:   the probabilities themselves (deterministic; used for gradient checks).
enum class StochMode { Sample, Mean };

struct WorldModelConfig {
  std::size_t obs_dim = 4;
  std::size_t act_dim = 2;
  std::size_t deter = 64;
  std::size_t groups = 8;
  std::size_t classes = 8;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  double lr = 3e-4;
  double clip = 100.0;
  StochMode stoch_mode = StochMode::Sample;

  std::size_t stoch_size() const { return groups * classes; }
};

// Single latent state s_t: GRU hidden, flattened one-hot sample and the logits
// it was drawn from.
struct ModelState {
  std::vector<double> deter;
  std::vector<double> stoch;
  std::vector<double> logits;
};

// A batch of latent states as plain values (one row per state).
struct StateBatch {
  Tensor deter;
  Tensor stoch;
  Tensor logits;

  std::size_t size() const { return deter.rows(); }
  ModelState at(std::size_t i) const;
  StateBatch select(std::span<const std::size_t> rows) const;
  static StateBatch from_states(std::span<const ModelState> states);
};

// A batch of latent states on a tape.
struct StateVars {
  Var deter;
  Var stoch;
  Var logits;

  StateBatch values() const { return {deter.value(), stoch.value(), logits.value()}; }
};

struct WmLoss {
  Var loss;
  Var kl;           // mean KL(posterior || prior)
  Var recon;        // mean negative log-likelihood of observations
  std::optional<Var> reward;  // mean reward NLL (fine-tuning only)
  std::vector<StateVars> posterior;  // T entries of [B, ...]
  std::vector<Var> prior_logits;
};

struct WmTrainStats {
  double loss = 0.0;
  double kl = 0.0;
  double recon = 0.0;
  double reward = 0.0;
  StateBatch states;  // posterior states, flattened time-major (T*B rows)
  Tensor prior_logits;  // matching prior logits
};

// Policy used during imagination: maps the current batch of states to actions.
using ImaginePolicy = std::function<Var(Tape&, const StateVars&, std::size_t step, Rng&)>;

struct TapeRollout {
  std::vector<StateVars> states;  // horizon + 1
  std::vector<Var> actions;       // horizon
};

struct Rollout {
  std::vector<StateBatch> states;  // horizon + 1
  std::vector<Tensor> actions;     // horizon
};

// KL(q || p) between factorised categoricals given as logits, summed over
// groups of `classes` entries.
double kl_categorical(std::span<const double> q_logits, std::span<const double> p_logits, std::size_t classes);
// Row-wise version on a tape: [B, G*C] x [B, G*C] -> [B, 1].
Var kl_categorical(Var q_logits, Var p_logits, std::size_t classes);

class WorldModel {
 public:
  WorldModel(WorldModelConfig config, Rng& rng);

  const WorldModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // The reward predictor only exists once fine-tuning starts.
  bool has_reward_head() const { return reward_params_.has_value(); }
  void init_reward_head(Rng& rng);
  ParamSet& reward_params();
  const ParamSet& reward_params() const;
  void set_reward_params(ParamSet params) { reward_params_ = std::move(params); }

  ModelState initial_state() const;
  StateBatch initial_batch(std::size_t n) const;

  // --- tape-level building blocks -------------------------------------------
  StateVars constant_state(Tape& tape, const StateBatch& s) const;
  Var deter_step(Tape& tape, const StateVars& prev, Var action) const;
  Var prior_logits(Tape& tape, Var deter) const;
  Var embed(Tape& tape, Var obs) const;
  Var posterior_logits(Tape& tape, Var deter, Var embedding) const;
  Var sample_stoch(Tape& tape, Var logits, Rng& rng) const;
  StateVars img_step(Tape& tape, const StateVars& prev, Var action, Rng& rng) const;
  StateVars obs_step(Tape& tape, const StateVars& prev, Var action, Var obs, Rng& rng,
                     Var* prior_logits_out = nullptr) const;
  Var features(const StateVars& s) const;
  Var decode(Tape& tape, const StateVars& s) const;
  Var reward(Tape& tape, const StateVars& s) const;

  TapeRollout imagine(Tape& tape, const StateVars& start, const ImaginePolicy& policy, std::size_t horizon,
                      Rng& rng) const;

  // --- value-level operations ----------------------------------------------
  ModelState posterior_step(const ModelState& prev, std::span<const double> prev_action,
                            std::span<const double> obs, Rng& rng) const;
  ModelState prior_step(const ModelState& prev, std::span<const double> prev_action, Rng& rng) const;
  Rollout imagine(const StateBatch& start, const ImaginePolicy& policy, std::size_t horizon, Rng& rng) const;
  double predict_reward(const ModelState& state) const;
  Tensor predict_reward(const StateBatch& states) const;
  Tensor decode(const StateBatch& states) const;

  // ELBO loss over a batch of sequences (requires T >= 2).
  WmLoss loss(Tape& tape, const SequenceBatch& batch, Rng& rng) const;
  // One optimizer step on the loss; returns the posterior states it produced.
  WmTrainStats train_step(const SequenceBatch& batch, Rng& rng);

 private:
  WorldModelConfig config_;
  ParamSet params_;
  std::optional<ParamSet> reward_params_;
  MlpSpec enc_, img_in_, prior_, post_, dec_, reward_;
  GruSpec gru_;
};

}  // namespace choreo
