#include "choreo/exploration.hpp"

#include "choreo/errors.hpp"

namespace choreo {

double lbs_reward(std::span<const double> posterior_logits, std::span<const double> prior_logits, std::size_t classes) {
  return kl_categorical(posterior_logits, prior_logits, classes);
}

std::vector<double> lbs_reward(const Tensor& posterior_logits, const Tensor& prior_logits, std::size_t classes) {
  CHOREO_REQUIRE(posterior_logits.same_shape(prior_logits), "lbs_reward: logits shape mismatch");
  std::vector<double> out(posterior_logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = kl_categorical(posterior_logits.row_span(i), prior_logits.row_span(i), classes);
  return out;
}

ExplorationMode parse_exploration_mode(const std::string& s) {
  if (s == "imagine") return ExplorationMode::Imagine;
  if (s == "replay") return ExplorationMode::Replay;
  throw ParseError("exploration mode must be 'imagine' or 'replay', got '" + s + "'");
}

std::string to_string(ExplorationMode m) { return m == ExplorationMode::Imagine ? "imagine" : "replay"; }

ExplorationPolicy::ExplorationPolicy(ExplorationConfig config, std::size_t deter_dim, std::size_t act_dim, Rng& rng)
    : config_(config), ac_("expl", deter_dim, act_dim, config.ac, rng) {
  regressor_spec_ = {"expl_gain", deter_dim, std::vector<std::size_t>(config_.ac.layers, config_.ac.hidden), 1};
  init_mlp(regressor_, regressor_spec_, rng);
}

Tensor ExplorationPolicy::sample_action(std::span<const double> deter, Rng& rng) const {
  return ac_.sample_action(Tensor::row(deter), rng);
}

Var ExplorationPolicy::predicted_gain(Tape& tape, Var deter) const { return mlp(tape, regressor_, regressor_spec_, deter); }

std::vector<Var> exploration_rewards(Tape& tape, const WorldModel& wm, const ExplorationPolicy& policy,
                                     const TapeRollout& rollout) {
  std::vector<Var> out;
  const std::size_t classes = wm.config().classes;
  for (std::size_t t = 1; t < rollout.states.size(); ++t) {
    const StateVars& s = rollout.states[t];
    if (policy.config().mode == ExplorationMode::Imagine) {
      Var obs = wm.decode(tape, s);
      Var post = wm.posterior_logits(tape, s.deter, wm.embed(tape, obs));
      out.push_back(kl_categorical(post, s.logits, classes));
    } else {
      out.push_back(policy.predicted_gain(tape, s.deter));
    }
  }
  return out;
}

ExplorationStats train_exploration(const WorldModel& wm, ExplorationPolicy& policy, const WmTrainStats& real,
                                   Rng& rng) {
  ExplorationStats stats;
  if (policy.config().mode == ExplorationMode::Replay) {
    const auto gain = lbs_reward(real.states.logits, real.prior_logits, wm.config().classes);
    Tape tape;
    Var pred = policy.predicted_gain(tape, tape.constant(real.states.deter));
    Var target = tape.constant(Tensor({gain.size(), 1}, gain));
    Var loss = ops::scale(ops::mean(ops::square(pred - target)), 0.5);
    auto grads = clip_grad_norm(tape.backward(loss, policy.regressor()), policy.config().ac.clip);
    adam_step(policy.regressor(), grads, policy.config().regressor_lr);
    stats.regressor_loss = loss.value().item();
  }
  const StateBatch start = real.states.select(choose_rows(real.states.size(), policy.config().imag_starts, rng));
  PolicyInputFn input = [](Tape&, const StateVars& s) { return s.deter; };
  RolloutRewardFn reward = [&](Tape& tape, const TapeRollout& roll) { return exploration_rewards(tape, wm, policy, roll); };
  stats.ac = imagine_and_update(wm, policy.ac(), start, input, reward, rng, {&policy.regressor()});
  return stats;
}

}  // namespace choreo
