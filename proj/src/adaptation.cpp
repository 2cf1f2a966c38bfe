#include "choreo/adaptation.hpp"

#include <algorithm>
#include <cmath>

#include "choreo/errors.hpp"

namespace choreo {

MetaController::MetaController(MetaConfig config, std::size_t deter_dim, std::size_t skills, Rng& rng)
    : config_(config), skills_(skills), smoother_(config.threshold) {
  CHOREO_REQUIRE(skills >= 1, "meta-controller needs at least one skill");
  const std::vector<std::size_t> deep(config_.layers, config_.hidden);
  actor_spec_ = {"meta_actor", deter_dim, deep, skills};
  critic_spec_ = {"meta_critic", deter_dim, deep, 1};
  init_mlp(actor_, actor_spec_, rng);
  init_mlp(critic_, critic_spec_, rng);
}

Var MetaController::logits(Tape& tape, Var deter) const { return mlp(tape, actor_, actor_spec_, deter); }
Var MetaController::value(Tape& tape, Var deter) const { return mlp(tape, critic_, critic_spec_, deter); }

std::vector<double> MetaController::probabilities(std::span<const double> deter) const {
  Tape tape;
  return ops::softmax(logits(tape, tape.constant(Tensor::row(deter)))).value().values();
}

void MetaController::begin_episode(Rng& rng) { held_ = sample_skill_uniform(skills_, rng); }

std::size_t MetaController::select_skill(const ModelState& state, Rng& rng, SelectMode mode) const {
  if (!smoother_.armed()) {
    CHOREO_REQUIRE(held_.has_value(), "select_skill: begin_episode must be called first");
    return *held_;
  }
  const auto p = probabilities(state.deter);
  if (mode == SelectMode::Greedy) return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  return rng.categorical(p);
}

MetaGraph build_meta_graph(Tape& tape, const WorldModel& wm, const Codebook& codebook, const SkillPolicySet& skills,
                           const MetaController& meta, const StateBatch& start, Rng& rng) {
  const auto& cfg = meta.config();
  CHOREO_REQUIRE(cfg.horizon >= 1, "meta training needs a horizon of at least 1");
  CHOREO_REQUIRE(codebook.size() == meta.skills(), "meta-controller and codebook disagree on the number of skills");
  MetaGraph g;
  Var codes = tape.constant(codebook.codes());
  std::vector<Var> log_probs, entropies;
  ImaginePolicy policy = [&](Tape& t, const StateVars& s, std::size_t, Rng& r) {
    Var lp = ops::log_softmax(meta.logits(t, ops::stop_gradient(s.deter)));
    Var probs = ops::exp(lp);
    std::vector<std::size_t> z(s.deter.rows());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = r.categorical(probs.value().row_span(i));
    Tensor hot = one_hot(z, meta.skills());
    log_probs.push_back(ops::sum_cols(lp * t.constant(hot)));
    entropies.push_back(-ops::sum_cols(probs * lp));
    g.choices.push_back(z);
    Var code = ops::matmul(ops::straight_through(hot, probs), codes);
    return skills.ac().sample(t, SkillPolicySet::input(s.deter, code), r);
  };
  g.rollout = wm.imagine(tape, wm.constant_state(tape, start), policy, cfg.horizon, rng);
  log_probs.resize(cfg.horizon);
  entropies.resize(cfg.horizon);
  g.choices.resize(cfg.horizon);

  const double gate = meta.smoother().armed() ? 1.0 : 0.0;
  for (std::size_t t = 1; t <= cfg.horizon; ++t) g.rewards.push_back(ops::scale(wm.reward(tape, g.rollout.states[t]), gate));
  for (const auto& s : g.rollout.states) g.values.push_back(ops::scale(meta.value(tape, s.deter), gate));
  g.returns = lambda_returns(g.rewards, g.values, cfg.gamma, cfg.lambda);
  g.skill_loss = -ops::mean(ops::concat_rows(g.returns));

  std::vector<Var> pg, errors;
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    Var advantage = ops::stop_gradient(g.returns[t] - g.values[t]);
    pg.push_back(log_probs[t] * advantage);
    Var v = meta.value(tape, ops::stop_gradient(g.rollout.states[t].deter));
    errors.push_back(v - ops::stop_gradient(g.returns[t]));
  }
  Var entropy = ops::mean(ops::concat_rows(entropies));
  g.entropy = entropy.value().item();
  g.actor_loss = -ops::mean(ops::concat_rows(pg)) - ops::scale(entropy, cfg.entropy);
  g.critic_loss = ops::scale(ops::mean(ops::square(ops::concat_rows(errors))), 0.5);
  return g;
}

MetaTrainStats train_meta(const WorldModel& wm, const SkillVQ& vq, SkillPolicySet& skills, MetaController& meta,
                          const StateBatch& start_states, Rng& rng, bool freeze_skills) {
  MetaTrainStats stats;
  if (!meta.smoother().armed()) return stats;
  const auto& cfg = meta.config();
  const StateBatch start = start_states.select(choose_rows(start_states.size(), cfg.imag_starts, rng));

  Tape tape;
  tape.freeze(wm.params());
  tape.freeze(wm.reward_params());
  tape.freeze(vq.params());
  tape.freeze(skills.ac().critic());
  if (freeze_skills) tape.freeze(skills.ac().actor());
  MetaGraph g = build_meta_graph(tape, wm, vq.codebook(), skills, meta, start, rng);

  Gradients skill_grads;
  if (!freeze_skills) skill_grads = clip_grad_norm(tape.backward(g.skill_loss, skills.ac().actor()), cfg.clip);
  Gradients actor_grads = clip_grad_norm(tape.backward(g.actor_loss, meta.actor()), cfg.clip);
  Gradients critic_grads = clip_grad_norm(tape.backward(g.critic_loss, meta.critic()), cfg.clip);
  if (!freeze_skills) adam_step(skills.ac().actor(), skill_grads, cfg.skill_lr);
  adam_step(meta.actor(), actor_grads, cfg.actor_lr);
  adam_step(meta.critic(), critic_grads, cfg.critic_lr);

  stats.skipped = false;
  stats.actor_loss = g.actor_loss.value().item();
  stats.critic_loss = g.critic_loss.value().item();
  stats.skill_loss = g.skill_loss.value().item();
  stats.entropy = g.entropy;
  double r = 0.0;
  std::size_t n = 0;
  for (const auto& v : g.rewards) {
    for (double x : v.value().values()) r += x;
    n += v.value().size();
  }
  stats.reward = r / static_cast<double>(n);
  stats.ret = -stats.skill_loss;
  return stats;
}

EvalMetrics zero_shot_eval(const WorldModel& wm, const SkillVQ& vq, const SkillPolicySet& skills,
                           MetaController meta, const PointMassConfig& env_config, std::size_t episodes, Rng& rng) {
  EvalMetrics m;
  PointMassEnv env(env_config);
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    std::vector<double> obs = env.reset();
    std::vector<double> prev(PointMassEnv::kActDim, 0.0);
    ModelState state = wm.initial_state();
    meta.begin_episode(rng);
    double ret = 0.0;
    bool success = false;
    while (!env.done()) {
      state = wm.posterior_step(state, prev, obs, rng);
      const std::size_t z = meta.select_skill(state, rng, SelectMode::Greedy);
      const Tensor a = skills.mean_action(state.deter, vq.codebook().code(z));
      prev.assign(a.values().begin(), a.values().end());
      StepResult r = env.step(prev);
      obs = std::move(r.obs);
      ret += r.reward;
      success = success || env.in_goal();
    }
    m.returns.push_back(ret);
    m.successes.push_back(success);
  }
  m.episodes = episodes;
  if (episodes > 0) {
    for (std::size_t i = 0; i < episodes; ++i) {
      m.mean_return += m.returns[i];
      m.success_rate += m.successes[i] ? 1.0 : 0.0;
    }
    m.mean_return /= static_cast<double>(episodes);
    m.success_rate /= static_cast<double>(episodes);
  }
  return m;
}

nlohmann::json EvalMetrics::to_json() const {
  return {{"episodes", episodes}, {"mean_return", mean_return}, {"success_rate", success_rate}};
}

}  // namespace choreo
