#include "choreo/actor_critic.hpp"

#include <algorithm>
#include <numeric>

#include "choreo/errors.hpp"

namespace choreo {

namespace {
constexpr int kMaxResample = 100;

void check_return_args(std::size_t rewards, std::size_t values, double gamma, double lambda) {
  CHOREO_REQUIRE(values == rewards + 1, "lambda_returns needs one more value than rewards");
  CHOREO_REQUIRE(gamma > 0.0 && gamma <= 1.0, "lambda_returns requires 0 < gamma <= 1");
  CHOREO_REQUIRE(lambda >= 0.0 && lambda <= 1.0, "lambda_returns requires 0 <= lambda <= 1");
}
}  // namespace

std::vector<Tensor> lambda_returns(const std::vector<Tensor>& rewards, const std::vector<Tensor>& values,
                                   double gamma, double lambda) {
  check_return_args(rewards.size(), values.size(), gamma, lambda);
  const std::size_t h = rewards.size();
  std::vector<Tensor> out(h);
  Tensor next = values[h];
  for (std::size_t t = h; t-- > 0;) {
    Tensor g = rewards[t];
    CHOREO_REQUIRE(g.same_shape(values[t + 1]), "lambda_returns: reward/value shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += gamma * ((1.0 - lambda) * values[t + 1][i] + lambda * next[i]);
    out[t] = g;
    next = g;
  }
  return out;
}

std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values, double gamma,
                                double lambda) {
  check_return_args(rewards.size(), values.size(), gamma, lambda);
  const std::size_t h = rewards.size();
  std::vector<Var> out(h);
  Var next = values[h];
  for (std::size_t t = h; t-- > 0;) {
    Var mix = ops::scale(values[t + 1], gamma * (1.0 - lambda)) + ops::scale(next, gamma * lambda);
    out[t] = rewards[t] + mix;
    next = out[t];
  }
  return out;
}

ActorCritic::ActorCritic(const std::string& prefix, std::size_t input_dim, std::size_t act_dim,
                         ActorCriticConfig config, Rng& rng)
    : config_(config), input_dim_(input_dim), act_dim_(act_dim) {
  CHOREO_REQUIRE(config_.std_min > 0.0 && config_.std_max >= config_.std_min, "actor std bounds invalid");
  const std::vector<std::size_t> deep(config_.layers, config_.hidden);
  actor_spec_ = {prefix + "_actor", input_dim, deep, 2 * act_dim};
  critic_spec_ = {prefix + "_critic", input_dim, deep, 1};
  init_mlp(actor_, actor_spec_, rng);
  init_mlp(critic_, critic_spec_, rng);
}

ActionDist ActorCritic::dist(Tape& tape, Var input) const {
  Var out = mlp(tape, actor_, actor_spec_, input);
  Var mean = ops::tanh(ops::slice_cols(out, 0, act_dim_));
  Var raw = ops::sigmoid(ops::slice_cols(out, act_dim_, 2 * act_dim_));
  Var std = ops::add_scalar(ops::scale(raw, config_.std_max - config_.std_min), config_.std_min);
  return {mean, std};
}

Var ActorCritic::sample(Tape& tape, Var input, Rng& rng) const {
  ActionDist d = dist(tape, input);
  const Tensor& m = d.mean.value();
  const Tensor& s = d.std.value();
  Tensor eps = Tensor::zeros(m.rows(), m.cols());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    double e = rng.normal();
    for (int k = 0; k < kMaxResample && std::abs(m[i] + s[i] * e) > 1.0; ++k) e = rng.normal();
    eps[i] = e;
  }
  Var a = d.mean + d.std * tape.constant(eps);
  return ops::clip_straight_through(a, -1.0, 1.0);
}

Var ActorCritic::value(Tape& tape, Var input) const { return mlp(tape, critic_, critic_spec_, input); }

Tensor ActorCritic::mean_action(const Tensor& input) const {
  Tape tape;
  return dist(tape, tape.constant(input)).mean.value();
}

Tensor ActorCritic::sample_action(const Tensor& input, Rng& rng) const {
  Tape tape;
  return sample(tape, tape.constant(input), rng).value();
}

Tensor ActorCritic::value(const Tensor& input) const { return mlp_forward(critic_, critic_spec_, input); }

namespace {
double mean_of(const std::vector<Tensor>& ts) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& t : ts) {
    for (double v : t.values()) total += v;
    n += t.size();
  }
  return n ? total / static_cast<double>(n) : 0.0;
}
}  // namespace

ActorCriticGraph build_actor_critic_graph(Tape& tape, const WorldModel& wm, const ActorCritic& ac,
                                          const StateBatch& start, const PolicyInputFn& input,
                                          const RolloutRewardFn& reward, Rng& rng) {
  const auto& cfg = ac.config();
  CHOREO_REQUIRE(cfg.horizon >= 1, "actor-critic training needs a horizon of at least 1");
  ActorCriticGraph g;
  ImaginePolicy policy = [&](Tape& t, const StateVars& s, std::size_t, Rng& r) { return ac.sample(t, input(t, s), r); };
  g.rollout = wm.imagine(tape, wm.constant_state(tape, start), policy, cfg.horizon, rng);
  g.rewards = reward(tape, g.rollout);
  CHOREO_REQUIRE(g.rewards.size() == cfg.horizon, "reward function must return one entry per imagined step");
  for (const auto& s : g.rollout.states) g.values.push_back(ac.value(tape, input(tape, s)));
  g.returns = lambda_returns(g.rewards, g.values, cfg.gamma, cfg.lambda);
  g.actor_loss = -ops::mean(ops::concat_rows(g.returns));

  std::vector<Var> errors;
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    const StateVars& s = g.rollout.states[t];
    StateVars fixed{ops::stop_gradient(s.deter), ops::stop_gradient(s.stoch), ops::stop_gradient(s.logits)};
    Var v = ac.value(tape, ops::stop_gradient(input(tape, fixed)));
    errors.push_back(v - ops::stop_gradient(g.returns[t]));
  }
  g.critic_loss = ops::scale(ops::mean(ops::square(ops::concat_rows(errors))), 0.5);
  return g;
}

ActorCriticStats imagine_and_update(const WorldModel& wm, ActorCritic& ac, const StateBatch& start,
                                    const PolicyInputFn& input, const RolloutRewardFn& reward, Rng& rng,
                                    const std::vector<const ParamSet*>& frozen, ImaginedTrajectory* trajectory) {
  const auto& cfg = ac.config();
  Tape tape;
  tape.freeze(wm.params());
  for (const ParamSet* p : frozen) tape.freeze(*p);
  ActorCriticGraph g = build_actor_critic_graph(tape, wm, ac, start, input, reward, rng);
  Gradients actor_grads = clip_grad_norm(tape.backward(g.actor_loss, ac.actor()), cfg.clip);
  Gradients critic_grads = clip_grad_norm(tape.backward(g.critic_loss, ac.critic()), cfg.clip);

  adam_step(ac.actor(), actor_grads, cfg.actor_lr);
  adam_step(ac.critic(), critic_grads, cfg.critic_lr);

  auto vals = [](const std::vector<Var>& vs) {
    std::vector<Tensor> out;
    for (const auto& v : vs) out.push_back(v.value());
    return out;
  };
  ActorCriticStats stats;
  stats.actor_loss = g.actor_loss.value().item();
  stats.critic_loss = g.critic_loss.value().item();
  stats.reward = mean_of(vals(g.rewards));
  stats.ret = mean_of(vals(g.returns));
  stats.value = mean_of(vals(g.values));
  if (trajectory) {
    trajectory->states.clear();
    trajectory->actions.clear();
    for (const auto& s : g.rollout.states) trajectory->states.push_back(s.values());
    for (const auto& a : g.rollout.actions) trajectory->actions.push_back(a.value());
    trajectory->rewards = vals(g.rewards);
  }
  return stats;
}

std::vector<std::size_t> choose_rows(std::size_t total, std::size_t count, Rng& rng) {
  std::vector<std::size_t> rows(total);
  std::iota(rows.begin(), rows.end(), 0);
  if (count == 0 || count >= total) return rows;
  for (std::size_t i = 0; i < count; ++i) std::swap(rows[i], rows[i + rng.index(total - i)]);
  rows.resize(count);
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace choreo
