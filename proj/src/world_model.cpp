#include "choreo/world_model.hpp"

#include <cmath>
#include <numbers>

#include "choreo/errors.hpp"

namespace choreo {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Tensor row_tensor(std::span<const double> v) { return Tensor::row(v); }

std::vector<double> to_vector(const Tensor& t) { return t.values(); }

}  // namespace

ModelState StateBatch::at(std::size_t i) const {
  return {deter.row_vector(i), stoch.row_vector(i), logits.row_vector(i)};
}

StateBatch StateBatch::select(std::span<const std::size_t> rows) const {
  auto pick = [&](const Tensor& t) {
    Tensor out = Tensor::zeros(rows.size(), t.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = t.row_span(rows[i]);
      std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
  };
  return {pick(deter), pick(stoch), pick(logits)};
}

StateBatch StateBatch::from_states(std::span<const ModelState> states) {
  CHOREO_REQUIRE(!states.empty(), "StateBatch::from_states on empty input");
  auto stack = [&](auto member) {
    const std::size_t cols = (states.front().*member).size();
    Tensor out = Tensor::zeros(states.size(), cols);
    for (std::size_t i = 0; i < states.size(); ++i) {
      const auto& v = states[i].*member;
      CHOREO_REQUIRE(v.size() == cols, "StateBatch::from_states width mismatch");
      std::copy(v.begin(), v.end(), out.row_span(i).begin());
    }
    return out;
  };
  return {stack(&ModelState::deter), stack(&ModelState::stoch), stack(&ModelState::logits)};
}

double kl_categorical(std::span<const double> q_logits, std::span<const double> p_logits, std::size_t classes) {
  CHOREO_REQUIRE(q_logits.size() == p_logits.size(), "kl_categorical: shape mismatch");
  CHOREO_REQUIRE(classes > 0 && q_logits.size() % classes == 0, "kl_categorical: size not a multiple of classes");
  auto log_normalize = [classes](std::span<const double> x, std::size_t g) {
    std::vector<double> out(classes);
    double m = x[g * classes];
    for (std::size_t c = 0; c < classes; ++c) m = std::max(m, x[g * classes + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(x[g * classes + c] - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) out[c] = x[g * classes + c] - lse;
    return out;
  };
  double kl = 0.0;
  for (std::size_t g = 0; g < q_logits.size() / classes; ++g) {
    const auto lq = log_normalize(q_logits, g);
    const auto lp = log_normalize(p_logits, g);
    for (std::size_t c = 0; c < classes; ++c) kl += std::exp(lq[c]) * (lq[c] - lp[c]);
  }
  return std::max(kl, 0.0);
}

Var kl_categorical(Var q_logits, Var p_logits, std::size_t classes) {
  const std::size_t rows = q_logits.rows();
  const std::size_t width = q_logits.cols();
  CHOREO_REQUIRE(p_logits.rows() == rows && p_logits.cols() == width, "kl_categorical: shape mismatch");
  CHOREO_REQUIRE(width % classes == 0, "kl_categorical: width not a multiple of classes");
  const std::size_t groups = width / classes;
  Var lq = ops::log_softmax(ops::reshape(q_logits, rows * groups, classes));
  Var lp = ops::log_softmax(ops::reshape(p_logits, rows * groups, classes));
  Var per_group = ops::sum_cols(ops::exp(lq) * (lq - lp));
  return ops::sum_cols(ops::reshape(per_group, rows, groups));
}

WorldModel::WorldModel(WorldModelConfig config, Rng& rng) : config_(config) {
  const auto& c = config_;
  CHOREO_REQUIRE(c.obs_dim > 0 && c.act_dim > 0 && c.deter > 0 && c.groups > 0 && c.classes > 1 && c.hidden > 0,
                 "world model sizes must be positive (classes >= 2)");
  const std::vector<std::size_t> deep(c.layers, c.hidden);
  enc_ = {"enc", c.obs_dim, deep, c.hidden};
  img_in_ = {"img_in", c.stoch_size() + c.act_dim, {}, c.hidden};
  gru_ = {"gru", c.hidden, c.deter};
  prior_ = {"prior", c.deter, {c.hidden}, c.stoch_size()};
  post_ = {"post", c.deter + c.hidden, {c.hidden}, c.stoch_size()};
  dec_ = {"dec", c.deter + c.stoch_size(), deep, c.obs_dim};
  reward_ = {"reward", c.deter + c.stoch_size(), deep, 1};
  init_mlp(params_, enc_, rng);
  init_mlp(params_, img_in_, rng);
  init_gru(params_, gru_, rng);
  init_mlp(params_, prior_, rng);
  init_mlp(params_, post_, rng);
  init_mlp(params_, dec_, rng);
}

void WorldModel::init_reward_head(Rng& rng) {
  ParamSet p;
  init_mlp(p, reward_, rng);
  reward_params_ = std::move(p);
}

ParamSet& WorldModel::reward_params() {
  CHOREO_REQUIRE(reward_params_.has_value(), "reward head does not exist before fine-tuning");
  return *reward_params_;
}

const ParamSet& WorldModel::reward_params() const {
  CHOREO_REQUIRE(reward_params_.has_value(), "reward head does not exist before fine-tuning");
  return *reward_params_;
}

ModelState WorldModel::initial_state() const {
  return {std::vector<double>(config_.deter, 0.0), std::vector<double>(config_.stoch_size(), 0.0),
          std::vector<double>(config_.stoch_size(), 0.0)};
}

StateBatch WorldModel::initial_batch(std::size_t n) const {
  return {Tensor::zeros(n, config_.deter), Tensor::zeros(n, config_.stoch_size()),
          Tensor::zeros(n, config_.stoch_size())};
}

StateVars WorldModel::constant_state(Tape& tape, const StateBatch& s) const {
  return {tape.constant(s.deter), tape.constant(s.stoch), tape.constant(s.logits)};
}

Var WorldModel::deter_step(Tape& tape, const StateVars& prev, Var action) const {
  Var x = ops::tanh(mlp(tape, params_, img_in_, ops::concat_cols({prev.stoch, action})));
  return gru_step(tape, params_, gru_, prev.deter, x);
}

Var WorldModel::prior_logits(Tape& tape, Var deter) const { return mlp(tape, params_, prior_, deter); }

Var WorldModel::embed(Tape& tape, Var obs) const { return mlp(tape, params_, enc_, obs); }

Var WorldModel::posterior_logits(Tape& tape, Var deter, Var embedding) const {
  return mlp(tape, params_, post_, ops::concat_cols({deter, embedding}));
}

Var WorldModel::sample_stoch(Tape& tape, Var logits, Rng& rng) const {
  (void)tape;
  const std::size_t rows = logits.rows();
  const std::size_t g = config_.groups, c = config_.classes;
  Var probs = ops::softmax(ops::reshape(logits, rows * g, c));
  if (config_.stoch_mode == StochMode::Mean) return ops::reshape(probs, rows, g * c);
  const Tensor& p = probs.value();
  std::vector<std::size_t> picks(rows * g);
  for (std::size_t r = 0; r < rows * g; ++r) picks[r] = rng.categorical(p.row_span(r));
  Var sample = ops::straight_through(one_hot(picks, c), probs);
  return ops::reshape(sample, rows, g * c);
}

StateVars WorldModel::img_step(Tape& tape, const StateVars& prev, Var action, Rng& rng) const {
  Var deter = deter_step(tape, prev, action);
  Var logits = prior_logits(tape, deter);
  return {deter, sample_stoch(tape, logits, rng), logits};
}

StateVars WorldModel::obs_step(Tape& tape, const StateVars& prev, Var action, Var obs, Rng& rng,
                               Var* prior_logits_out) const {
  Var deter = deter_step(tape, prev, action);
  if (prior_logits_out != nullptr) *prior_logits_out = prior_logits(tape, deter);
  Var logits = posterior_logits(tape, deter, embed(tape, obs));
  return {deter, sample_stoch(tape, logits, rng), logits};
}

Var WorldModel::features(const StateVars& s) const { return ops::concat_cols({s.deter, s.stoch}); }

Var WorldModel::decode(Tape& tape, const StateVars& s) const { return mlp(tape, params_, dec_, features(s)); }

Var WorldModel::reward(Tape& tape, const StateVars& s) const {
  return mlp(tape, reward_params(), reward_, features(s));
}

TapeRollout WorldModel::imagine(Tape& tape, const StateVars& start, const ImaginePolicy& policy,
                                std::size_t horizon, Rng& rng) const {
  TapeRollout out;
  out.states.push_back(start);
  for (std::size_t t = 0; t < horizon; ++t) {
    Var action = policy(tape, out.states.back(), t, rng);
    CHOREO_REQUIRE(action.cols() == config_.act_dim && action.rows() == start.deter.rows(),
                   "imagine: policy returned an action of the wrong shape");
    out.actions.push_back(action);
    out.states.push_back(img_step(tape, out.states.back(), action, rng));
  }
  return out;
}

ModelState WorldModel::posterior_step(const ModelState& prev, std::span<const double> prev_action,
                                      std::span<const double> obs, Rng& rng) const {
  CHOREO_REQUIRE(prev.deter.size() == config_.deter && prev.stoch.size() == config_.stoch_size(),
                 "posterior_step: state shape mismatch");
  CHOREO_REQUIRE(prev_action.size() == config_.act_dim && obs.size() == config_.obs_dim,
                 "posterior_step: action/observation shape mismatch");
  Tape tape;
  StateVars p{tape.constant(row_tensor(prev.deter)), tape.constant(row_tensor(prev.stoch)),
              tape.constant(row_tensor(prev.logits))};
  auto s = obs_step(tape, p, tape.constant(row_tensor(prev_action)), tape.constant(row_tensor(obs)), rng);
  return {to_vector(s.deter.value()), to_vector(s.stoch.value()), to_vector(s.logits.value())};
}

ModelState WorldModel::prior_step(const ModelState& prev, std::span<const double> prev_action, Rng& rng) const {
  CHOREO_REQUIRE(prev.deter.size() == config_.deter && prev.stoch.size() == config_.stoch_size(),
                 "prior_step: state shape mismatch");
  CHOREO_REQUIRE(prev_action.size() == config_.act_dim, "prior_step: action shape mismatch");
  Tape tape;
  StateVars p{tape.constant(row_tensor(prev.deter)), tape.constant(row_tensor(prev.stoch)),
              tape.constant(row_tensor(prev.logits))};
  auto s = img_step(tape, p, tape.constant(row_tensor(prev_action)), rng);
  return {to_vector(s.deter.value()), to_vector(s.stoch.value()), to_vector(s.logits.value())};
}

Rollout WorldModel::imagine(const StateBatch& start, const ImaginePolicy& policy, std::size_t horizon,
                            Rng& rng) const {
  Tape tape;
  auto r = imagine(tape, constant_state(tape, start), policy, horizon, rng);
  Rollout out;
  for (const auto& s : r.states) out.states.push_back(s.values());
  for (const auto& a : r.actions) out.actions.push_back(a.value());
  return out;
}

double WorldModel::predict_reward(const ModelState& state) const {
  return predict_reward(StateBatch::from_states(std::span<const ModelState>(&state, 1)))[0];
}

Tensor WorldModel::predict_reward(const StateBatch& states) const {
  CHOREO_REQUIRE(has_reward_head(), "predict_reward called before fine-tuning initialised the reward head");
  Tape tape;
  return reward(tape, constant_state(tape, states)).value();
}

Tensor WorldModel::decode(const StateBatch& states) const {
  Tape tape;
  return decode(tape, constant_state(tape, states)).value();
}

WmLoss WorldModel::loss(Tape& tape, const SequenceBatch& batch, Rng& rng) const {
  const std::size_t steps = batch.length();
  if (steps < 2) throw ContractViolation("world-model loss needs sequences of length >= 2");
  const std::size_t b = batch.batch_size();
  CHOREO_REQUIRE(batch.actions.size() == steps, "sequence batch: actions length mismatch");
  const bool with_reward = has_reward_head();
  if (with_reward) CHOREO_REQUIRE(batch.rewards.size() == steps, "sequence batch: rewards missing");

  WmLoss out;
  StateVars prev = constant_state(tape, initial_batch(b));
  std::vector<Var> kl_terms, recon_terms, reward_terms;
  const double obs_const = 0.5 * static_cast<double>(config_.obs_dim) * kLog2Pi;
  for (std::size_t t = 0; t < steps; ++t) {
    CHOREO_REQUIRE(batch.obs[t].rows() == b && batch.obs[t].cols() == config_.obs_dim,
                   "sequence batch: observation shape mismatch");
    CHOREO_REQUIRE(batch.actions[t].rows() == b && batch.actions[t].cols() == config_.act_dim,
                   "sequence batch: action shape mismatch");
    Var obs = tape.constant(batch.obs[t]);
    Var prior;
    StateVars post = obs_step(tape, prev, tape.constant(batch.actions[t]), obs, rng, &prior);
    kl_terms.push_back(ops::mean(kl_categorical(post.logits, prior, config_.classes)));
    Var err = decode(tape, post) - obs;
    recon_terms.push_back(ops::add_scalar(ops::scale(ops::mean(ops::sum_cols(ops::square(err))), 0.5), obs_const));
    if (with_reward) {
      Var rerr = reward(tape, post) - tape.constant(batch.rewards[t]);
      reward_terms.push_back(ops::add_scalar(ops::scale(ops::mean(ops::square(rerr)), 0.5), 0.5 * kLog2Pi));
    }
    out.posterior.push_back(post);
    out.prior_logits.push_back(prior);
    prev = post;
  }
  const double inv_t = 1.0 / static_cast<double>(steps);
  out.kl = ops::scale(ops::sum(ops::concat_rows(kl_terms)), inv_t);
  out.recon = ops::scale(ops::sum(ops::concat_rows(recon_terms)), inv_t);
  out.loss = out.kl + out.recon;
  if (with_reward) {
    out.reward = ops::scale(ops::sum(ops::concat_rows(reward_terms)), inv_t);
    out.loss = out.loss + *out.reward;
  }
  return out;
}

WmTrainStats WorldModel::train_step(const SequenceBatch& batch, Rng& rng) {
  Tape tape;
  WmLoss l = loss(tape, batch, rng);
  tape.backward(l.loss);
  adam_step(params_, clip_grad_norm(tape.gradients(params_), config_.clip), config_.lr);
  if (reward_params_) adam_step(*reward_params_, clip_grad_norm(tape.gradients(*reward_params_), config_.clip), config_.lr);

  WmTrainStats stats;
  stats.loss = l.loss.value().item();
  stats.kl = l.kl.value().item();
  stats.recon = l.recon.value().item();
  stats.reward = l.reward ? l.reward->value().item() : 0.0;
  std::vector<Tensor> deter, stoch, logits, prior;
  for (std::size_t t = 0; t < l.posterior.size(); ++t) {
    deter.push_back(l.posterior[t].deter.value());
    stoch.push_back(l.posterior[t].stoch.value());
    logits.push_back(l.posterior[t].logits.value());
    prior.push_back(l.prior_logits[t].value());
  }
  stats.states = {concat_rows(deter), concat_rows(stoch), concat_rows(logits)};
  stats.prior_logits = concat_rows(prior);
  return stats;
}

}  // namespace choreo
