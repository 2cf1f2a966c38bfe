#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bandit.hpp"
#include "choreo/adaptation.hpp"
#include "choreo/errors.hpp"
#include "gradcheck.hpp"
#include "stats.hpp"

using namespace choreo;

namespace {

WorldModelConfig tiny_wm() {
  WorldModelConfig c;
  c.deter = 5;
  c.groups = 2;
  c.classes = 3;
  c.hidden = 6;
  c.layers = 1;
  return c;
}

SkillVQConfig tiny_vq(std::size_t n) {
  SkillVQConfig c;
  c.codes = n;
  c.code_dim = 3;
  c.hidden = 6;
  c.layers = 1;
  return c;
}

SkillConfig tiny_skills() {
  SkillConfig c;
  c.ac.hidden = 6;
  c.ac.layers = 1;
  c.ac.horizon = 3;
  return c;
}

MetaConfig tiny_meta() {
  MetaConfig c;
  c.hidden = 6;
  c.layers = 1;
  c.horizon = 3;
  return c;
}

std::string bytes(const ParamSet& p) {
  std::ostringstream out;
  write_params(out, p);
  return out.str();
}

ModelState state_with(std::vector<double> deter, std::size_t stoch) {
  return {std::move(deter), std::vector<double>(stoch, 0.0), std::vector<double>(stoch, 0.0)};
}

std::string last_layer(const ParamSet& p, const std::string& prefix, const char* kind) {
  std::string best;
  for (const auto& [name, _] : p.values())
    if (name.rfind(prefix + ".l", 0) == 0 && name.size() >= 2 && name.substr(name.size() - 2) == std::string(".") + kind)
      best = std::max(best, name);
  return best;
}

}  // namespace

TEST_CASE("smoother gates until the threshold is reached and never disarms") {
  RewardSmoother s;
  CHECK(s.threshold() == 1e-4);
  CHECK(s.smooth(0.03) == 0.0);
  s.observe(5e-5);
  CHECK_FALSE(s.armed());
  CHECK(s.smooth(-2.0) == 0.0);
  s.observe(2e-4);
  CHECK(s.armed());
  CHECK(s.smooth(0.03) == 0.03);
  s.observe(0.0);
  s.observe(-1.0);
  s.set_armed(false);
  CHECK(s.armed());
  CHECK(s.smooth(0.7) == 0.7);
  RewardSmoother exact;
  exact.observe(1e-4);
  CHECK(exact.armed());
}

TEST_CASE("skill selection") {
  Rng rng(1);
  const std::size_t n = 8;
  MetaConfig mc = tiny_meta();
  MetaController meta(mc, 5, n, rng);
  const ModelState s = state_with({0.1, -0.2, 0.3, 0.0, 0.5}, 6);

  SUBCASE("uniform actor in greedy mode picks index 0") {
    for (double& v : meta.actor().at(last_layer(meta.actor(), "meta_actor", "w")).values()) v = 0.0;
    for (double& v : meta.actor().at(last_layer(meta.actor(), "meta_actor", "b")).values()) v = 0.0;
    meta.smoother().set_armed(true);
    const auto p = meta.probabilities(s.deter);
    for (double x : p) CHECK(x == doctest::Approx(1.0 / n).epsilon(1e-12));
    CHECK(meta.select_skill(s, rng, SelectMode::Greedy) == 0);
  }
  SUBCASE("point-mass actor always returns its skill") {
    for (double& v : meta.actor().at(last_layer(meta.actor(), "meta_actor", "w")).values()) v = 0.0;
    meta.actor().at(last_layer(meta.actor(), "meta_actor", "b"))(0, 7) = 1e3;
    meta.smoother().set_armed(true);
    for (int i = 0; i < 200; ++i) REQUIRE(meta.select_skill(s, rng, SelectMode::Sample) == 7);
    CHECK(meta.select_skill(s, rng, SelectMode::Greedy) == 7);
  }
  SUBCASE("unarmed: the skill is held for the episode and redrawn uniformly per episode") {
    CHECK_THROWS_AS(meta.select_skill(s, rng, SelectMode::Sample), ContractViolation);
    std::vector<double> counts(n, 0.0);
    for (int ep = 0; ep < 4000; ++ep) {
      meta.begin_episode(rng);
      const std::size_t z = meta.select_skill(s, rng, SelectMode::Sample);
      for (int t = 0; t < 5; ++t) {
        ModelState other = state_with({rng.normal(), rng.normal(), rng.normal(), rng.normal(), rng.normal()}, 6);
        REQUIRE(meta.select_skill(other, rng, SelectMode::Sample) == z);
        REQUIRE(meta.select_skill(other, rng, SelectMode::Greedy) == z);
      }
      counts[z] += 1.0;
    }
    CHECK(testing::chi_square_accepts(counts, std::vector<double>(n, 1.0 / n), 0.99));
  }
  SUBCASE("greedy choice is invariant to a positive temperature on the logits") {
    meta.smoother().set_armed(true);
    std::vector<std::size_t> before;
    std::vector<ModelState> states;
    for (int i = 0; i < 50; ++i) {
      states.push_back(state_with({rng.normal(), rng.normal(), rng.normal(), rng.normal(), rng.normal()}, 6));
      before.push_back(meta.select_skill(states.back(), rng, SelectMode::Greedy));
    }
    for (double c : {0.1, 3.0, 40.0}) {
      MetaController scaled = meta;
      scaled.actor().at(last_layer(meta.actor(), "meta_actor", "w")) *= c;
      scaled.actor().at(last_layer(meta.actor(), "meta_actor", "b")) *= c;
      for (std::size_t i = 0; i < states.size(); ++i)
        CHECK(scaled.select_skill(states[i], rng, SelectMode::Greedy) == before[i]);
    }
  }
}

TEST_CASE("unarmed meta training changes nothing") {
  Rng rng(2);
  WorldModel wm(tiny_wm(), rng);
  wm.init_reward_head(rng);
  SkillVQ vq(tiny_vq(4), 5, rng);
  SkillPolicySet skills(tiny_skills(), 5, 3, 2, rng);
  MetaController meta(tiny_meta(), 5, 4, rng);
  StateBatch start = wm.initial_batch(6);
  for (double& v : start.deter.values()) v = rng.uniform(-0.5, 0.5);

  {
    Tape tape;
    Rng r(3);
    MetaGraph g = build_meta_graph(tape, wm, vq.codebook(), skills, meta, start, r);
    for (const auto& v : g.rewards)
      for (double x : v.value().values()) REQUIRE(x == 0.0);
    for (const auto& v : g.values)
      for (double x : v.value().values()) REQUIRE(x == 0.0);
  }

  const std::string skill_actor = bytes(skills.ac().actor()), skill_critic = bytes(skills.ac().critic());
  const std::string actor = bytes(meta.actor()), critic = bytes(meta.critic());
  for (int i = 0; i < 5; ++i) {
    MetaTrainStats st = train_meta(wm, vq, skills, meta, start, rng);
    CHECK(st.skipped);
  }
  CHECK(bytes(skills.ac().actor()) == skill_actor);
  CHECK(bytes(skills.ac().critic()) == skill_critic);
  CHECK(bytes(meta.actor()) == actor);
  CHECK(bytes(meta.critic()) == critic);

  meta.smoother().observe(2e-4);
  MetaTrainStats st = train_meta(wm, vq, skills, meta, start, rng);
  CHECK_FALSE(st.skipped);
  CHECK(bytes(meta.actor()) != actor);
  CHECK(bytes(skills.ac().actor()) != skill_actor);
}

TEST_CASE("frozen skills stay bit-identical while the meta-controller trains") {
  Rng rng(4);
  WorldModel wm(tiny_wm(), rng);
  wm.init_reward_head(rng);
  SkillVQ vq(tiny_vq(4), 5, rng);
  SkillPolicySet skills(tiny_skills(), 5, 3, 2, rng);
  MetaController meta(tiny_meta(), 5, 4, rng);
  meta.smoother().set_armed(true);
  const StateBatch start = wm.initial_batch(4);
  const std::string skill_actor = bytes(skills.ac().actor());
  const std::string actor = bytes(meta.actor());
  for (int i = 0; i < 3; ++i) train_meta(wm, vq, skills, meta, start, rng, true);
  CHECK(bytes(skills.ac().actor()) == skill_actor);
  CHECK(bytes(meta.actor()) != actor);
}

TEST_CASE("meta losses match finite differences") {
  WorldModelConfig wc = tiny_wm();
  wc.stoch_mode = StochMode::Mean;
  Rng rng(5);
  WorldModel wm(wc, rng);
  wm.init_reward_head(rng);
  SkillVQ vq(tiny_vq(3), 5, rng);
  SkillPolicySet skills(tiny_skills(), 5, 3, 2, rng);
  MetaController meta(tiny_meta(), 5, 3, rng);
  meta.smoother().set_armed(true);
  StateBatch start = wm.initial_batch(4);
  for (double& v : start.deter.values()) v = rng.uniform(-0.5, 0.5);

  auto graph_loss = [&](int which) {
    Tape tape;
    Rng r(77);
    MetaGraph g = build_meta_graph(tape, wm, vq.codebook(), skills, meta, start, r);
    return (which == 0 ? g.actor_loss : which == 1 ? g.skill_loss : g.critic_loss).value().item();
  };
  Tape tape;
  Rng r(77);
  MetaGraph g = build_meta_graph(tape, wm, vq.codebook(), skills, meta, start, r);
  auto actor_grads = tape.backward(g.actor_loss, meta.actor());
  auto skill_grads = tape.backward(g.skill_loss, skills.ac().actor());
  auto critic_grads = tape.backward(g.critic_loss, meta.critic());

  auto na = testing::finite_difference(meta.actor(), [&] { return graph_loss(0); });
  auto ns = testing::finite_difference(skills.ac().actor(), [&] { return graph_loss(1); });
  // the critic regresses onto fixed targets from fixed states
  std::vector<Tensor> deters, targets;
  for (std::size_t t = 0; t < meta.config().horizon; ++t) {
    deters.push_back(g.rollout.states[t].deter.value());
    targets.push_back(g.returns[t].value());
  }
  auto nc = testing::finite_difference(meta.critic(), [&] {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < deters.size(); ++t) {
      Tape tp;
      Tensor v = meta.value(tp, tp.constant(deters[t])).value();
      for (std::size_t b = 0; b < v.rows(); ++b, ++n) total += 0.5 * (v[b] - targets[t][b]) * (v[b] - targets[t][b]);
    }
    return total / static_cast<double>(n);
  });
  CHECK(graph_loss(2) == doctest::Approx(g.critic_loss.value().item()).epsilon(1e-12));
  auto ra = testing::compare(actor_grads, na, 1e-6);
  auto rs = testing::compare(skill_grads, ns, 1e-6);
  auto rc = testing::compare(critic_grads, nc, 1e-6);
  INFO("actor " << ra.worst_name << " skill " << rs.worst_name << " critic " << rc.worst_name);
  CHECK(ra.worst < 1e-3);
  CHECK(rs.worst < 1e-3);
  CHECK(rc.worst < 1e-3);
}

TEST_CASE("score-function gradient has the sign of the analytic bandit gradient") {
  MetaConfig mc;
  mc.hidden = 4;
  mc.layers = 1;
  mc.horizon = 1;
  for (std::uint64_t seed : {1, 2, 3}) {
    testing::Bandit b = testing::make_bandit(seed, mc, 1000);
    testing::zero_all(b.meta->critic());
    // hidden layer bias gives the constant start state a non-zero feature vector
    Rng init(seed + 100);
    for (double& v : b.meta->actor().at("meta_actor.l0.b").values()) v = init.uniform(-1.0, 1.0);
    for (double& v : b.meta->actor().at("meta_actor.l1.b").values()) v = init.uniform(-1.0, 1.0);

    // exact expected rewards of each skill from the deterministic mean path
    std::vector<double> reward(2);
    for (std::size_t z = 0; z < 2; ++z) {
      const Tensor a = b.skills->mean_action(std::vector<double>(2, 0.0), b.vq->codebook().code(z));
      const double d0 = std::tanh(3.0 * std::tanh(3.0 * a[0]));
      reward[z] = 0.5 * std::tanh(d0) / std::tanh(1.0) + 0.5;
    }
    REQUIRE(reward[0] > 0.99);
    REQUIRE(reward[1] < 0.01);

    Tensor h = b.meta->actor().at("meta_actor.l0.b");
    for (double& x : h.values()) x = std::tanh(x);
    const auto p = b.meta->probabilities(std::vector<double>(2, 0.0));
    const double j = p[0] * reward[0] + p[1] * reward[1];
    // d J / d logit_k = p_k (R_k - J); the loss is -J so its gradient has the opposite sign
    std::vector<double> dlogit{p[0] * (reward[0] - j), p[1] * (reward[1] - j)};

    Tape tape;
    Rng r(seed);
    tape.freeze(b.wm->params());
    tape.freeze(b.wm->reward_params());
    tape.freeze(b.skills->ac().actor());
    MetaGraph g = build_meta_graph(tape, *b.wm, b.vq->codebook(), *b.skills, *b.meta, b.start, r);
    auto grads = tape.backward(g.actor_loss, b.meta->actor());
    const Tensor& gb = grads.at("meta_actor.l1.b");
    const Tensor& gw = grads.at("meta_actor.l1.w");
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(-gb(0, k) * dlogit[k] > 0.0);
      for (std::size_t i = 0; i < h.cols(); ++i) CHECK(-gw(i, k) * h[i] * dlogit[k] > 0.0);
    }
  }
}

TEST_CASE("two-skill bandit: the meta-controller learns the rewarding skill") {
  MetaConfig mc;
  mc.hidden = 16;
  mc.layers = 1;
  mc.actor_lr = 1e-2;
  mc.critic_lr = 1e-2;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    testing::Bandit b = testing::make_bandit(seed, mc, 32);
    Rng rng(seed);
    const ModelState s0 = b.wm->initial_state();
    int reached = -1;
    for (int step = 1; step <= 500; ++step) {
      train_meta(*b.wm, *b.vq, *b.skills, *b.meta, b.start, rng, true);
      if (reached < 0 && b.meta->probabilities(s0.deter)[0] > 0.9) reached = step;
    }
    INFO("seed " << seed << " reached p>0.9 at " << reached);
    CHECK(reached > 0);
    CHECK(b.meta->select_skill(s0, rng, SelectMode::Greedy) == 0);
  }
}

TEST_CASE("zero-shot evaluation") {
  Rng rng(6);
  WorldModelConfig wc = tiny_wm();
  WorldModel wm(wc, rng);
  SkillVQ vq(tiny_vq(3), 5, rng);
  SkillPolicySet skills(tiny_skills(), 5, 3, 2, rng);
  MetaController meta(tiny_meta(), 5, 3, rng);
  PointMassConfig env;
  env.max_steps = 20;

  EvalMetrics empty = zero_shot_eval(wm, vq, skills, meta, env, 0, rng);
  CHECK(empty.episodes == 0);
  CHECK(empty.returns.empty());
  auto j = empty.to_json();
  CHECK(j.contains("mean_return"));
  CHECK(j.contains("success_rate"));
  CHECK(j.contains("episodes"));

  EvalMetrics m = zero_shot_eval(wm, vq, skills, meta, env, 3, rng);
  CHECK(m.episodes == 3);
  CHECK(m.returns.size() == 3);
  CHECK(m.success_rate >= 0.0);
  CHECK(m.success_rate <= 1.0);
  CHECK_FALSE(meta.held_skill().has_value());
}
