#include "choreo/skills.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "choreo/errors.hpp"

namespace choreo {

namespace {
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> view(const Tensor& t) { return {t.values().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }
}  // namespace

std::vector<std::vector<std::size_t>> knn_indices(const Tensor& points, std::size_t k) {
  const std::size_t n = points.rows();
  if (n <= k) throw ContractViolation("knn: batch of " + std::to_string(n) + " states needs more than K = " + std::to_string(k));
  CHOREO_REQUIRE(k >= 1, "knn: K must be positive");
  auto x = view(points);
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  RowMatrix d = -2.0 * x * x.transpose();
  d.colwise() += sq;
  d.rowwise() += sq.transpose();

  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::size_t> order(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order[w++] = j;
    auto closer = [&](std::size_t a, std::size_t b) {
      const double da = d(i, a), db = d(i, b);
      return da < db || (da == db && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), closer);
    out[i].assign(order.begin(), order.begin() + k);
  }
  return out;
}

std::vector<double> knn_entropy_reward(const Tensor& states, std::size_t k) {
  const auto nbrs = knn_indices(states, k);
  std::vector<double> r(states.rows());
  for (std::size_t i = 0; i < r.size(); ++i) {
    double total = 0.0;
    for (std::size_t j : nbrs[i]) total += std::sqrt(squared_distance(states.row_span(i), states.row_span(j)));
    r[i] = total / static_cast<double>(k);
  }
  return r;
}

Var knn_entropy_reward(Var states, std::size_t k) {
  const auto nbrs = knn_indices(states.value(), k);
  const std::size_t n = nbrs.size();
  std::vector<std::size_t> self(n * k), other(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      self[i * k + j] = i;
      other[i * k + j] = nbrs[i][j];
    }
  Var dist = ops::l2_norm(ops::gather_rows(states, self) - ops::gather_rows(states, other));
  return ops::scale(ops::sum_cols(ops::reshape(dist, n, k)), 1.0 / static_cast<double>(k));
}

std::vector<double> code_reward(const Tensor& states, const Tensor& targets) {
  CHOREO_REQUIRE(states.same_shape(targets), "code_reward: states/targets shape mismatch");
  std::vector<double> r(states.rows());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = -std::sqrt(squared_distance(states.row_span(i), targets.row_span(i)));
  return r;
}

Var code_reward(Var states, const Tensor& targets) {
  CHOREO_REQUIRE(states.value().same_shape(targets), "code_reward: states/targets shape mismatch");
  return -ops::l2_norm(states - states.tape->constant(targets));
}

SkillPolicySet::SkillPolicySet(SkillConfig config, std::size_t deter_dim, std::size_t code_dim, std::size_t act_dim,
                               Rng& rng)
    : config_(config), deter_dim_(deter_dim), code_dim_(code_dim),
      ac_("skill", deter_dim + code_dim, act_dim, config.ac, rng) {}

namespace {
Tensor join(std::span<const double> a, std::span<const double> b) {
  std::vector<double> v(a.begin(), a.end());
  v.insert(v.end(), b.begin(), b.end());
  return Tensor::row(v);
}

Tensor code_rows(const Codebook& cb, std::span<const std::size_t> codes) {
  Tensor out = Tensor::zeros(codes.size(), cb.dim());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    auto c = cb.codes().row_span(codes[i]);
    std::copy(c.begin(), c.end(), out.row_span(i).begin());
  }
  return out;
}

Tensor stack_deter(const std::vector<StateBatch>& states) {
  const std::size_t b = states.front().size(), d = states.front().deter.cols();
  Tensor out = Tensor::zeros((states.size() - 1) * b, d);
  for (std::size_t t = 1; t < states.size(); ++t)
    std::copy(states[t].deter.values().begin(), states[t].deter.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>((t - 1) * b * d));
  return out;
}
}  // namespace

Tensor SkillPolicySet::mean_action(std::span<const double> deter, std::span<const double> code) const {
  return ac_.mean_action(join(deter, code));
}

Tensor SkillPolicySet::sample_action(std::span<const double> deter, std::span<const double> code, Rng& rng) const {
  return ac_.sample_action(join(deter, code), rng);
}

std::vector<Tensor> skill_reward(const ImaginedTrajectory& trajectory, const SkillVQ& vq, std::size_t k) {
  CHOREO_REQUIRE(trajectory.states.size() >= 2, "skill_reward needs at least one imagined step");
  const std::size_t h = trajectory.states.size() - 1, b = trajectory.states.front().size();
  CHOREO_REQUIRE(trajectory.codes.size() == b, "skill_reward: one code per batch element required");
  for (std::size_t c : trajectory.codes) CHOREO_REQUIRE(c < vq.codebook().size(), "skill_reward: code out of range");
  const Tensor targets = vq.decode(code_rows(vq.codebook(), trajectory.codes));
  const auto ent = knn_entropy_reward(stack_deter(trajectory.states), k);
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < h; ++t) {
    const auto code = code_reward(trajectory.states[t + 1].deter, targets);
    Tensor r = Tensor::zeros(b, 1);
    for (std::size_t i = 0; i < b; ++i) r[i] = ent[t * b + i] + code[i];
    out.push_back(r);
  }
  return out;
}

SkillObjective skill_objective(const SkillVQ& vq, std::span<const std::size_t> codes, std::size_t k) {
  SkillObjective obj;
  obj.code_vectors = code_rows(vq.codebook(), codes);
  obj.targets = vq.decode(obj.code_vectors);
  obj.last_terms = std::make_shared<std::pair<double, double>>(0.0, 0.0);
  const std::size_t b = codes.size();
  obj.input = [code_vectors = obj.code_vectors](Tape& tape, const StateVars& s) {
    return SkillPolicySet::input(s.deter, tape.constant(code_vectors));
  };
  obj.reward = [targets = obj.targets, terms = obj.last_terms, b, k](Tape&, const TapeRollout& roll) {
    const std::size_t h = roll.actions.size();
    std::vector<Var> deter;
    for (std::size_t t = 1; t <= h; ++t) deter.push_back(roll.states[t].deter);
    Var ent = knn_entropy_reward(ops::concat_rows(deter), k);
    std::vector<Var> out;
    double ent_sum = 0.0, code_sum = 0.0;
    for (std::size_t t = 0; t < h; ++t) {
      Var e = ops::slice_rows(ent, t * b, (t + 1) * b);
      Var c = code_reward(deter[t], targets);
      for (double v : e.value().values()) ent_sum += v;
      for (double v : c.value().values()) code_sum += v;
      out.push_back(e + c);
    }
    const double n = static_cast<double>(h * b);
    *terms = {ent_sum / n, code_sum / n};
    return out;
  };
  return obj;
}

SkillTrainStats train_skills(const WorldModel& wm, const SkillVQ& vq, SkillPolicySet& policies,
                             const StateBatch& start_states, Rng& rng) {
  const StateBatch start = start_states.select(choose_rows(start_states.size(), policies.config().imag_starts, rng));
  std::vector<std::size_t> codes(start.size());
  for (auto& c : codes) c = sample_skill_uniform(vq.codebook().size(), rng);
  SkillObjective obj = skill_objective(vq, codes, policies.config().knn_k);

  SkillTrainStats stats;
  stats.ac = imagine_and_update(wm, policies.ac(), start, obj.input, obj.reward, rng, {&vq.params()}, &stats.trajectory);
  stats.trajectory.codes = codes;
  stats.r_ent = obj.last_terms->first;
  stats.r_code = obj.last_terms->second;
  return stats;
}

}  // namespace choreo
