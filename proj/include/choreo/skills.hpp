#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "choreo/actor_critic.hpp"
#include "choreo/codebook.hpp"

namespace choreo {

// Indices of the k nearest rows to each row (self excluded), nearest first,
// ties broken by lower index.
std::vector<std::vector<std::size_t>> knn_indices(const Tensor& points, std::size_t k);

// r_ent(s) = (1/K) * sum of distances to the K nearest other states.
std::vector<double> knn_entropy_reward(const Tensor& states, std::size_t k);
// Same on a tape ([N, d] -> [N, 1]); neighbours are chosen from the values and
// gradients flow through the distances.
Var knn_entropy_reward(Var states, std::size_t k);

// r_code(s) = -||D(z) - s||; `targets` holds D(z) per row.
std::vector<double> code_reward(const Tensor& states, const Tensor& targets);
Var code_reward(Var states, const Tensor& targets);

struct SkillConfig {
  ActorCriticConfig ac;
  std::size_t knn_k = 30;
  std::size_t imag_starts = 0;  // start states per update (0 = all)
};

// Skill-conditioned actor-critic: input is [deter, code vector].
class SkillPolicySet {
 public:
  SkillPolicySet(SkillConfig config, std::size_t deter_dim, std::size_t code_dim, std::size_t act_dim, Rng& rng);

  const SkillConfig& config() const { return config_; }
  ActorCritic& ac() { return ac_; }
  const ActorCritic& ac() const { return ac_; }
  std::size_t deter_dim() const { return deter_dim_; }
  std::size_t code_dim() const { return code_dim_; }

  static Var input(Var deter, Var codes) { return ops::concat_cols({deter, codes}); }
  Tensor mean_action(std::span<const double> deter, std::span<const double> code) const;
  Tensor sample_action(std::span<const double> deter, std::span<const double> code, Rng& rng) const;

 private:
  SkillConfig config_;
  std::size_t deter_dim_, code_dim_;
  ActorCritic ac_;
};

// r_skill = r_ent + r_code over an imagined trajectory: the entropy term uses
// all imagined states s_1..s_H of the batch as the particle pool.
std::vector<Tensor> skill_reward(const ImaginedTrajectory& trajectory, const SkillVQ& vq, std::size_t k);

// Policy input and r_skill reward closures for a fixed assignment of codes to
// start states, as used by train_skills.
struct SkillObjective {
  Tensor code_vectors;
  Tensor targets;  // D(z) per batch element
  PolicyInputFn input;
  RolloutRewardFn reward;
  std::shared_ptr<std::pair<double, double>> last_terms;  // mean (r_ent, r_code) of the last call
};

SkillObjective skill_objective(const SkillVQ& vq, std::span<const std::size_t> codes, std::size_t k);

struct SkillTrainStats {
  ActorCriticStats ac;
  double r_ent = 0.0;
  double r_code = 0.0;
  ImaginedTrajectory trajectory;
};

// Samples one code per start state, imagines with the skill actor and updates
// actor and critic on r_skill. World model and autoencoder are left untouched.
SkillTrainStats train_skills(const WorldModel& wm, const SkillVQ& vq, SkillPolicySet& policies,
                             const StateBatch& start, Rng& rng);

}  // namespace choreo
