#pragma once

#include <optional>

#include "choreo/env.hpp"
#include "choreo/skills.hpp"

namespace choreo {

// Gates predicted rewards and values to exactly zero until a real reward of at
// least `threshold` has been seen. Arming is one-way.
class RewardSmoother {
 public:
  explicit RewardSmoother(double threshold = 1e-4) : threshold_(threshold) {}
  void observe(double reward) {
    if (reward >= threshold_) armed_ = true;
  }
  double smooth(double predicted) const { return armed_ ? predicted : 0.0; }
  bool armed() const { return armed_; }
  double threshold() const { return threshold_; }
  void set_armed(bool armed) { armed_ = armed_ || armed; }

 private:
  double threshold_;
  bool armed_ = false;
};

enum class SelectMode { Sample, Greedy };

struct MetaConfig {
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t horizon = 15;
  double gamma = 0.99;
  double lambda = 0.95;
  double actor_lr = 8e-5;
  double critic_lr = 8e-5;
  double skill_lr = 8e-5;
  double clip = 100.0;
  double entropy = 1e-3;
  double threshold = 1e-4;
  std::size_t imag_starts = 0;
};

// Policy over skill indices pi_meta(z | s_t) with critic v_meta(s_t), both on
// the deterministic state.
class MetaController {
 public:
  MetaController(MetaConfig config, std::size_t deter_dim, std::size_t skills, Rng& rng);

  const MetaConfig& config() const { return config_; }
  std::size_t skills() const { return skills_; }
  ParamSet& actor() { return actor_; }
  const ParamSet& actor() const { return actor_; }
  ParamSet& critic() { return critic_; }
  const ParamSet& critic() const { return critic_; }
  RewardSmoother& smoother() { return smoother_; }
  const RewardSmoother& smoother() const { return smoother_; }

  Var logits(Tape& tape, Var deter) const;
  Var value(Tape& tape, Var deter) const;
  std::vector<double> probabilities(std::span<const double> deter) const;

  // Draws the skill held for a new episode while the smoother is unarmed.
  void begin_episode(Rng& rng);
  std::optional<std::size_t> held_skill() const { return held_; }
  void set_held_skill(std::optional<std::size_t> z) { held_ = z; }

  // Unarmed: the skill drawn at episode start. Armed: a sample from pi_meta or
  // its argmax (lowest index on ties).
  std::size_t select_skill(const ModelState& state, Rng& rng, SelectMode mode) const;

 private:
  MetaConfig config_;
  std::size_t skills_;
  ParamSet actor_, critic_;
  MlpSpec actor_spec_, critic_spec_;
  RewardSmoother smoother_;
  std::optional<std::size_t> held_;
};

struct MetaGraph {
  TapeRollout rollout;
  std::vector<std::vector<std::size_t>> choices;  // H x B skill indices
  std::vector<Var> rewards, values, returns;
  Var skill_loss;   // -mean G (pathwise, into the skill actor)
  Var actor_loss;   // score-function loss with baseline and entropy bonus
  Var critic_loss;
  double entropy = 0.0;
};

// Imagination under pi_meta (skill drawn every step) and the skill actor; reward
// head and critic outputs gated by the smoother.
MetaGraph build_meta_graph(Tape& tape, const WorldModel& wm, const Codebook& codebook, const SkillPolicySet& skills,
                           const MetaController& meta, const StateBatch& start, Rng& rng);

struct MetaTrainStats {
  bool skipped = true;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double skill_loss = 0.0;
  double reward = 0.0;
  double ret = 0.0;
  double entropy = 0.0;
};

// Skipped entirely (no parameter or optimiser change) while the smoother is
// unarmed. With freeze_skills the skill actor is never updated.
MetaTrainStats train_meta(const WorldModel& wm, const SkillVQ& vq, SkillPolicySet& skills, MetaController& meta,
                          const StateBatch& start_states, Rng& rng, bool freeze_skills = false);

struct EvalMetrics {
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::vector<double> returns;
  std::vector<bool> successes;
  nlohmann::json to_json() const;
};

// Greedy meta-controller with mean skill actions on fresh environment episodes.
// Nothing is trained; the controller is copied so its held skill is untouched.
EvalMetrics zero_shot_eval(const WorldModel& wm, const SkillVQ& vq, const SkillPolicySet& skills,
                           MetaController meta, const PointMassConfig& env, std::size_t episodes, Rng& rng);

}  // namespace choreo
