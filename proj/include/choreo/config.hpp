#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "choreo/adaptation.hpp"
#include "choreo/codebook.hpp"
#include "choreo/env.hpp"
#include "choreo/exploration.hpp"
#include "choreo/skills.hpp"
#include "choreo/world_model.hpp"

namespace choreo {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string mode = "online";  // online | offline
  std::string dataset;
  std::string out_dir = "run";

  std::uint64_t env_max_steps = 200;
  double env_dt = 0.02;
  double env_start_x = 0.0, env_start_y = 0.0;
  double env_goal_x = 0.5, env_goal_y = 0.5;
  double env_goal_radius = 0.1;
  bool env_sparse = true;
  bool env_two_rooms = false;

  std::uint64_t pretrain_steps = 50000;
  std::uint64_t pretrain_prefill = 1000;
  std::uint64_t finetune_steps = 10000;
  bool freeze_skills = false;
  std::uint64_t train_every = 10;
  std::uint64_t batch_size = 16;
  std::uint64_t batch_length = 16;
  std::uint64_t replay_capacity = 1000000;

  std::uint64_t wm_deter = 64, wm_groups = 8, wm_classes = 8, wm_hidden = 128, wm_layers = 2;
  double wm_lr = 3e-4;
  double clip = 100.0;

  std::uint64_t codebook_n = 64, codebook_dz = 16, codebook_m = 200, codebook_hidden = 128, codebook_layers = 2;
  double codebook_beta = 0.25, codebook_decay = 0.99, codebook_lr = 3e-4;
  bool codebook_resample = true;

  std::uint64_t skill_k = 30, skill_horizon = 15, skill_hidden = 128, skill_layers = 2, skill_imag_starts = 64;
  double skill_gamma = 0.99, skill_lambda = 0.95, skill_actor_lr = 8e-5, skill_critic_lr = 8e-5;

  std::string expl_mode = "imagine";
  std::uint64_t expl_imag_starts = 64;

  std::uint64_t meta_hidden = 128, meta_layers = 2, meta_imag_starts = 64;
  double meta_actor_lr = 8e-5, meta_critic_lr = 8e-5, meta_skill_lr = 8e-5, meta_entropy = 1e-3;
  double smoother_threshold = 1e-4;

  std::uint64_t eval_episodes = 10;
  std::uint64_t eval_skill_every = 50;
  std::string eval_policy = "meta";  // meta | skills | random

  std::uint64_t checkpoint_every = 0;  // env/gradient steps between checkpoints (0 = end only)
  std::uint64_t log_every = 10;        // updates between metric records
  std::string finetune_from;           // pretraining run directory
  std::string eval_from;               // run directory to evaluate (default: out_dir)
  std::uint64_t bench_batches = 10000, bench_batch_size = 128, bench_modes = 64, bench_dim = 16, bench_seeds = 3;

  bool operator==(const RunConfig&) const = default;

  // Derived module configurations.
  PointMassConfig env() const;
  WorldModelConfig world_model() const;
  SkillVQConfig vq() const;
  SkillConfig skills() const;
  ExplorationConfig exploration() const;
  MetaConfig meta() const;
  bool online() const { return mode == "online"; }

  void validate() const;
};

using ConfigField = std::variant<std::uint64_t RunConfig::*, double RunConfig::*, bool RunConfig::*, std::string RunConfig::*>;

struct ConfigKey {
  std::string name;
  ConfigField field;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

// key=value assignment; unknown keys and malformed values raise ParseError.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

// Flat `key = value` text, one per line, '#' comments.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});
std::string config_to_text(const RunConfig& config);

// Applies CHOREO_SEED from the environment when set.
void apply_environment(RunConfig& config);

}  // namespace choreo
