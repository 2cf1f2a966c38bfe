#include "choreo/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "choreo/errors.hpp"

namespace choreo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty())
    throw ParseError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", &RunConfig::seed, "random seed (CHOREO_SEED overrides the config file)"},
      {"mode", &RunConfig::mode, "online or offline pretraining"},
      {"dataset", &RunConfig::dataset, "offline dataset (JSON lines)"},
      {"out_dir", &RunConfig::out_dir, "output directory"},
      {"env.max_steps", &RunConfig::env_max_steps, "episode length"},
      {"env.dt", &RunConfig::env_dt, "integration step"},
      {"env.start_x", &RunConfig::env_start_x, "start position x"},
      {"env.start_y", &RunConfig::env_start_y, "start position y"},
      {"env.goal_x", &RunConfig::env_goal_x, "goal x"},
      {"env.goal_y", &RunConfig::env_goal_y, "goal y"},
      {"env.goal_radius", &RunConfig::env_goal_radius, "goal radius"},
      {"env.sparse", &RunConfig::env_sparse, "sparse (true) or dense reward"},
      {"env.two_rooms", &RunConfig::env_two_rooms, "add the two-room wall"},
      {"pretrain.steps", &RunConfig::pretrain_steps, "env steps (online) or gradient steps (offline)"},
      {"pretrain.prefill", &RunConfig::pretrain_prefill, "random env steps before online training"},
      {"finetune.steps", &RunConfig::finetune_steps, "fine-tuning env steps"},
      {"finetune.freeze_skills", &RunConfig::freeze_skills, "keep skill actors fixed while fine-tuning"},
      {"train_every", &RunConfig::train_every, "env steps per update"},
      {"batch.B", &RunConfig::batch_size, "sequences per batch"},
      {"batch.T", &RunConfig::batch_length, "steps per sequence"},
      {"replay.capacity", &RunConfig::replay_capacity, "replay capacity in steps"},
      {"wm.deter", &RunConfig::wm_deter, "GRU state size"},
      {"wm.groups", &RunConfig::wm_groups, "categorical groups"},
      {"wm.classes", &RunConfig::wm_classes, "classes per group"},
      {"wm.hidden", &RunConfig::wm_hidden, "MLP width"},
      {"wm.layers", &RunConfig::wm_layers, "MLP depth"},
      {"wm.lr", &RunConfig::wm_lr, "world-model learning rate"},
      {"clip", &RunConfig::clip, "gradient norm clip"},
      {"codebook.N", &RunConfig::codebook_n, "number of skills"},
      {"codebook.d_z", &RunConfig::codebook_dz, "code dimension"},
      {"codebook.M", &RunConfig::codebook_m, "resampling period in batches"},
      {"codebook.beta", &RunConfig::codebook_beta, "commitment weight"},
      {"codebook.decay", &RunConfig::codebook_decay, "EMA decay"},
      {"codebook.hidden", &RunConfig::codebook_hidden, "autoencoder width"},
      {"codebook.layers", &RunConfig::codebook_layers, "autoencoder depth"},
      {"codebook.lr", &RunConfig::codebook_lr, "autoencoder learning rate"},
      {"codebook.resample", &RunConfig::codebook_resample, "enable code resampling"},
      {"skill.K", &RunConfig::skill_k, "nearest neighbours for the entropy reward"},
      {"skill.horizon", &RunConfig::skill_horizon, "imagination horizon"},
      {"skill.hidden", &RunConfig::skill_hidden, "actor/critic width"},
      {"skill.layers", &RunConfig::skill_layers, "actor/critic depth"},
      {"skill.imag_starts", &RunConfig::skill_imag_starts, "start states per imagination batch (0 = all)"},
      {"skill.gamma", &RunConfig::skill_gamma, "discount"},
      {"skill.lambda", &RunConfig::skill_lambda, "return mixing"},
      {"skill.actor_lr", &RunConfig::skill_actor_lr, "actor learning rate"},
      {"skill.critic_lr", &RunConfig::skill_critic_lr, "critic learning rate"},
      {"expl.mode", &RunConfig::expl_mode, "exploration reward in imagination: imagine or replay"},
      {"expl.imag_starts", &RunConfig::expl_imag_starts, "start states per exploration batch (0 = all)"},
      {"meta.hidden", &RunConfig::meta_hidden, "meta-controller width"},
      {"meta.layers", &RunConfig::meta_layers, "meta-controller depth"},
      {"meta.imag_starts", &RunConfig::meta_imag_starts, "start states per meta batch (0 = all)"},
      {"meta.actor_lr", &RunConfig::meta_actor_lr, "meta actor learning rate"},
      {"meta.critic_lr", &RunConfig::meta_critic_lr, "meta critic learning rate"},
      {"meta.skill_lr", &RunConfig::meta_skill_lr, "skill actor learning rate while fine-tuning"},
      {"meta.entropy", &RunConfig::meta_entropy, "meta actor entropy bonus"},
      {"smoother.threshold", &RunConfig::smoother_threshold, "reward that arms the smoother"},
      {"eval.episodes", &RunConfig::eval_episodes, "evaluation episodes"},
      {"eval.skill_every", &RunConfig::eval_skill_every, "steps per skill in skill-sweep evaluation"},
      {"eval.policy", &RunConfig::eval_policy, "meta, skills or random"},
      {"checkpoint.every", &RunConfig::checkpoint_every, "steps between checkpoints (0 = end only)"},
      {"log.every", &RunConfig::log_every, "updates between metric records"},
      {"finetune.from", &RunConfig::finetune_from, "pretraining run directory to fine-tune"},
      {"eval.from", &RunConfig::eval_from, "run directory to evaluate (default: out_dir)"},
      {"bench.batches", &RunConfig::bench_batches, "codebook benchmark batches"},
      {"bench.batch_size", &RunConfig::bench_batch_size, "codebook benchmark batch size"},
      {"bench.modes", &RunConfig::bench_modes, "mixture modes"},
      {"bench.dim", &RunConfig::bench_dim, "mixture dimension"},
      {"bench.seeds", &RunConfig::bench_seeds, "paired seeds"},
  };
  return keys;
}

namespace {
const ConfigKey& find_key(const std::string& key) {
  for (const auto& k : config_keys())
    if (k.name == key) return k;
  throw ParseError("unknown config key '" + key + "'");
}
}  // namespace

void set_config_value(RunConfig& config, const std::string& key, const std::string& raw) {
  const ConfigKey& k = find_key(key);
  const std::string value = trim(raw);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(config.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          config.*member = value;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") config.*member = true;
          else if (value == "false" || value == "0") config.*member = false;
          else throw ParseError("config key '" + key + "': expected true or false, got '" + value + "'");
        } else {
          config.*member = parse_number<T>(key, value);
        }
      },
      k.field);
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
  const ConfigKey& k = find_key(key);
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(config.*member)>;
        if constexpr (std::is_same_v<T, std::string>) return config.*member;
        else if constexpr (std::is_same_v<T, bool>) return config.*member ? "true" : "false";
        else if constexpr (std::is_same_v<T, double>) return format_double(config.*member);
        else return std::to_string(config.*member);
      },
      k.field);
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw StartupError("config file '" + path + "' not found");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

std::string config_to_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + get_config_value(config, k.name) + "\n";
  return out;
}

void apply_environment(RunConfig& config) {
  if (const char* s = std::getenv("CHOREO_SEED"); s != nullptr && *s != '\0') set_config_value(config, "seed", s);
}

void RunConfig::validate() const {
  if (mode != "online" && mode != "offline") throw StartupError("mode must be 'online' or 'offline'");
  if (codebook_n < 2) throw StartupError("codebook.N must be at least 2");
  if (codebook_m < 1) throw StartupError("codebook.M must be at least 1");
  if (log_every < 1) throw StartupError("log.every must be at least 1");
  if (train_every < 1) throw StartupError("train_every must be at least 1");
  if (batch_length < 2) throw StartupError("batch.T must be at least 2");
  if (batch_size < 1) throw StartupError("batch.B must be at least 1");
  if (env_max_steps < 1) throw StartupError("env.max_steps must be at least 1");
  if (!(env_dt > 0.0)) throw StartupError("env.dt must be positive");
  if (eval_skill_every < 1) throw StartupError("eval.skill_every must be at least 1");
  if (eval_policy != "meta" && eval_policy != "skills" && eval_policy != "random")
    throw StartupError("eval.policy must be meta, skills or random");
  parse_exploration_mode(expl_mode);
}

PointMassConfig RunConfig::env() const {
  PointMassConfig c;
  c.max_steps = static_cast<int>(env_max_steps);
  c.dt = env_dt;
  c.start = {env_start_x, env_start_y};
  c.goal = {env_goal_x, env_goal_y};
  c.goal_radius = env_goal_radius;
  c.sparse = env_sparse;
  c.two_rooms = env_two_rooms;
  return c;
}

WorldModelConfig RunConfig::world_model() const {
  WorldModelConfig c;
  c.obs_dim = PointMassEnv::kObsDim;
  c.act_dim = PointMassEnv::kActDim;
  c.deter = wm_deter;
  c.groups = wm_groups;
  c.classes = wm_classes;
  c.hidden = wm_hidden;
  c.layers = wm_layers;
  c.lr = wm_lr;
  c.clip = clip;
  return c;
}

SkillVQConfig RunConfig::vq() const {
  SkillVQConfig c;
  c.codes = codebook_n;
  c.code_dim = codebook_dz;
  c.hidden = codebook_hidden;
  c.layers = codebook_layers;
  c.beta = codebook_beta;
  c.decay = codebook_decay;
  c.resample_every = codebook_m;
  c.resample = codebook_resample;
  c.lr = codebook_lr;
  c.clip = clip;
  return c;
}

namespace {
ActorCriticConfig ac_config(const RunConfig& r) {
  ActorCriticConfig c;
  c.hidden = r.skill_hidden;
  c.layers = r.skill_layers;
  c.horizon = r.skill_horizon;
  c.gamma = r.skill_gamma;
  c.lambda = r.skill_lambda;
  c.actor_lr = r.skill_actor_lr;
  c.critic_lr = r.skill_critic_lr;
  c.clip = r.clip;
  return c;
}
}  // namespace

SkillConfig RunConfig::skills() const {
  SkillConfig c;
  c.ac = ac_config(*this);
  c.knn_k = skill_k;
  c.imag_starts = skill_imag_starts;
  return c;
}

ExplorationConfig RunConfig::exploration() const {
  ExplorationConfig c;
  c.ac = ac_config(*this);
  c.mode = parse_exploration_mode(expl_mode);
  c.imag_starts = expl_imag_starts;
  c.regressor_lr = wm_lr;
  return c;
}

MetaConfig RunConfig::meta() const {
  MetaConfig c;
  c.hidden = meta_hidden;
  c.layers = meta_layers;
  c.horizon = skill_horizon;
  c.gamma = skill_gamma;
  c.lambda = skill_lambda;
  c.actor_lr = meta_actor_lr;
  c.critic_lr = meta_critic_lr;
  c.skill_lr = meta_skill_lr;
  c.clip = clip;
  c.entropy = meta_entropy;
  c.threshold = smoother_threshold;
  c.imag_starts = meta_imag_starts;
  return c;
}

}  // namespace choreo
