#include "choreo/harness.hpp"

#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "choreo/dataset.hpp"
#include "choreo/errors.hpp"

namespace choreo {

namespace fs = std::filesystem;

RunLock::RunLock(const std::string& dir) {
  fs::create_directories(dir);
  path_ = (fs::path(dir) / "LOCK").string();
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (FILE* f = std::fopen(path_.c_str(), "wx")) {
      std::fprintf(f, "%ld\n", static_cast<long>(getpid()));
      std::fclose(f);
      return;
    }
    long pid = 0;
    if (FILE* f = std::fopen(path_.c_str(), "r")) {
      if (std::fscanf(f, "%ld", &pid) != 1) pid = 0;
      std::fclose(f);
    }
    if (pid > 0 && kill(static_cast<pid_t>(pid), 0) == 0)
      throw StartupError("run directory '" + dir + "' is locked by process " + std::to_string(pid));
    fs::remove(path_);
  }
  throw StartupError("cannot lock run directory '" + dir + "'");
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

const char* kStateMagic = "choreo-run-state";

void write_vec(std::ostream& out, const std::vector<double>& v) {
  binio::write_u64(out, v.size());
  for (double x : v) binio::write_f64(out, x);
}

std::vector<double> read_vec(std::istream& in) {
  const auto n = binio::read_u64(in);
  if (n > (1u << 24)) throw ParseError("implausible vector length in run state");
  std::vector<double> v(n);
  for (double& x : v) x = binio::read_f64(in);
  return v;
}

void write_rows(std::ostream& out, const std::vector<std::vector<double>>& rows) {
  binio::write_u64(out, rows.size());
  for (const auto& r : rows) write_vec(out, r);
}

std::vector<std::vector<double>> read_rows(std::istream& in) {
  const auto n = binio::read_u64(in);
  if (n > (1u << 24)) throw ParseError("implausible episode length in run state");
  std::vector<std::vector<double>> rows(n);
  for (auto& r : rows) r = read_vec(in);
  return rows;
}

void write_replay(std::ostream& out, const ReplayBuffer& replay) {
  binio::write_u64(out, replay.capacity());
  binio::write_u64(out, replay.num_episodes());
  for (const auto& ep : replay.episodes()) {
    write_rows(out, ep.obs);
    write_rows(out, ep.act);
    write_vec(out, ep.rew);
    binio::write_string(out, ep.meta.dump());
  }
}

ReplayBuffer read_replay(std::istream& in) {
  ReplayBuffer replay(binio::read_u64(in));
  const auto n = binio::read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    Episode ep;
    ep.obs = read_rows(in);
    ep.act = read_rows(in);
    ep.rew = read_vec(in);
    ep.meta = nlohmann::json::parse(binio::read_string(in));
    replay.add_episode(std::move(ep));
  }
  return replay;
}

std::string resumable_text(RunConfig c) {
  c.out_dir.clear();
  return config_to_text(c);
}

std::string first_difference(const std::string& a, const std::string& b) {
  std::istringstream ia(a), ib(b);
  std::string la, lb;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(ia, la));
    const bool gb = static_cast<bool>(std::getline(ib, lb));
    if (!ga && !gb) return "";
    if (la != lb) return (ga ? la : lb).substr(0, (ga ? la : lb).find(" ="));
  }
}

void truncate_file(const fs::path& path, std::uint64_t bytes) {
  if (!fs::exists(path)) {
    if (bytes != 0) throw StartupError("cannot resume: '" + path.string() + "' is missing");
    std::ofstream(path).close();
    return;
  }
  if (fs::file_size(path) < bytes) throw StartupError("cannot resume: '" + path.string() + "' is shorter than recorded");
  fs::resize_file(path, bytes);
}

// One pretraining or fine-tuning run: owns the agent, environment, replay and
// every random stream, and can serialise all of it for an exact resume.
class Runner {
 public:
  Runner(const RunConfig& config, std::string phase, const RunControl& control)
      : cfg_(config), phase_(std::move(phase)), control_(control), out_(config.out_dir),
        ckpt_(out_ / "checkpoint"), root_(config.seed), env_(config.env()), replay_(config.replay_capacity) {
    Rng init = root_.split();
    act_rng_ = root_.split();
    train_rng_ = root_.split();
    agent_ = std::make_unique<Agent>(cfg_, init);
    if (finetune()) {
      agent_->begin_finetune(init);
      if (!resuming()) {
        if (cfg_.finetune_from.empty()) throw StartupError("finetune requires finetune.from (a pretraining run directory)");
        agent_->load((fs::path(cfg_.finetune_from) / "checkpoint").string(), false);
      }
    } else if (!cfg_.online()) {
      if (cfg_.dataset.empty()) throw StartupError("offline pretraining requires a dataset path");
      ReplayBuffer loaded = load_offline_dataset(cfg_.dataset, cfg_.replay_capacity);
      for (auto ep : loaded.episodes()) {
        std::fill(ep.rew.begin(), ep.rew.end(), 0.0);
        replay_.add_episode(std::move(ep));
      }
      if (replay_.window_count(cfg_.batch_length) == 0)
        throw StartupError("dataset '" + cfg_.dataset + "' has no episode with batch.T steps");
    }
    hist_.assign(cfg_.codebook_n, 0);
  }

  PhaseResult run() {
    const std::uint64_t budget = finetune() ? cfg_.finetune_steps : cfg_.pretrain_steps;
    if (resuming()) {
      restore();
      if (result_.complete) return result_;
    } else {
      fs::create_directories(out_);
      std::ofstream(out_ / "config.txt") << config_to_text(cfg_);
      std::ofstream(out_ / "metrics.jsonl", std::ios::trunc).close();
      std::ofstream(out_ / "episodes.jsonl", std::ios::trunc).close();
    }
    metrics_.open(out_ / "metrics.jsonl", std::ios::app | std::ios::binary);
    episodes_out_.open(out_ / "episodes.jsonl", std::ios::app | std::ios::binary);

    while (result_.steps < budget) {
      if (finetune() || cfg_.online()) {
        act_once();
        ++result_.steps;
        if (result_.steps >= prefill() && result_.steps % cfg_.train_every == 0 &&
            replay_.window_count(cfg_.batch_length) > 0)
          update();
      } else {
        update();
        ++result_.steps;
      }
      if (control_.halt_after != 0 && result_.steps == control_.halt_after && result_.steps < budget) {
        metrics_.flush();
        episodes_out_.flush();
        return result_;
      }
      if (cfg_.checkpoint_every != 0 && result_.steps % cfg_.checkpoint_every == 0 && result_.steps < budget)
        checkpoint();
    }
    result_.complete = true;
    checkpoint();
    return result_;
  }

 private:
  bool finetune() const { return phase_ == "finetune"; }
  bool resuming() const { return control_.resume && fs::exists(ckpt_ / "run_state.bin"); }
  std::uint64_t prefill() const { return finetune() ? 0 : cfg_.pretrain_prefill; }

  void begin_episode() {
    obs_ = env_.reset();
    prev_.assign(PointMassEnv::kActDim, 0.0);
    rew_ = 0.0;
    first_ = true;
    need_reset_ = false;
    state_ = agent_->wm.initial_state();
    ep_return_ = 0.0;
    ep_success_ = false;
    std::fill(hist_.begin(), hist_.end(), 0);
    if (finetune()) agent_->meta->begin_episode(act_rng_);
  }

  std::vector<double> choose_action() {
    if (finetune()) {
      const std::size_t z = agent_->meta->select_skill(state_, act_rng_, SelectMode::Sample);
      ++hist_[z];
      return agent_->skills.sample_action(state_.deter, agent_->vq.codebook().code(z), act_rng_).values();
    }
    if (result_.steps < prefill() || !agent_->expl)
      return {act_rng_.uniform(-1.0, 1.0), act_rng_.uniform(-1.0, 1.0)};
    return agent_->expl->sample_action(state_.deter, act_rng_).values();
  }

  void act_once() {
    if (need_reset_) begin_episode();
    replay_.add(obs_, prev_, rew_, first_);
    first_ = false;
    state_ = agent_->wm.posterior_step(state_, prev_, obs_, act_rng_);
    std::vector<double> action = choose_action();
    StepResult r = env_.step(action);
    prev_ = std::move(action);
    obs_ = std::move(r.obs);
    if (finetune()) {
      rew_ = r.reward;
      ep_return_ += r.reward;
      ep_success_ = ep_success_ || env_.in_goal();
      agent_->meta->smoother().observe(r.reward);
    } else {
      rew_ = 0.0;
    }
    if (r.done) {
      replay_.add(obs_, prev_, rew_, false);
      end_episode();
      need_reset_ = true;
    }
  }

  void end_episode() {
    ++result_.episodes;
    if (!finetune()) return;
    result_.returns.push_back(ep_return_);
    result_.successes.push_back(ep_success_);
    nlohmann::json j{{"step", result_.steps + 1}, {"phase", phase_}, {"return", ep_return_},
                     {"success", ep_success_}, {"skill_histogram", hist_}};
    episodes_out_ << j.dump() << '\n';
  }

  void log(const std::string& key, double value) {
    nlohmann::json j{{"step", result_.steps}, {"phase", phase_}, {"key", key}, {"value", value}};
    metrics_ << j.dump() << '\n';
  }

  void update() {
    const SequenceBatch batch = replay_.sample_batch(cfg_.batch_size, cfg_.batch_length, train_rng_);
    Agent& a = *agent_;
    const WmTrainStats wst = a.wm.train_step(batch, train_rng_);
    ++result_.updates;
    const bool record = result_.updates % cfg_.log_every == 0;
    if (record) {
      log("wm/loss", wst.loss);
      log("wm/kl", wst.kl);
      log("wm/recon", wst.recon);
    }
    if (finetune()) {
      const MetaTrainStats ms = train_meta(a.wm, a.vq, a.skills, *a.meta, wst.states, train_rng_, cfg_.freeze_skills);
      if (record) {
        log("wm/reward", wst.reward);
        log("meta/armed", a.meta->smoother().armed() ? 1.0 : 0.0);
        if (!ms.skipped) {
          log("meta/actor_loss", ms.actor_loss);
          log("meta/critic_loss", ms.critic_loss);
          log("meta/skill_loss", ms.skill_loss);
          log("meta/reward", ms.reward);
          log("meta/return", ms.ret);
          log("meta/entropy", ms.entropy);
        }
      }
      return;
    }
    const VqStats vs = a.vq.train_step(wst.states.deter, train_rng_);
    const SkillTrainStats ss = train_skills(a.wm, a.vq, a.skills, wst.states, train_rng_);
    std::optional<ExplorationStats> es;
    if (a.expl) es = train_exploration(a.wm, *a.expl, wst, train_rng_);
    if (record) {
      const auto mask = a.vq.codebook().active_mask(cfg_.codebook_m);
      log("vq/loss", vs.loss);
      log("vq/recon", vs.recon);
      log("vq/active", static_cast<double>(std::count(mask.begin(), mask.end(), true)));
      log("vq/resampled", static_cast<double>(vs.resampled.size()));
      log("skill/r_ent", ss.r_ent);
      log("skill/r_code", ss.r_code);
      log("skill/actor_loss", ss.ac.actor_loss);
      log("skill/critic_loss", ss.ac.critic_loss);
      if (es) {
        log("expl/reward", es->ac.reward);
        log("expl/actor_loss", es->ac.actor_loss);
        log("expl/regressor_loss", es->regressor_loss);
      }
    }
  }

  void checkpoint() {
    metrics_.flush();
    episodes_out_.flush();
    const fs::path tmp = out_ / "checkpoint.tmp";
    fs::remove_all(tmp);
    agent_->save(tmp.string());
    {
      std::ofstream out(tmp / "run_state.bin", std::ios::binary);
      if (!out) throw StartupError("cannot write run state");
      write_state(out);
    }
    fs::remove_all(ckpt_);
    fs::rename(tmp, ckpt_);
  }

  void write_state(std::ostream& out) const {
    binio::write_string(out, kStateMagic);
    binio::write_u8(out, kCheckpointVersion);
    binio::write_string(out, phase_);
    binio::write_string(out, resumable_text(cfg_));
    binio::write_u64(out, result_.steps);
    binio::write_u64(out, result_.updates);
    binio::write_u64(out, result_.episodes);
    binio::write_u8(out, result_.complete ? 1 : 0);
    binio::write_string(out, act_rng_.serialize());
    binio::write_string(out, train_rng_.serialize());
    binio::write_f64(out, env_.position()[0]);
    binio::write_f64(out, env_.position()[1]);
    binio::write_f64(out, env_.velocity()[0]);
    binio::write_f64(out, env_.velocity()[1]);
    binio::write_u64(out, static_cast<std::uint64_t>(env_.steps()));
    binio::write_u8(out, env_.done() ? 1 : 0);
    binio::write_u64(out, env_.clipped_actions());
    binio::write_u8(out, need_reset_ ? 1 : 0);
    binio::write_u8(out, first_ ? 1 : 0);
    write_vec(out, state_.deter);
    write_vec(out, state_.stoch);
    write_vec(out, state_.logits);
    write_vec(out, obs_);
    write_vec(out, prev_);
    binio::write_f64(out, rew_);
    binio::write_f64(out, ep_return_);
    binio::write_u8(out, ep_success_ ? 1 : 0);
    binio::write_u64(out, hist_.size());
    for (auto h : hist_) binio::write_u64(out, h);
    write_vec(out, result_.returns);
    binio::write_u64(out, result_.successes.size());
    for (bool s : result_.successes) binio::write_u8(out, s ? 1 : 0);
    const bool own_replay = finetune() || cfg_.online();
    binio::write_u8(out, own_replay ? 1 : 0);
    if (own_replay) write_replay(out, replay_);
    binio::write_u64(out, fs::file_size(out_ / "metrics.jsonl"));
    binio::write_u64(out, fs::file_size(out_ / "episodes.jsonl"));
  }

  void restore() {
    std::ifstream in(ckpt_ / "run_state.bin", std::ios::binary);
    if (!in) throw StartupError("cannot read run state in '" + ckpt_.string() + "'");
    try {
      if (binio::read_string(in) != kStateMagic) throw StartupError("run_state: not a run state file");
      const auto version = binio::read_u8(in);
      if (version != kCheckpointVersion)
        throw StartupError("run_state: checkpoint version " + std::to_string(version) + " unsupported");
      const auto phase = binio::read_string(in);
      if (phase != phase_) throw StartupError("cannot resume: checkpoint belongs to phase '" + phase + "'");
      const auto saved = binio::read_string(in);
      const auto diff = first_difference(saved, resumable_text(cfg_));
      if (!diff.empty()) throw StartupError("cannot resume: config key '" + diff + "' differs from the checkpoint");
      agent_->load(ckpt_.string(), finetune());
      result_.steps = binio::read_u64(in);
      result_.updates = binio::read_u64(in);
      result_.episodes = binio::read_u64(in);
      result_.complete = binio::read_u8(in) != 0;
      act_rng_.deserialize(binio::read_string(in));
      train_rng_.deserialize(binio::read_string(in));
      std::array<double, 2> pos{}, vel{};
      pos[0] = binio::read_f64(in);
      pos[1] = binio::read_f64(in);
      vel[0] = binio::read_f64(in);
      vel[1] = binio::read_f64(in);
      const auto steps = static_cast<int>(binio::read_u64(in));
      const bool done = binio::read_u8(in) != 0;
      const auto clipped = binio::read_u64(in);
      env_.restore(pos, vel, steps, done, clipped);
      need_reset_ = binio::read_u8(in) != 0;
      first_ = binio::read_u8(in) != 0;
      state_.deter = read_vec(in);
      state_.stoch = read_vec(in);
      state_.logits = read_vec(in);
      obs_ = read_vec(in);
      prev_ = read_vec(in);
      rew_ = binio::read_f64(in);
      ep_return_ = binio::read_f64(in);
      ep_success_ = binio::read_u8(in) != 0;
      hist_.assign(binio::read_u64(in), 0);
      for (auto& h : hist_) h = binio::read_u64(in);
      result_.returns = read_vec(in);
      result_.successes.assign(binio::read_u64(in), false);
      for (std::size_t i = 0; i < result_.successes.size(); ++i) result_.successes[i] = binio::read_u8(in) != 0;
      if (binio::read_u8(in) != 0) replay_ = read_replay(in);
      const auto metrics_bytes = binio::read_u64(in);
      const auto episodes_bytes = binio::read_u64(in);
      truncate_file(out_ / "metrics.jsonl", metrics_bytes);
      truncate_file(out_ / "episodes.jsonl", episodes_bytes);
    } catch (const ParseError& e) {
      throw StartupError(std::string("run_state: ") + e.what());
    }
    if (finetune()) result_.armed = agent_->meta->smoother().armed();
  }

  RunConfig cfg_;
  std::string phase_;
  RunControl control_;
  fs::path out_, ckpt_;
  Rng root_, act_rng_, train_rng_;
  std::unique_ptr<Agent> agent_;
  PointMassEnv env_;
  ReplayBuffer replay_;
  std::ofstream metrics_, episodes_out_;

  ModelState state_;
  std::vector<double> obs_, prev_;
  double rew_ = 0.0;
  bool first_ = true;
  bool need_reset_ = true;
  double ep_return_ = 0.0;
  bool ep_success_ = false;
  std::vector<std::uint64_t> hist_;
  PhaseResult result_;

 public:
  bool armed() const { return finetune() && agent_->meta->smoother().armed(); }
};

PhaseResult run_phase(const RunConfig& config, const std::string& phase, const RunControl& control) {
  config.validate();
  RunLock lock(config.out_dir);
  Runner runner(config, phase, control);
  PhaseResult r = runner.run();
  r.armed = runner.armed();
  return r;
}

Agent load_agent(const RunConfig& config, const std::string& dir, bool finetune_components, Rng& init) {
  Agent agent(config, init);
  if (finetune_components) agent.begin_finetune(init);
  agent.load((fs::path(dir) / "checkpoint").string(), finetune_components);
  return agent;
}

void finish_metrics(EvalMetrics& m) {
  m.episodes = m.returns.size();
  m.mean_return = 0.0;
  m.success_rate = 0.0;
  for (std::size_t i = 0; i < m.episodes; ++i) {
    m.mean_return += m.returns[i] / static_cast<double>(m.episodes);
    m.success_rate += (m.successes[i] ? 1.0 : 0.0) / static_cast<double>(m.episodes);
  }
}

}  // namespace

PhaseResult run_pretrain(const RunConfig& config, const RunControl& control) {
  return run_phase(config, "pretrain", control);
}

PhaseResult run_finetune(const RunConfig& config, const RunControl& control) {
  return run_phase(config, "finetune", control);
}

EvalMetrics skill_sweep_eval(const Agent& agent, const PointMassConfig& env_config, std::size_t episodes,
                             std::size_t skill_every, Rng& rng) {
  CHOREO_REQUIRE(skill_every >= 1, "skill_every must be at least 1");
  const auto mask = agent.vq.codebook().active_mask(agent.vq.config().resample_every);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) order.push_back(i);
  if (order.empty())
    for (std::size_t i = 0; i < mask.size(); ++i) order.push_back(i);

  EvalMetrics m;
  PointMassEnv env(env_config);
  const std::size_t per_episode = (static_cast<std::size_t>(env_config.max_steps) + skill_every - 1) / skill_every;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    std::vector<double> obs = env.reset();
    std::vector<double> prev(PointMassEnv::kActDim, 0.0);
    ModelState state = agent.wm.initial_state();
    double ret = 0.0;
    bool success = false;
    for (std::size_t t = 0; !env.done(); ++t) {
      state = agent.wm.posterior_step(state, prev, obs, rng);
      const std::size_t z = order[(ep * per_episode + t / skill_every) % order.size()];
      prev = agent.skills.mean_action(state.deter, agent.vq.codebook().code(z)).values();
      StepResult r = env.step(prev);
      obs = std::move(r.obs);
      ret += r.reward;
      success = success || env.in_goal();
    }
    m.returns.push_back(ret);
    m.successes.push_back(success);
  }
  finish_metrics(m);
  return m;
}

double SkillSpread::fraction_at_least(double threshold) const {
  if (ratio.empty()) return 0.0;
  std::size_t n = 0;
  for (double r : ratio) n += r >= threshold ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(ratio.size());
}

SkillSpread skill_spread(const Agent& agent, const PointMassConfig& env_config, std::size_t rollouts,
                         std::size_t steps, Rng& rng) {
  CHOREO_REQUIRE(rollouts >= 2 && steps >= 1, "skill_spread needs at least 2 rollouts of at least 1 step");
  SkillSpread out;
  const auto mask = agent.vq.codebook().active_mask(agent.vq.config().resample_every);
  PointMassConfig cfg = env_config;
  cfg.max_steps = static_cast<int>(steps);
  PointMassEnv env(cfg);
  std::array<double, 2> grand{0.0, 0.0};
  for (std::size_t z = 0; z < mask.size(); ++z) {
    if (!mask[z]) continue;
    const auto code = agent.vq.codebook().code(z);
    std::vector<std::array<double, 2>> ends;
    for (std::size_t k = 0; k < rollouts; ++k) {
      std::vector<double> obs = env.reset();
      std::vector<double> prev(PointMassEnv::kActDim, 0.0);
      ModelState state = agent.wm.initial_state();
      while (!env.done()) {
        state = agent.wm.posterior_step(state, prev, obs, rng);
        prev = agent.skills.sample_action(state.deter, code, rng).values();
        obs = env.step(prev).obs;
      }
      ends.push_back(env.position());
    }
    std::array<double, 2> c{0.0, 0.0};
    for (const auto& e : ends)
      for (int i = 0; i < 2; ++i) c[i] += e[i] / static_cast<double>(ends.size());
    double w = 0.0;
    for (const auto& e : ends) w += ((e[0] - c[0]) * (e[0] - c[0]) + (e[1] - c[1]) * (e[1] - c[1])) / ends.size();
    out.skills.push_back(z);
    out.centroids.push_back(c);
    out.within.push_back(std::sqrt(w));
    for (int i = 0; i < 2; ++i) grand[i] += c[i];
  }
  if (out.skills.empty()) return out;
  for (auto& g : grand) g /= static_cast<double>(out.skills.size());
  double a = 0.0;
  for (const auto& c : out.centroids)
    a += ((c[0] - grand[0]) * (c[0] - grand[0]) + (c[1] - grand[1]) * (c[1] - grand[1])) / out.skills.size();
  out.across = std::sqrt(a);
  for (double w : out.within) out.ratio.push_back(w > 0.0 ? out.across / w : std::numeric_limits<double>::infinity());
  return out;
}

EvalMetrics random_policy_eval(const PointMassConfig& env_config, std::size_t episodes, Rng& rng) {
  EvalMetrics m;
  PointMassEnv env(env_config);
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    env.reset();
    double ret = 0.0;
    bool success = false;
    while (!env.done()) {
      const std::array<double, 2> a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      ret += env.step(a).reward;
      success = success || env.in_goal();
    }
    m.returns.push_back(ret);
    m.successes.push_back(success);
  }
  finish_metrics(m);
  return m;
}

EvalMetrics run_eval(const RunConfig& config) {
  config.validate();
  const std::string from = config.eval_from.empty() ? config.out_dir : config.eval_from;
  Rng root(config.seed);
  Rng init = root.split();
  Rng rng = root.split();
  EvalMetrics m;
  if (config.eval_policy == "random") {
    m = random_policy_eval(config.env(), config.eval_episodes, rng);
  } else if (config.eval_policy == "skills") {
    Agent agent = load_agent(config, from, false, init);
    m = skill_sweep_eval(agent, config.env(), config.eval_episodes, config.eval_skill_every, rng);
  } else {
    Agent agent = load_agent(config, from, true, init);
    m = zero_shot_eval(agent.wm, agent.vq, agent.skills, *agent.meta, config.env(), config.eval_episodes, rng);
  }
  RunLock lock(config.out_dir);
  nlohmann::json j = m.to_json();
  j["policy"] = config.eval_policy;
  j["returns"] = m.returns;
  j["successes"] = m.successes;
  std::ofstream(fs::path(config.out_dir) / ("eval_" + config.eval_policy + ".json")) << j.dump(2) << '\n';
  return m;
}

nlohmann::json run_bench_codebook(const RunConfig& config) {
  config.validate();
  RunLock lock(config.out_dir);
  nlohmann::json report;
  report["batches"] = config.bench_batches;
  report["batch_size"] = config.bench_batch_size;
  report["codes"] = config.codebook_n;
  report["modes"] = config.bench_modes;
  report["M"] = config.codebook_m;
  double cr_unused = 0.0, nocr_unused = 0.0, cr_loss = 0.0, nocr_loss = 0.0;
  for (std::uint64_t s = 0; s < config.bench_seeds; ++s) {
    CodebookBenchConfig bc;
    bc.mixture.modes = config.bench_modes;
    bc.mixture.dim = config.bench_dim;
    bc.vq = config.vq();
    bc.batches = config.bench_batches;
    bc.batch_size = config.bench_batch_size;
    bc.seed = config.seed + s;
    nlohmann::json pair{{"seed", bc.seed}};
    for (bool resample : {true, false}) {
      bc.vq.resample = resample;
      const CodebookBenchResult r = run_codebook_bench(bc);
      const double unused = 1.0 - r.active_fraction;
      (resample ? cr_unused : nocr_unused) += unused / static_cast<double>(config.bench_seeds);
      (resample ? cr_loss : nocr_loss) += r.final_loss / static_cast<double>(config.bench_seeds);
      pair[resample ? "with_resampling" : "without_resampling"] = {
          {"active_codes", r.active_codes},   {"unused_fraction", unused}, {"final_loss", r.final_loss},
          {"resampled", r.resampled},         {"active_curve", r.active_curve},
          {"histogram", r.histogram}};
    }
    report["runs"].push_back(pair);
  }
  report["summary"] = {{"unused_fraction_with", cr_unused},
                       {"unused_fraction_without", nocr_unused},
                       {"final_loss_with", cr_loss},
                       {"final_loss_without", nocr_loss}};
  std::ofstream(fs::path(config.out_dir) / "bench_codebook.json") << report.dump(2) << '\n';
  return report;
}

nlohmann::json export_skills(const RunConfig& config, const std::string& output) {
  config.validate();
  const std::string from = config.eval_from.empty() ? config.out_dir : config.eval_from;
  Rng root(config.seed);
  Rng init = root.split();
  Agent agent = load_agent(config, from, false, init);
  nlohmann::json j = agent.vq.codebook().to_json(config.codebook_m);
  const Tensor decoded = agent.vq.decode(agent.vq.codebook().codes());
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < decoded.rows(); ++i) rows.push_back(decoded.row_vector(i));
  j["decoded"] = rows;
  j["batches_seen"] = agent.vq.batches_seen();
  const std::string path = output.empty() ? (fs::path(config.out_dir) / "skills.json").string() : output;
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw StartupError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  return j;
}

void generate_dataset(const RunConfig& config, std::size_t episodes, const std::string& path) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_offline_dataset(path, random_walk_dataset(config.env(), episodes, config.seed));
}

}  // namespace choreo
