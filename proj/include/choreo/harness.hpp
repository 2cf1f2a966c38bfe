#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "choreo/agent.hpp"
#include "choreo/codebook_bench.hpp"

namespace choreo {

// Run directory layout:
//   config.txt       resolved configuration
//   metrics.jsonl    {step, phase, key, value} training scalars
//   episodes.jsonl   {step, phase, return, success, skill_histogram} per fine-tuning episode
//   checkpoint/      one file per component plus run_state.bin
//   LOCK             present while a process owns the directory

struct RunControl {
  bool resume = false;
  // Stop (without a final checkpoint) once this many steps have run; 0 = never.
  std::uint64_t halt_after = 0;
};

struct PhaseResult {
  std::uint64_t steps = 0;
  std::uint64_t updates = 0;
  std::uint64_t episodes = 0;
  bool complete = false;
  std::vector<double> returns;   // fine-tuning episode returns
  std::vector<bool> successes;   // fine-tuning episode goal hits
  bool armed = false;
};

// Holds the LOCK file of a run directory for its lifetime. A lock left by a
// process that no longer exists is taken over.
class RunLock {
 public:
  explicit RunLock(const std::string& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

PhaseResult run_pretrain(const RunConfig& config, const RunControl& control = {});
PhaseResult run_finetune(const RunConfig& config, const RunControl& control = {});

// policy: "skills" (sweep over active skills, eval.skill_every steps each),
// "meta" (greedy meta-controller, needs a fine-tuned run) or "random".
// Writes <out_dir>/eval_<policy>.json.
EvalMetrics run_eval(const RunConfig& config);
EvalMetrics skill_sweep_eval(const Agent& agent, const PointMassConfig& env, std::size_t episodes,
                             std::size_t skill_every, Rng& rng);
EvalMetrics random_policy_eval(const PointMassConfig& env, std::size_t episodes, Rng& rng);

// Terminal positions of each active skill run from the start state for `steps`
// environment steps with sampled actions, `rollouts` times per skill.
//   within_z = RMS distance of skill z's terminal positions to their centroid
//   across   = RMS distance of the skill centroids to their common centroid
//   ratio_z  = across / within_z
struct SkillSpread {
  std::vector<std::size_t> skills;
  std::vector<std::array<double, 2>> centroids;
  std::vector<double> within;
  std::vector<double> ratio;
  double across = 0.0;
  double fraction_at_least(double threshold) const;
};

SkillSpread skill_spread(const Agent& agent, const PointMassConfig& env, std::size_t rollouts, std::size_t steps,
                         Rng& rng);

// Paired with/without resampling runs on the synthetic mixture; writes
// <out_dir>/bench_codebook.json.
nlohmann::json run_bench_codebook(const RunConfig& config);

// Codebook, active mask and decoded skill targets as JSON.
nlohmann::json export_skills(const RunConfig& config, const std::string& output);

// Random-walk offline dataset in the JSON-lines episode format.
void generate_dataset(const RunConfig& config, std::size_t episodes, const std::string& path);

}  // namespace choreo
