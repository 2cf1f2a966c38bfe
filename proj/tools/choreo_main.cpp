#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

#include "choreo/errors.hpp"
#include "choreo/harness.hpp"

using namespace choreo;

namespace {

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;
};

// Every config key becomes --<key> on the subcommand.
void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "flat key = value configuration file");
  for (const auto& key : config_keys())
    cmd->add_option_function<std::string>(
        "--" + key.name, [&o, name = key.name](const std::string& v) { o.values[name] = v; }, key.help);
}

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  if (!o.config_file.empty()) c = load_config_file(o.config_file, c);
  apply_environment(c);
  for (const auto& [k, v] : o.values) set_config_value(c, k, v);
  return c;
}

nlohmann::json phase_summary(const PhaseResult& r) {
  nlohmann::json j{{"steps", r.steps}, {"updates", r.updates}, {"episodes", r.episodes}, {"complete", r.complete}};
  if (!r.successes.empty()) {
    const std::size_t n = std::min<std::size_t>(20, r.successes.size());
    double s = 0.0;
    for (std::size_t i = r.successes.size() - n; i < r.successes.size(); ++i) s += r.successes[i] ? 1.0 : 0.0;
    j["final_success_rate"] = s / static_cast<double>(n);
    j["armed"] = r.armed;
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skill discovery and adaptation on a point-mass world model"};
  app.require_subcommand(1);

  Overrides pre, fine, ev, bench, exp, gen;
  bool resume_pre = false, resume_fine = false, freeze = false;
  std::uint64_t halt_pre = 0, halt_fine = 0;
  std::string export_path, dataset_path;
  std::size_t dataset_episodes = 100;

  auto* cmd_pre = app.add_subcommand("pretrain", "reward-free pretraining (online or offline)");
  add_config_flags(cmd_pre, pre);
  cmd_pre->add_flag("--resume", resume_pre, "continue from the last checkpoint in out_dir");
  cmd_pre->add_option("--halt-after", halt_pre, "stop after this many steps without a final checkpoint")->group("");

  auto* cmd_fine = app.add_subcommand("finetune", "meta-controller fine-tuning on the task reward");
  add_config_flags(cmd_fine, fine);
  cmd_fine->add_flag("--resume", resume_fine, "continue from the last checkpoint in out_dir");
  cmd_fine->add_flag("--freeze-skills", freeze, "keep skill actors fixed (same as finetune.freeze_skills=true)");
  cmd_fine->add_option("--halt-after", halt_fine, "stop after this many steps without a final checkpoint")->group("");

  auto* cmd_eval = app.add_subcommand("eval", "evaluate skills, the meta-controller or a random policy");
  add_config_flags(cmd_eval, ev);

  auto* cmd_bench = app.add_subcommand("bench-codebook", "code-resampling benchmark on a Gaussian mixture");
  add_config_flags(cmd_bench, bench);

  auto* cmd_export = app.add_subcommand("export-skills", "write the codebook and decoded skills as JSON");
  add_config_flags(cmd_export, exp);
  cmd_export->add_option("--output", export_path, "output path (default: <out_dir>/skills.json)");

  auto* cmd_gen = app.add_subcommand("gen-dataset", "write a random-walk offline dataset");
  add_config_flags(cmd_gen, gen);
  cmd_gen->add_option("--episodes", dataset_episodes, "number of episodes");
  cmd_gen->add_option("--output", dataset_path, "dataset path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_pre->parsed()) {
      RunControl ctl{resume_pre, halt_pre};
      std::cout << phase_summary(run_pretrain(resolve(pre), ctl)).dump() << '\n';
    } else if (cmd_fine->parsed()) {
      RunConfig c = resolve(fine);
      if (freeze) c.freeze_skills = true;
      RunControl ctl{resume_fine, halt_fine};
      std::cout << phase_summary(run_finetune(c, ctl)).dump() << '\n';
    } else if (cmd_eval->parsed()) {
      RunConfig c = resolve(ev);
      nlohmann::json j = run_eval(c).to_json();
      j["policy"] = c.eval_policy;
      std::cout << j.dump() << '\n';
    } else if (cmd_bench->parsed()) {
      std::cout << run_bench_codebook(resolve(bench)).at("summary").dump() << '\n';
    } else if (cmd_export->parsed()) {
      const auto j = export_skills(resolve(exp), export_path);
      std::cout << nlohmann::json{{"N", j.at("N")}, {"d_z", j.at("d_z")}}.dump() << '\n';
    } else if (cmd_gen->parsed()) {
      generate_dataset(resolve(gen), dataset_episodes, dataset_path);
    }
  } catch (const StartupError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
