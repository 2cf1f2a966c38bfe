#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "choreo/dataset.hpp"
#include "choreo/errors.hpp"
#include "choreo/harness.hpp"

using namespace choreo;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("choreo_harness_test_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig tiny(const fs::path& out) {
  RunConfig c;
  c.out_dir = out.string();
  c.env_max_steps = 40;
  c.wm_deter = 8;
  c.wm_groups = 2;
  c.wm_classes = 4;
  c.wm_hidden = 16;
  c.wm_layers = 1;
  c.codebook_n = 4;
  c.codebook_dz = 3;
  c.codebook_hidden = 16;
  c.codebook_layers = 1;
  c.codebook_m = 5;
  c.skill_hidden = 16;
  c.skill_layers = 1;
  c.skill_horizon = 4;
  c.skill_k = 3;
  c.skill_imag_starts = 8;
  c.expl_imag_starts = 8;
  c.meta_hidden = 16;
  c.meta_layers = 1;
  c.meta_imag_starts = 8;
  c.batch_size = 4;
  c.batch_length = 8;
  c.pretrain_steps = 200;
  c.pretrain_prefill = 60;
  c.finetune_steps = 120;
  c.train_every = 10;
  c.log_every = 1;
  c.eval_episodes = 2;
  c.eval_skill_every = 10;
  return c;
}

std::vector<std::string> checkpoint_files(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir / "checkpoint")) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

TEST_CASE("config text round-trips losslessly") {
  RunConfig c;
  c.seed = 123456789012345ULL;
  c.wm_lr = 0.1 + 0.2;
  c.codebook_beta = 1.0 / 3.0;
  c.smoother_threshold = 1e-4;
  c.skill_gamma = 0.99;
  c.mode = "offline";
  c.dataset = "data/walk.jsonl";
  c.freeze_skills = true;
  const RunConfig back = parse_config_text(config_to_text(c));
  CHECK(back == c);
  CHECK(config_to_text(back) == config_to_text(c));
  CHECK(get_config_value(c, "codebook.N") == "64");
  CHECK(get_config_value(RunConfig{}, "train_every") == "10");
  CHECK(get_config_value(RunConfig{}, "codebook.M") == "200");
}

TEST_CASE("config parsing errors") {
  CHECK_THROWS_AS(parse_config_text("codebook.Q = 3"), ParseError);
  CHECK_THROWS_AS(parse_config_text("codebook.N = three"), ParseError);
  CHECK_THROWS_AS(parse_config_text("codebook.N = -1"), ParseError);
  CHECK_THROWS_AS(parse_config_text("env.sparse = maybe"), ParseError);
  CHECK_THROWS_AS(parse_config_text("just words"), ParseError);
  const RunConfig c = parse_config_text("# comment\n\ncodebook.N = 8  # trailing\nwm.lr=0.001\n");
  CHECK(c.codebook_n == 8);
  CHECK(c.wm_lr == 0.001);
  RunConfig bad;
  bad.codebook_n = 1;
  CHECK_THROWS_AS(bad.validate(), StartupError);
  RunConfig policy;
  policy.eval_policy = "oracle";
  CHECK_THROWS_AS(policy.validate(), StartupError);
  CHECK_THROWS_AS(load_config_file("/nonexistent/run.cfg"), StartupError);
}

TEST_CASE("CHOREO_SEED overrides the configured seed") {
  RunConfig c;
  c.seed = 5;
  ::setenv("CHOREO_SEED", "77", 1);
  apply_environment(c);
  ::unsetenv("CHOREO_SEED");
  CHECK(c.seed == 77);
  apply_environment(c);
  CHECK(c.seed == 77);
}

TEST_CASE("offline pretraining needs its dataset") {
  RunConfig c = tiny(scratch("offline_missing"));
  c.mode = "offline";
  CHECK_THROWS_AS(run_pretrain(c), StartupError);
  c.dataset = "/nonexistent/data.jsonl";
  CHECK_THROWS_AS(run_pretrain(c), StartupError);
}

TEST_CASE("pretraining is deterministic and creates no fine-tuning components") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  PhaseResult ra = run_pretrain(tiny(a));
  run_pretrain(tiny(b));
  CHECK(ra.complete);
  CHECK(ra.updates > 0);
  const auto files = checkpoint_files(a);
  CHECK(files == std::vector<std::string>{"codebook.bin", "exploration.bin", "run_state.bin", "skills.bin",
                                          "world_model.bin"});
  for (const auto& f : files) CHECK(slurp(a / "checkpoint" / f) == slurp(b / "checkpoint" / f));
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(!slurp(a / "metrics.jsonl").empty());
  CHECK(slurp(a / "episodes.jsonl").empty());
  CHECK_FALSE(fs::exists(a / "LOCK"));

  std::istringstream lines(slurp(a / "metrics.jsonl"));
  std::string line;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    REQUIRE(j.size() == 4);
    CHECK(j.at("phase") == "pretrain");
    CHECK(j.at("key").is_string());
    CHECK(j.at("value").is_number());
    CHECK(j.at("step").is_number_unsigned());
  }

  RunConfig other = tiny(scratch("det_c"));
  other.seed = 1;
  run_pretrain(other);
  CHECK(slurp(a / "checkpoint" / "world_model.bin") != slurp(fs::path(other.out_dir) / "checkpoint" / "world_model.bin"));
}

TEST_CASE("offline pretraining reads no rewards and is deterministic") {
  const fs::path dir = scratch("offline");
  fs::create_directories(dir);
  ReplayBuffer data = random_walk_dataset(PointMassConfig{.max_steps = 30}, 6, 3);
  const std::string path = (dir / "walk.jsonl").string();
  save_offline_dataset(path, data);
  RunConfig c = tiny(dir / "a");
  c.mode = "offline";
  c.dataset = path;
  c.pretrain_steps = 12;
  PhaseResult r = run_pretrain(c);
  CHECK(r.updates == 12);
  CHECK(r.episodes == 0);
  CHECK_FALSE(fs::exists(dir / "a" / "checkpoint" / "exploration.bin"));
  RunConfig c2 = c;
  c2.out_dir = (dir / "b").string();
  run_pretrain(c2);
  CHECK(slurp(dir / "a" / "checkpoint" / "world_model.bin") == slurp(dir / "b" / "checkpoint" / "world_model.bin"));
  CHECK(slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "b" / "metrics.jsonl"));
}

TEST_CASE("a halted run resumes with identical metrics and checkpoints") {
  const fs::path full = scratch("resume_full"), part = scratch("resume_part");
  RunConfig c = tiny(full);
  c.checkpoint_every = 50;
  run_pretrain(c);
  RunConfig p = c;
  p.out_dir = part.string();
  PhaseResult halted = run_pretrain(p, RunControl{false, 130});
  CHECK_FALSE(halted.complete);
  CHECK(halted.steps == 130);
  // metrics written after the last checkpoint (step 100) are discarded on resume
  CHECK(slurp(part / "metrics.jsonl").size() > 0);
  PhaseResult resumed = run_pretrain(p, RunControl{true, 0});
  CHECK(resumed.complete);
  CHECK(resumed.steps == c.pretrain_steps);
  CHECK(slurp(full / "metrics.jsonl") == slurp(part / "metrics.jsonl"));
  for (const auto& f : checkpoint_files(full)) CHECK(slurp(full / "checkpoint" / f) == slurp(part / "checkpoint" / f));

  RunConfig changed = p;
  changed.wm_lr = 1e-3;
  CHECK_THROWS_WITH_AS(run_pretrain(changed, RunControl{true, 0}), doctest::Contains("wm.lr"), StartupError);
}

TEST_CASE("fine-tuning") {
  const fs::path pre = scratch("ft_pre");
  run_pretrain(tiny(pre));

  SUBCASE("zero budget leaves the pretrained components unchanged") {
    RunConfig f = tiny(scratch("ft_zero"));
    f.finetune_from = pre.string();
    f.finetune_steps = 0;
    PhaseResult r = run_finetune(f);
    CHECK(r.returns.empty());
    CHECK(slurp(fs::path(f.out_dir) / "episodes.jsonl").empty());
    for (const char* name : {"world_model.bin", "codebook.bin", "skills.bin"})
      CHECK(slurp(pre / "checkpoint" / name) == slurp(fs::path(f.out_dir) / "checkpoint" / name));
    CHECK(fs::exists(fs::path(f.out_dir) / "checkpoint" / "meta.bin"));
    CHECK(fs::exists(fs::path(f.out_dir) / "checkpoint" / "reward_head.bin"));
  }
  SUBCASE("frozen skills stay bit-identical and episodes are logged") {
    RunConfig f = tiny(scratch("ft_frozen"));
    f.finetune_from = pre.string();
    f.freeze_skills = true;
    f.env_goal_x = 0.0;
    f.env_goal_y = 0.0;
    f.env_goal_radius = 0.5;
    PhaseResult r = run_finetune(f);
    CHECK(r.armed);
    CHECK(r.episodes == 3);
    CHECK(slurp(pre / "checkpoint" / "skills.bin") == slurp(fs::path(f.out_dir) / "checkpoint" / "skills.bin"));
    CHECK(slurp(pre / "checkpoint" / "world_model.bin") != slurp(fs::path(f.out_dir) / "checkpoint" / "world_model.bin"));
    std::istringstream lines(slurp(fs::path(f.out_dir) / "episodes.jsonl"));
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.at("phase") == "finetune");
      CHECK(j.at("skill_histogram").size() == 4);
      CHECK(j.contains("return"));
      CHECK(j.contains("success"));
      ++n;
    }
    CHECK(n == 3);

    RunConfig adapted = f;
    adapted.out_dir = scratch("ft_adapted").string();
    adapted.freeze_skills = false;
    run_finetune(adapted);
    CHECK(slurp(pre / "checkpoint" / "skills.bin") != slurp(fs::path(adapted.out_dir) / "checkpoint" / "skills.bin"));

    RunConfig meta_eval = f;
    meta_eval.eval_policy = "meta";
    meta_eval.eval_from = f.out_dir;
    meta_eval.out_dir = scratch("ft_eval").string();
    EvalMetrics m = run_eval(meta_eval);
    CHECK(m.episodes == 2);
    CHECK(fs::exists(fs::path(meta_eval.out_dir) / "eval_meta.json"));
  }
  SUBCASE("an incompatible configuration is refused with the field name") {
    RunConfig f = tiny(scratch("ft_bad"));
    f.finetune_from = pre.string();
    f.wm_hidden = 12;
    CHECK_THROWS_WITH_AS(run_finetune(f), doctest::Contains("world_model: field"), StartupError);
    RunConfig g = tiny(scratch("ft_bad_cb"));
    g.finetune_from = pre.string();
    g.codebook_n = 5;
    g.meta_hidden = 16;
    CHECK_THROWS_AS(run_finetune(g), StartupError);
    RunConfig none = tiny(scratch("ft_none"));
    CHECK_THROWS_AS(run_finetune(none), StartupError);
  }
}

TEST_CASE("a live lock refuses a second owner; a stale one is taken over") {
  const fs::path dir = scratch("lock");
  {
    RunLock lock(dir.string());
    CHECK_THROWS_AS(RunLock(dir.string()), StartupError);
  }
  CHECK_FALSE(fs::exists(dir / "LOCK"));
  std::ofstream(dir / "LOCK") << "999999999\n";
  RunLock again(dir.string());
  CHECK(fs::exists(dir / "LOCK"));
}

TEST_CASE("evaluation, export and benchmark outputs") {
  const fs::path pre = scratch("outputs");
  RunConfig c = tiny(pre);
  run_pretrain(c);

  c.eval_policy = "skills";
  EvalMetrics s = run_eval(c);
  CHECK(s.episodes == 2);
  c.eval_policy = "random";
  EvalMetrics r = run_eval(c);
  CHECK(r.episodes == 2);
  auto j = nlohmann::json::parse(slurp(pre / "eval_random.json"));
  CHECK(j.contains("mean_return"));
  CHECK(j.contains("success_rate"));
  CHECK(j.at("episodes") == 2);
  c.eval_policy = "meta";
  CHECK_THROWS_AS(run_eval(c), StartupError);

  auto skills = export_skills(c, "");
  CHECK(skills.at("N") == 4);
  CHECK(skills.at("d_z") == 3);
  CHECK(skills.at("codes").size() == 4);
  CHECK(skills.at("active_mask").size() == 4);
  CHECK(skills.at("decoded").size() == 4);
  CHECK(skills.at("decoded").at(0).size() == 8);
  CHECK(nlohmann::json::parse(slurp(pre / "skills.json")) == skills);

  Rng rng(1);
  Rng init = rng.split();
  Agent agent(c, init);
  agent.load((pre / "checkpoint").string(), false);
  SkillSpread sp = skill_spread(agent, c.env(), 3, 5, rng);
  CHECK(sp.skills.size() == sp.ratio.size());
  CHECK(sp.across >= 0.0);

  RunConfig b = tiny(scratch("bench"));
  b.bench_batches = 30;
  b.bench_batch_size = 16;
  b.bench_modes = 4;
  b.bench_dim = 3;
  b.bench_seeds = 2;
  auto report = run_bench_codebook(b);
  CHECK(report.at("runs").size() == 2);
  CHECK(report.at("runs").at(0).at("with_resampling").at("histogram").size() == 4);
  CHECK(report.at("runs").at(0).at("with_resampling").at("active_curve").size() == 6);
  CHECK(report.at("summary").contains("unused_fraction_with"));
  CHECK(report == nlohmann::json::parse(slurp(fs::path(b.out_dir) / "bench_codebook.json")));
}
