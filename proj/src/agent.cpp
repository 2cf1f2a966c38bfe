#include "choreo/agent.hpp"

#include <filesystem>
#include <fstream>

#include "choreo/errors.hpp"

namespace choreo {

namespace fs = std::filesystem;

namespace {

const char* kMagic = "choreo-checkpoint";

void write_header(std::ostream& out, const std::string& component) {
  binio::write_string(out, kMagic);
  binio::write_u8(out, kCheckpointVersion);
  binio::write_string(out, component);
}

void read_header(std::istream& in, const std::string& component) {
  std::string magic;
  try {
    magic = binio::read_string(in);
  } catch (const ParseError&) {
    throw StartupError(component + ": not a checkpoint file");
  }
  if (magic != kMagic) throw StartupError(component + ": not a checkpoint file");
  const auto version = binio::read_u8(in);
  if (version != kCheckpointVersion)
    throw StartupError(component + ": checkpoint version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  const auto name = binio::read_string(in);
  if (name != component) throw StartupError(component + ": file holds component '" + name + "'");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StartupError("cannot write checkpoint '" + path.string() + "'");
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StartupError("checkpoint '" + path.string() + "' not found");
  return in;
}

void load_set(std::istream& in, ParamSet& target, const std::string& component) {
  ParamSet loaded;
  try {
    read_params(in, loaded);
  } catch (const ParseError& e) {
    throw StartupError(component + ": " + e.what());
  }
  assign_checked(target, std::move(loaded), component);
}

}  // namespace

Agent::Agent(const RunConfig& c, Rng& rng)
    : config(c),
      wm(c.world_model(), rng),
      vq(c.vq(), c.wm_deter, rng),
      skills(c.skills(), c.wm_deter, c.codebook_dz, PointMassEnv::kActDim, rng) {
  if (c.online()) expl.emplace(c.exploration(), c.wm_deter, PointMassEnv::kActDim, rng);
}

void Agent::begin_finetune(Rng& rng) {
  wm.init_reward_head(rng);
  meta.emplace(config.meta(), config.wm_deter, config.codebook_n, rng);
}

void Agent::save(const std::string& dir) const {
  const fs::path d(dir);
  fs::create_directories(d);
  {
    auto out = open_out(d / "world_model.bin");
    write_header(out, "world_model");
    write_params(out, wm.params());
  }
  {
    auto out = open_out(d / "codebook.bin");
    write_header(out, "codebook");
    write_params(out, vq.params());
    vq.codebook().write(out);
    binio::write_u64(out, vq.batches_seen());
  }
  {
    auto out = open_out(d / "skills.bin");
    write_header(out, "skills");
    write_params(out, skills.ac().actor());
    write_params(out, skills.ac().critic());
  }
  if (expl) {
    auto out = open_out(d / "exploration.bin");
    write_header(out, "exploration");
    write_params(out, expl->ac().actor());
    write_params(out, expl->ac().critic());
    write_params(out, expl->regressor());
  }
  if (meta) {
    {
      auto out = open_out(d / "reward_head.bin");
      write_header(out, "reward_head");
      write_params(out, wm.reward_params());
    }
    auto out = open_out(d / "meta.bin");
    write_header(out, "meta");
    write_params(out, meta->actor());
    write_params(out, meta->critic());
    binio::write_u8(out, meta->smoother().armed() ? 1 : 0);
    binio::write_u8(out, meta->held_skill() ? 1 : 0);
    binio::write_u64(out, meta->held_skill().value_or(0));
  }
}

void Agent::load(const std::string& dir, bool finetune_components) {
  const fs::path d(dir);
  if (!fs::is_directory(d)) throw StartupError("checkpoint directory '" + dir + "' not found");
  {
    auto in = open_in(d / "world_model.bin");
    read_header(in, "world_model");
    load_set(in, wm.params(), "world_model");
  }
  {
    auto in = open_in(d / "codebook.bin");
    read_header(in, "codebook");
    load_set(in, vq.params(), "codebook");
    Codebook cb;
    try {
      cb = Codebook::read(in);
    } catch (const ParseError& e) {
      throw StartupError(std::string("codebook: ") + e.what());
    }
    if (cb.size() != vq.codebook().size() || cb.dim() != vq.codebook().dim())
      throw StartupError("codebook: field 'codes' has shape [" + std::to_string(cb.size()) + ", " +
                         std::to_string(cb.dim()) + "] in the checkpoint but [" +
                         std::to_string(vq.codebook().size()) + ", " + std::to_string(vq.codebook().dim()) +
                         "] in the configuration");
    vq.codebook() = std::move(cb);
    vq.set_batches_seen(binio::read_u64(in));
  }
  {
    auto in = open_in(d / "skills.bin");
    read_header(in, "skills");
    load_set(in, skills.ac().actor(), "skills");
    load_set(in, skills.ac().critic(), "skills");
  }
  if (expl && fs::exists(d / "exploration.bin")) {
    auto in = open_in(d / "exploration.bin");
    read_header(in, "exploration");
    load_set(in, expl->ac().actor(), "exploration");
    load_set(in, expl->ac().critic(), "exploration");
    load_set(in, expl->regressor(), "exploration");
  }
  if (finetune_components) {
    if (!meta) throw StartupError("fine-tuning components requested before fine-tuning began");
    {
      auto in = open_in(d / "reward_head.bin");
      read_header(in, "reward_head");
      load_set(in, wm.reward_params(), "reward_head");
    }
    auto in = open_in(d / "meta.bin");
    read_header(in, "meta");
    load_set(in, meta->actor(), "meta");
    load_set(in, meta->critic(), "meta");
    meta->smoother().set_armed(binio::read_u8(in) != 0);
    const bool held = binio::read_u8(in) != 0;
    const auto z = binio::read_u64(in);
    if (held && z >= meta->skills()) throw StartupError("meta: field 'held_skill' out of range");
    meta->set_held_skill(held ? std::optional<std::size_t>(z) : std::nullopt);
  }
}

}  // namespace choreo
