#pragma once

#include <optional>
#include <string>

#include "choreo/adaptation.hpp"
#include "choreo/config.hpp"

namespace choreo {

inline constexpr std::uint8_t kCheckpointVersion = 1;

// Every learned component of one run. The reward head and meta-controller only
// exist once fine-tuning has begun.
struct Agent {
  Agent(const RunConfig& config, Rng& rng);

  RunConfig config;
  WorldModel wm;
  SkillVQ vq;
  SkillPolicySet skills;
  std::optional<ExplorationPolicy> expl;
  std::optional<MetaController> meta;

  bool finetuning() const { return meta.has_value(); }
  void begin_finetune(Rng& rng);

  // One file per component under `dir`.
  void save(const std::string& dir) const;
  // Loads the pretrained components and, when present and requested, the
  // fine-tuning ones. Shape or version mismatches raise StartupError.
  void load(const std::string& dir, bool finetune_components);
};

}  // namespace choreo
