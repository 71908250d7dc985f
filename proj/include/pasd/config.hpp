#ifndef PASD_CONFIG_HPP_
#define PASD_CONFIG_HPP_

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "pasd/hier_policy.hpp"
#include "pasd/ppo.hpp"
#include "pasd/rollout.hpp"
#include "pasd/skill_contrast.hpp"

namespace pasd {

struct PopulationConfig {
  int count = 16;
  double diversity_weight = 0.1;
  std::int64_t steps = 10'000'000;  // per agent
  int rollouts = 30;
  std::string role = "train";
  std::vector<int> hidden = {64, 64};
};

struct EvalConfig {
  int episodes = 5;  // per partner and start position
  std::uint64_t seed = 1000;
};

// Everything a training or evaluation run depends on. Defaults follow the
// published hyperparameters; per-layout learning rates come from
// default_config().
struct RunConfig {
  std::string layout = "cramped_room";
  std::uint64_t seed = 1;
  std::string partners;  // comma-separated partner refs
  std::int64_t total_steps = 10'000'000;
  int checkpoint_every = 10;  // iterations; 0 disables periodic checkpoints
  std::string output_dir;

  RolloutConfig rollout;
  PpoConfig ppo;
  ContrastConfig contrast;
  LambdaSchedule lambda;  // total_steps is derived from the run length
  HierPolicyConfig policy;
  PopulationConfig population;
  EvalConfig eval;

  void validate() const;
};

// Defaults for a layout: skill count, horizon and learning-rate schedule.
RunConfig default_config(const std::string& layout);

nlohmann::json to_json(const RunConfig& cfg);
// Overlays `j` on `base`. Unknown keys are a ConfigError.
RunConfig apply_json(RunConfig base, const nlohmann::json& j);
// Reads a config file; its "layout" (if any) selects the defaults it overlays.
RunConfig load_config(const std::filesystem::path& path);

// Stable hash of the effective config, used in manifests and checkpoints.
std::string config_hash(const RunConfig& cfg);

}  // namespace pasd

#endif  // PASD_CONFIG_HPP_
