#ifndef PASD_SELFPLAY_HPP_
#define PASD_SELFPLAY_HPP_

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasd/config.hpp"
#include "pasd/flat_policy.hpp"
#include "pasd/population.hpp"

namespace pasd {

struct SelfPlayOptions {
  // Checkpoints, metrics.jsonl and population.json go here.
  std::filesystem::path output_dir;
  std::ostream* progress = nullptr;
};

struct SelfPlayResult {
  Population population;
  std::vector<nlohmann::json> metrics;
};

// Agent seeds for a population role. Train and eval draws come from
// separate streams so the two populations never share a seed.
std::vector<std::uint64_t> population_seeds(std::uint64_t run_seed, const std::string& role,
                                            int count);

// Iterations after which the early, intermediate and final checkpoints are
// written: 10%, 50% and 100% of training, rounded up.
std::array<int, 3> stage_iterations(int iterations);

// Per-step diversity bonus: JSD between the current action distribution
// and the mean distribution of earlier agents at the same observations.
std::vector<double> diversity_bonus(const FlatPolicy& current,
                                    const std::vector<FlatPolicy>& earlier,
                                    const Eigen::MatrixXd& obs);

// Trains population.count flat PPO agents one after another in self-play.
// Both chefs run the agent and both contribute training data; the
// partner-delivery penalty is off.
SelfPlayResult train_selfplay_population(const RunConfig& cfg, const SelfPlayOptions& options);

}  // namespace pasd

#endif  // PASD_SELFPLAY_HPP_
