#ifndef PASD_TRAINER_HPP_
#define PASD_TRAINER_HPP_

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasd/config.hpp"
#include "pasd/hier_policy.hpp"
#include "pasd/population.hpp"

namespace pasd {

struct TrainOptions {
  // When set, config.json, metrics.jsonl and checkpoints/ are written here.
  std::filesystem::path output_dir;
  // Checkpoint written by an earlier run of the same config.
  std::filesystem::path resume;
  // Stop after this many iterations of this invocation; 0 runs to the end.
  int stop_after = 0;
  std::ostream* progress = nullptr;
};

struct TrainResult {
  HierPolicy policy;
  std::vector<nlohmann::json> metrics;  // records produced by this invocation
  int iterations_done = 0;              // total, including resumed ones
  bool complete = false;
};

// Iterations needed to cover total_steps with rollout.count x horizon steps each.
int iteration_count(const RunConfig& cfg);

// Schedules are evaluated at the first step of each iteration and reach
// their end values on the last iteration.
struct IterationSchedule {
  std::int64_t step;
  double lambda;
  double entropy_coeff;
  double learning_rate;
};
IterationSchedule schedule_for(const RunConfig& cfg, int iteration);

// Rollouts, contrastive scoring, PPO and embedding update, repeated.
TrainResult train_pasd(const RunConfig& cfg, const Population& partners,
                       const TrainOptions& options = {});

}  // namespace pasd

#endif  // PASD_TRAINER_HPP_
