#ifndef PASD_EVAL_HPP_
#define PASD_EVAL_HPP_

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pasd/controllers.hpp"
#include "pasd/hier_policy.hpp"
#include "pasd/population.hpp"
#include "pasd/rollout.hpp"
#include "pasd/skill_contrast.hpp"

namespace pasd {

using AgentFactory = std::function<std::unique_ptr<Controller>()>;

struct PartnerResult {
  std::string id;
  std::string set;
  std::array<double, 2> start_means{0.0, 0.0};  // by swap_start
  double mean = 0.0;
};

struct EvalReport {
  std::string layout;
  int episodes_per_start = 0;
  int episode_count = 0;
  std::map<std::string, double> set_means;
  double overall_mean = 0.0;
  double overall_std = 0.0;  // population std across set means
  std::vector<PartnerResult> partners;

  nlohmann::json to_json() const;
};

struct EvalOptions {
  int episodes = 5;  // per partner and start position
  int horizon = 0;   // 0 keeps the layout horizon
  std::uint64_t seed = 1000;
  std::filesystem::path trajectory_dir;  // logs are written here when set
};

// Episode return is the team reward. Every partner plays `episodes` episodes
// from each of the two start assignments with fixed per-episode seeds.
EvalReport evaluate(const AgentFactory& agent, const PartnerPool& partners, const Layout& layout,
                    const EvalOptions& options);

// One embedding per skill window of a logged episode: the midpoint state
// ("representative") and the normalised mean over the window ("pooled").
std::vector<EmbeddingRecord> sequence_embeddings(const HierPolicy& policy, const Layout& layout,
                                                 const TrajectoryLog& log, int window = 10,
                                                 int min_segment = 5, int log_index = 0);

struct SimilarityMatrix {
  Eigen::MatrixXd values;
  std::vector<int> skills;    // row labels
  std::vector<int> segments;  // row labels, index into the input table

  nlohmann::json to_json() const;
};

// Rows are grouped by skill (stable within a skill).
SimilarityMatrix similarity_matrix(const std::vector<EmbeddingRecord>& table);

struct SkillSeparation {
  double intra = 0.0;
  double inter = 0.0;
  double gap = 0.0;
};
SkillSeparation intra_inter_stats(const SimilarityMatrix& m);

}  // namespace pasd

#endif  // PASD_EVAL_HPP_
