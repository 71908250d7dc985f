#ifndef PASD_SKILL_CONTRAST_HPP_
#define PASD_SKILL_CONTRAST_HPP_

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pasd/hier_policy.hpp"
#include "pasd/rollout.hpp"

namespace pasd {

struct ContrastConfig {
  double temperature = 0.1;
  int window = 10;
  int min_segment = 5;
  // "uniform" draws the representative uniformly within the window,
  // "midpoint" takes the middle step.
  std::string representative = "uniform";
  // Embedding optimizer steps per training iteration, and their learning
  // rate (0 follows the policy learning rate schedule).
  int embed_steps = 1;
  double embed_learning_rate = 0.0;

  void validate() const;
};

// One skill-labeled window. Steps are indices into RolloutBatch::low.
struct SkillSegment {
  int rollout = 0;
  int index = 0;  // segment number within its rollout
  int skill = 0;
  std::string partner_id;
  int first_step = 0;
  int length = 0;
  int representative = 0;
  Eigen::VectorXd embedding;  // filled by score_segments
};

// Splits each maximal constant-skill run of each rollout into windows.
std::vector<SkillSegment> segment_rollouts(const RolloutBatch& batch, const ContrastConfig& cfg,
                                           Rng& rng);
// Same rule over a bare skill sequence; returns (first, length) windows.
std::vector<std::pair<int, int>> skill_windows(std::span<const int> skills, int window,
                                               int min_segment);

struct PairSets {
  std::map<int, std::vector<int>> positives;  // skill -> segment indices
  std::map<int, std::vector<int>> negatives;
  std::vector<int> degenerate_skills;  // fewer than two segments

  bool active(int skill) const;
  // True when no skill has two segments or only one skill occurs.
  bool degenerate() const;
};

PairSets build_pairs(std::span<const int> skills);
PairSets build_pairs(const std::vector<SkillSegment>& segments);

// Per-anchor loss and reward over unit embeddings. The anchor is never part
// of `positives`.
double infonce_loss(const Eigen::VectorXd& anchor, const std::vector<Eigen::VectorXd>& positives,
                    const std::vector<Eigen::VectorXd>& negatives, double temperature);
double intrinsic_reward(const Eigen::VectorXd& anchor,
                        const std::vector<Eigen::VectorXd>& positives,
                        const std::vector<Eigen::VectorXd>& negatives, double temperature);
double mi_lower_bound(double loss, int negative_count);

struct ScoreStats {
  int segments = 0;
  int degenerate_segments = 0;
  double mean_reward = 0.0;
  double mean_loss = 0.0;
  double mi_bound = 0.0;
};

// Embeds every representative and returns one intrinsic reward per segment
// (0 for degenerate skills).
std::vector<double> score_segments(const HierPolicy& policy, const Eigen::MatrixXd& obs,
                                   std::vector<SkillSegment>& segments, const PairSets& pairs,
                                   const ContrastConfig& cfg, ScoreStats* stats = nullptr);

// Broadcasts segment rewards onto LowStep::intrinsic; steps outside every
// window get 0.
void fill_intrinsic(RolloutBatch& batch, const std::vector<SkillSegment>& segments,
                    std::span<const double> rewards);

// Mean per-anchor InfoNCE over all non-degenerate anchors of a set of unit
// embeddings (columns), and its gradient with respect to those embeddings.
double batch_infonce(const Eigen::MatrixXd& embeddings, std::span<const int> skills,
                     double temperature, Eigen::MatrixXd* grad = nullptr);

// One Adam step on the mean InfoNCE through the embedding head and its
// backbone. Returns the loss before the step. Throws ConfigError when no
// anchor has a positive.
double update_embedding(HierPolicy& policy, const Eigen::MatrixXd& obs,
                        const std::vector<SkillSegment>& segments, const ContrastConfig& cfg,
                        double learning_rate, double max_grad_norm = 0.5);

// Line-delimited embedding table, one record per segment.
struct EmbeddingRecord {
  int rollout = 0;
  int segment = 0;
  int skill = 0;
  std::string partner_id;
  std::string variant = "representative";  // or "pooled"
  std::vector<double> embedding;
};
void write_embedding_record(std::ostream& out, const EmbeddingRecord& r);
std::vector<EmbeddingRecord> read_embedding_table(const std::filesystem::path& path);

}  // namespace pasd

#endif  // PASD_SKILL_CONTRAST_HPP_
