#ifndef PASD_PPO_HPP_
#define PASD_PPO_HPP_

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pasd/flat_policy.hpp"
#include "pasd/hier_policy.hpp"
#include "pasd/rollout.hpp"

namespace pasd {

enum class TerminationAdvantage {
  kSegment,       // terminate: -A(segment), continue: +A(segment)
  kOptionCritic,  // terminate: V_hi(s) - V_lo(s, z), continue: the negation
};

struct PpoConfig {
  double clip = 0.05;
  double gamma = 0.99;
  double gae_lambda = 0.98;
  double value_coef = 0.5;
  double entropy_start = 0.01;
  double entropy_end = 0.0;
  double learning_rate = 1e-3;
  double lr_decay_ratio = 3.0;
  int epochs = 4;
  int minibatch_per_env = 64;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
  bool symmetric_mixing = false;
  TerminationAdvantage termination_advantage = TerminationAdvantage::kSegment;

  void validate() const;
};

double entropy_coeff_at(std::int64_t step, std::int64_t total, const PpoConfig& cfg);
double learning_rate_at(std::int64_t step, std::int64_t total, const PpoConfig& cfg);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values[t] is V(s_t); `bootstrap` is V(s_T) used after the last entry
// unless it is done. `discounts` (optional) overrides gamma per step.
GaeResult gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
              double gamma, double lambda, std::span<const int> dones,
              std::span<const double> discounts = {});

struct PolicyLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;  // d loss / d new_log_prob
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

PolicyLoss ppo_policy_loss(std::span<const double> new_log_probs,
                           std::span<const double> old_log_probs,
                           std::span<const double> advantages, double clip,
                           bool normalize = true);

// Mean squared error and its gradient with respect to `values`.
double value_loss(std::span<const double> values, std::span<const double> targets,
                  Eigen::VectorXd* grad = nullptr);

struct AdvantageSet {
  GaeResult high;
  GaeResult low;
  std::vector<int> termination_steps;  // low indices carrying a decision
  std::vector<double> termination;     // advantage per termination step
};

AdvantageSet compute_advantages(const RolloutBatch& batch, const PpoConfig& cfg,
                                double lambda, const HierPolicy* policy = nullptr);

struct UpdateMetrics {
  double policy_loss_hi = 0.0;
  double policy_loss_lo = 0.0;
  double policy_loss_term = 0.0;
  double value_loss_hi = 0.0;
  double value_loss_lo = 0.0;
  double entropy_hi = 0.0;
  double entropy_lo = 0.0;
  double entropy_term = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  int minibatches = 0;

  nlohmann::json to_json() const;
};

// Joint clipped-PPO step over all three decision levels.
UpdateMetrics ppo_update(HierPolicy& policy, const RolloutBatch& batch, const PpoConfig& cfg,
                         double lambda, double entropy_coeff, double learning_rate,
                         std::uint64_t seed);

// Flat actor-critic batch.
struct FlatBatch {
  Eigen::MatrixXd obs;
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;
};

UpdateMetrics ppo_update_flat(FlatPolicy& policy, const FlatBatch& batch, const PpoConfig& cfg,
                              double entropy_coeff, double learning_rate, int minibatch_size,
                              std::uint64_t seed);

}  // namespace pasd

#endif  // PASD_PPO_HPP_
