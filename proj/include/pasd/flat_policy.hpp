#ifndef PASD_FLAT_POLICY_HPP_
#define PASD_FLAT_POLICY_HPP_

#include <filesystem>
#include <span>
#include <vector>

#include "pasd/checkpoint.hpp"
#include "pasd/common.hpp"
#include "pasd/hier_policy.hpp"
#include "pasd/network.hpp"

namespace pasd {

// Non-hierarchical actor-critic used for self-play partners and as the
// minimal PPO test subject.
class FlatPolicy {
 public:
  FlatPolicy() = default;
  FlatPolicy(int obs_size, int action_count, std::uint64_t seed,
             std::vector<int> hidden = {64, 64});

  int obs_size() const { return backbone.spec.input_size(); }
  int action_count() const { return pi.spec.output_size(); }

  Eigen::VectorXd action_probs(const Eigen::VectorXd& obs) const;
  Eigen::MatrixXd action_probs_batch(const Eigen::MatrixXd& obs) const;
  ActionSample sample(const Eigen::VectorXd& obs, Rng& rng) const;
  double value(const Eigen::VectorXd& obs) const;

  HeadPass evaluate(const Eigen::MatrixXd& obs, std::span<const int> actions) const;
  void backward(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                const Eigen::VectorXd& d_entropy, const Eigen::VectorXd& d_value,
                Gradients& g_backbone, Gradients& g_pi, Gradients& g_v) const;
  double apply_gradients(Gradients& g_backbone, Gradients& g_pi, Gradients& g_v,
                         double learning_rate, double max_grad_norm);

  Checkpoint to_checkpoint(std::int64_t training_step = 0) const;
  static FlatPolicy from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path, std::int64_t training_step = 0) const;
  static FlatPolicy load(const std::filesystem::path& path);

  bool operator==(const FlatPolicy& o) const {
    return backbone == o.backbone && pi == o.pi && v == o.v;
  }

  ParamSet backbone;
  ParamSet pi;
  ParamSet v;
};

}  // namespace pasd

#endif  // PASD_FLAT_POLICY_HPP_
