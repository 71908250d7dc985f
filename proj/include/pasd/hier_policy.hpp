#ifndef PASD_HIER_POLICY_HPP_
#define PASD_HIER_POLICY_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pasd/checkpoint.hpp"
#include "pasd/common.hpp"
#include "pasd/network.hpp"

namespace pasd {

struct HierPolicyConfig {
  int obs_size = 0;
  int skill_count = 6;
  int embed_dim = 16;
  std::vector<int> backbone_hidden = {64, 64};
  int head_hidden = 64;
  // Gives the embedding head its own backbone instead of sharing.
  bool detached_embedding = false;
  // Termination probability of the freshly initialised head.
  double initial_termination = 0.1;
  // Output-layer init scale of the skill selector and the skill-conditioned
  // action head.
  double hi_init_scale = 0.01;
  double lo_init_scale = 0.01;

  void validate() const;
};

// Skill count used for a layout when none is configured.
int default_skill_count(const std::string& layout_name);

struct SkillSample {
  int skill;
  double log_prob;
  double value;
};

struct ActionSample {
  int action;
  double log_prob;
  double value;
};

struct TerminationSample {
  bool terminate;
  double log_prob;
};

// Batched re-evaluation of one head. Columns of the caches line up with the
// batch order passed in.
struct HeadPass {
  ForwardCache backbone;
  ForwardCache policy;
  ForwardCache value;
  Eigen::MatrixXd head_input;  // features, concatenated with one-hot skill for skill-conditioned heads
  Eigen::MatrixXd logits;
  Eigen::MatrixXd log_softmax;  // categorical heads only
  Eigen::VectorXd log_probs;
  Eigen::VectorXd entropies;
  Eigen::VectorXd values;       // empty for the termination head
  std::vector<int> skills;
  std::vector<int> choices;     // skill, action or termination outcome per column
};

struct HierGradients {
  Gradients backbone, hi, lo, term, v_hi, v_lo, embed, embed_backbone;
  std::vector<Gradients*> all();
};

// Skill selector, skill-conditioned controller, termination head, two value
// heads and the normalised state embedding, over one shared backbone.
class HierPolicy {
 public:
  HierPolicy() = default;
  HierPolicy(const HierPolicyConfig& config, std::uint64_t seed);

  const HierPolicyConfig& config() const { return config_; }
  int skill_count() const { return config_.skill_count; }

  Eigen::VectorXd features(const Eigen::VectorXd& obs) const;

  Eigen::VectorXd skill_probs(const Eigen::VectorXd& obs) const;
  Eigen::VectorXd action_probs(const Eigen::VectorXd& obs, int skill) const;
  double termination_prob(const Eigen::VectorXd& obs, int skill) const;

  SkillSample sample_skill(const Eigen::VectorXd& obs, Rng& rng) const;
  ActionSample sample_action(const Eigen::VectorXd& obs, int skill, Rng& rng) const;
  TerminationSample sample_termination(const Eigen::VectorXd& obs, int skill, Rng& rng) const;

  // Same draws as above from precomputed backbone features, so a rollout
  // step evaluates the backbone once per observation.
  SkillSample sample_skill_from(const Eigen::VectorXd& feats, Rng& rng) const;
  ActionSample sample_action_from(const Eigen::VectorXd& feats, int skill, Rng& rng) const;
  TerminationSample sample_termination_from(const Eigen::VectorXd& feats, int skill,
                                            Rng& rng) const;
  double value_hi_from(const Eigen::VectorXd& feats) const;
  double value_lo_from(const Eigen::VectorXd& feats, int skill) const;

  Eigen::VectorXd embed(const Eigen::VectorXd& obs) const;
  Eigen::MatrixXd embed_batch(const Eigen::MatrixXd& obs) const;

  // Differentiable recomputation for PPO ratios. `obs` has one column per
  // sample. For the skill head `skills` are the choices; for the action and
  // termination heads `choices` are actions / {0,1} outcomes.
  HeadPass evaluate_skills(const Eigen::MatrixXd& obs, std::span<const int> skills) const;
  HeadPass evaluate_actions(const Eigen::MatrixXd& obs, std::span<const int> skills,
                            std::span<const int> actions) const;
  HeadPass evaluate_terminations(const Eigen::MatrixXd& obs, std::span<const int> skills,
                                 std::span<const int> outcomes) const;

  // Accumulate gradients given d(loss)/d(log_prob), d(loss)/d(entropy) and
  // d(loss)/d(value) per sample (value grads ignored for termination).
  void backward_skills(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                       const Eigen::VectorXd& d_entropy, const Eigen::VectorXd& d_value,
                       HierGradients& grads) const;
  void backward_actions(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                        const Eigen::VectorXd& d_entropy, const Eigen::VectorXd& d_value,
                        HierGradients& grads) const;
  void backward_terminations(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                             const Eigen::VectorXd& d_entropy, HierGradients& grads) const;

  // Embedding forward with caches, and its backward from d(loss)/d(embedding).
  struct EmbedPass {
    ForwardCache backbone;
    ForwardCache head;
    Eigen::MatrixXd embeddings;
  };
  EmbedPass embed_pass(const Eigen::MatrixXd& obs) const;
  void backward_embed(const EmbedPass& pass, const Eigen::MatrixXd& d_embedding,
                      HierGradients& grads) const;

  HierGradients zero_gradients() const;
  // Clips jointly to max_grad_norm then applies Adam to every head except
  // the embedding ones.
  double apply_gradients(HierGradients& grads, double learning_rate, double max_grad_norm);
  // Embedding-only step: touches the embed head and its backbone.
  double apply_embedding_gradients(HierGradients& grads, double learning_rate,
                                   double max_grad_norm);

  Checkpoint to_checkpoint(std::int64_t training_step = 0) const;
  static HierPolicy from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path, std::int64_t training_step = 0) const;
  static HierPolicy load(const std::filesystem::path& path);

  bool operator==(const HierPolicy& other) const;

  ParamSet backbone;
  ParamSet hi;       // K skill logits
  ParamSet lo;       // 6 action logits from [features, one-hot skill]
  ParamSet term;     // 1 termination logit from [features, one-hot skill]
  ParamSet v_hi;
  ParamSet v_lo;     // from [features, one-hot skill]
  ParamSet embed_head;
  ParamSet embed_backbone;  // used only when detached_embedding

 private:
  Eigen::MatrixXd conditioned_input(const Eigen::MatrixXd& feats, std::span<const int> skills) const;
  void check_skill(int skill) const;

  HierPolicyConfig config_;
};

// Numerically stable categorical helpers over a logit column.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);
double log_sigmoid(double x);

}  // namespace pasd

#endif  // PASD_HIER_POLICY_HPP_
