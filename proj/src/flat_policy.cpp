#include "pasd/flat_policy.hpp"

#include <cmath>

namespace pasd {

FlatPolicy::FlatPolicy(int obs_size, int action_count, std::uint64_t seed,
                       std::vector<int> hidden) {
  if (hidden.empty()) throw ConfigError("flat policy needs a hidden layer");
  std::vector<int> inner(hidden.begin(), hidden.end() - 1);
  backbone = init_params(NetworkSpec::mlp(obs_size, inner, hidden.back(), OutputTransform::kTanh),
                         mix_seed(seed, 11));
  pi = init_params(NetworkSpec::mlp(hidden.back(), {}, action_count, OutputTransform::kIdentity,
                                    Activation::kTanh, 0.01),
                   mix_seed(seed, 12));
  v = init_params(NetworkSpec::mlp(hidden.back(), {}, 1), mix_seed(seed, 13));
}

Eigen::VectorXd FlatPolicy::action_probs(const Eigen::VectorXd& obs) const {
  return log_softmax(forward(pi, forward(backbone, obs))).array().exp();
}

Eigen::MatrixXd FlatPolicy::action_probs_batch(const Eigen::MatrixXd& obs) const {
  Eigen::MatrixXd logits = forward(pi, forward(backbone, obs, nullptr), nullptr);
  for (Eigen::Index j = 0; j < logits.cols(); ++j)
    logits.col(j) = log_softmax(logits.col(j)).array().exp().matrix();
  return logits;
}

ActionSample FlatPolicy::sample(const Eigen::VectorXd& obs, Rng& rng) const {
  const Eigen::VectorXd feats = forward(backbone, obs);
  const Eigen::VectorXd lp = log_softmax(forward(pi, feats));
  const Eigen::VectorXd p = lp.array().exp();
  const int a = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
  return {a, lp(a), forward(v, feats)(0)};
}

double FlatPolicy::value(const Eigen::VectorXd& obs) const {
  return forward(v, forward(backbone, obs))(0);
}

HeadPass FlatPolicy::evaluate(const Eigen::MatrixXd& obs, std::span<const int> actions) const {
  if (static_cast<std::size_t>(obs.cols()) != actions.size())
    throw ShapeError("FlatPolicy::evaluate: column count mismatch");
  HeadPass pass;
  pass.choices.assign(actions.begin(), actions.end());
  pass.head_input = forward(backbone, obs, &pass.backbone);
  pass.logits = forward(pi, pass.head_input, &pass.policy);
  pass.values = forward(v, pass.head_input, &pass.value).row(0).transpose();
  const Eigen::Index n = obs.cols();
  pass.log_softmax.resize(pass.logits.rows(), n);
  pass.log_probs.resize(n);
  pass.entropies.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    pass.log_softmax.col(j) = log_softmax(pass.logits.col(j));
    if (actions[j] < 0 || actions[j] >= pass.logits.rows())
      throw ShapeError("FlatPolicy::evaluate: action out of range");
    pass.log_probs(j) = pass.log_softmax(actions[j], j);
    const Eigen::ArrayXd lp = pass.log_softmax.col(j).array();
    pass.entropies(j) = -(lp.exp() * lp).sum();
  }
  return pass;
}

void FlatPolicy::backward(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                          const Eigen::VectorXd& d_entropy, const Eigen::VectorXd& d_value,
                          Gradients& g_backbone, Gradients& g_pi, Gradients& g_v) const {
  Eigen::MatrixXd g(pass.logits.rows(), pass.logits.cols());
  for (Eigen::Index j = 0; j < pass.logits.cols(); ++j) {
    const Eigen::ArrayXd lp = pass.log_softmax.col(j).array();
    const Eigen::ArrayXd p = lp.exp();
    Eigen::ArrayXd col = -d_log_prob(j) * p;
    col(pass.choices[j]) += d_log_prob(j);
    col += d_entropy(j) * (-p * (lp + pass.entropies(j)));
    g.col(j) = col.matrix();
  }
  Eigen::MatrixXd d_feat, d_feat_v;
  pasd::backward(pi, pass.policy, g, g_pi, &d_feat);
  pasd::backward(v, pass.value, d_value.transpose(), g_v, &d_feat_v);
  d_feat += d_feat_v;
  pasd::backward(backbone, pass.backbone, d_feat, g_backbone);
}

double FlatPolicy::apply_gradients(Gradients& g_backbone, Gradients& g_pi, Gradients& g_v,
                                   double learning_rate, double max_grad_norm) {
  Gradients* all[3] = {&g_backbone, &g_pi, &g_v};
  const double norm = clip_global_norm(all, max_grad_norm);
  adam_step(backbone, g_backbone, learning_rate);
  adam_step(pi, g_pi, learning_rate);
  adam_step(v, g_v, learning_rate);
  return norm;
}

Checkpoint FlatPolicy::to_checkpoint(std::int64_t training_step) const {
  Checkpoint c;
  c.training_step = training_step;
  c.heads = {{"backbone", backbone}, {"pi", pi}, {"v", v}};
  c.metadata["kind"] = "flat_policy";
  return c;
}

FlatPolicy FlatPolicy::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", std::string()) != "flat_policy")
    throw IoError("checkpoint does not hold a flat policy");
  FlatPolicy p;
  p.backbone = ckpt.head("backbone");
  p.pi = ckpt.head("pi");
  p.v = ckpt.head("v");
  return p;
}

void FlatPolicy::save(const std::filesystem::path& path, std::int64_t training_step) const {
  save_checkpoint(path, to_checkpoint(training_step));
}

FlatPolicy FlatPolicy::load(const std::filesystem::path& path) {
  return from_checkpoint(load_checkpoint(path));
}

}  // namespace pasd
