#include "pasd/hier_policy.hpp"

#include <cmath>

#include "pasd/kitchen.hpp"

namespace pasd {

void HierPolicyConfig::validate() const {
  if (obs_size <= 0) throw ConfigError("policy obs_size must be positive");
  if (skill_count < 2) throw ConfigError("skill_count must be >= 2");
  if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
  if (backbone_hidden.empty()) throw ConfigError("backbone needs at least one hidden layer");
  if (head_hidden <= 0) throw ConfigError("head_hidden must be positive");
  if (!(initial_termination > 0.0 && initial_termination < 1.0))
    throw ConfigError("initial_termination must lie in (0, 1)");
  if (!(hi_init_scale > 0.0) || !(lo_init_scale > 0.0))
    throw ConfigError("head init scales must be positive");
}

int default_skill_count(const std::string& layout_name) {
  return layout_name == "forced_coordination" ? 5 : 6;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

double log_sigmoid(double x) {
  // -softplus(-x)
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

std::vector<Gradients*> HierGradients::all() {
  return {&backbone, &hi, &lo, &term, &v_hi, &v_lo, &embed, &embed_backbone};
}

namespace {

NetworkSpec backbone_spec(const HierPolicyConfig& c) {
  std::vector<int> inner(c.backbone_hidden.begin(), c.backbone_hidden.end() - 1);
  return NetworkSpec::mlp(c.obs_size, inner, c.backbone_hidden.back(), OutputTransform::kTanh);
}

Eigen::MatrixXd as_matrix(const Eigen::VectorXd& v) { return v; }

}  // namespace

HierPolicy::HierPolicy(const HierPolicyConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const int f = config_.backbone_hidden.back();
  const int k = config_.skill_count;
  backbone = init_params(backbone_spec(config_), mix_seed(seed, 1));
  hi = init_params(NetworkSpec::mlp(f, {}, k, OutputTransform::kIdentity, Activation::kTanh,
                                    config_.hi_init_scale),
                   mix_seed(seed, 2));
  lo = init_params(NetworkSpec::mlp(f + k, {config_.head_hidden}, kNumActions,
                                    OutputTransform::kIdentity, Activation::kTanh,
                                    config_.lo_init_scale),
                   mix_seed(seed, 3));
  term = init_params(NetworkSpec::mlp(f + k, {config_.head_hidden}, 1, OutputTransform::kIdentity,
                                      Activation::kTanh, 0.01),
                     mix_seed(seed, 4));
  term.layers.back().bias(0) =
      std::log(config_.initial_termination / (1.0 - config_.initial_termination));
  v_hi = init_params(NetworkSpec::mlp(f, {}, 1), mix_seed(seed, 5));
  v_lo = init_params(NetworkSpec::mlp(f + k, {}, 1), mix_seed(seed, 6));
  embed_head = init_params(NetworkSpec::mlp(f, {config_.head_hidden}, config_.embed_dim,
                                            OutputTransform::kL2Normalize),
                           mix_seed(seed, 7));
  if (config_.detached_embedding)
    embed_backbone = init_params(backbone_spec(config_), mix_seed(seed, 8));
}

void HierPolicy::check_skill(int skill) const {
  if (skill < 0 || skill >= config_.skill_count)
    throw ConfigError("skill " + std::to_string(skill) + " out of range [0, " +
                      std::to_string(config_.skill_count) + ")");
}

Eigen::MatrixXd HierPolicy::conditioned_input(const Eigen::MatrixXd& feats,
                                              std::span<const int> skills) const {
  const Eigen::Index f = feats.rows();
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(f + config_.skill_count, feats.cols());
  in.topRows(f) = feats;
  for (Eigen::Index j = 0; j < feats.cols(); ++j) {
    check_skill(skills[j]);
    in(f + skills[j], j) = 1.0;
  }
  return in;
}

Eigen::VectorXd HierPolicy::features(const Eigen::VectorXd& obs) const {
  return forward(backbone, obs);
}

Eigen::VectorXd HierPolicy::skill_probs(const Eigen::VectorXd& obs) const {
  return log_softmax(forward(hi, features(obs))).array().exp();
}

Eigen::VectorXd HierPolicy::action_probs(const Eigen::VectorXd& obs, int skill) const {
  const int s[1] = {skill};
  const Eigen::MatrixXd in = conditioned_input(as_matrix(features(obs)), s);
  return log_softmax(forward(lo, in, nullptr).col(0)).array().exp();
}

double HierPolicy::termination_prob(const Eigen::VectorXd& obs, int skill) const {
  const int s[1] = {skill};
  const Eigen::MatrixXd in = conditioned_input(as_matrix(features(obs)), s);
  return std::exp(log_sigmoid(forward(term, in, nullptr)(0, 0)));
}

SkillSample HierPolicy::sample_skill_from(const Eigen::VectorXd& feats, Rng& rng) const {
  const Eigen::VectorXd lp = log_softmax(forward(hi, feats));
  const Eigen::VectorXd p = lp.array().exp();
  const int z = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
  return {z, lp(z), value_hi_from(feats)};
}

ActionSample HierPolicy::sample_action_from(const Eigen::VectorXd& feats, int skill,
                                            Rng& rng) const {
  const int s[1] = {skill};
  const Eigen::MatrixXd in = conditioned_input(as_matrix(feats), s);
  const Eigen::VectorXd lp = log_softmax(forward(lo, in, nullptr).col(0));
  const Eigen::VectorXd p = lp.array().exp();
  const int a = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
  return {a, lp(a), forward(v_lo, in, nullptr)(0, 0)};
}

TerminationSample HierPolicy::sample_termination_from(const Eigen::VectorXd& feats, int skill,
                                                      Rng& rng) const {
  const int s[1] = {skill};
  const Eigen::MatrixXd in = conditioned_input(as_matrix(feats), s);
  const double x = forward(term, in, nullptr)(0, 0);
  const double p = std::exp(log_sigmoid(x));
  const bool b = rng.bernoulli(p);
  return {b, b ? log_sigmoid(x) : log_sigmoid(-x)};
}

double HierPolicy::value_hi_from(const Eigen::VectorXd& feats) const {
  return forward(v_hi, feats)(0);
}

double HierPolicy::value_lo_from(const Eigen::VectorXd& feats, int skill) const {
  const int s[1] = {skill};
  return forward(v_lo, conditioned_input(as_matrix(feats), s), nullptr)(0, 0);
}

SkillSample HierPolicy::sample_skill(const Eigen::VectorXd& obs, Rng& rng) const {
  return sample_skill_from(features(obs), rng);
}

ActionSample HierPolicy::sample_action(const Eigen::VectorXd& obs, int skill, Rng& rng) const {
  return sample_action_from(features(obs), skill, rng);
}

TerminationSample HierPolicy::sample_termination(const Eigen::VectorXd& obs, int skill,
                                                 Rng& rng) const {
  return sample_termination_from(features(obs), skill, rng);
}

Eigen::VectorXd HierPolicy::embed(const Eigen::VectorXd& obs) const {
  return embed_batch(as_matrix(obs)).col(0);
}

Eigen::MatrixXd HierPolicy::embed_batch(const Eigen::MatrixXd& obs) const {
  const ParamSet& bb = config_.detached_embedding ? embed_backbone : backbone;
  return forward(embed_head, forward(bb, obs, nullptr), nullptr);
}

namespace {

void categorical_stats(HeadPass& pass, std::span<const int> choices) {
  const Eigen::Index n = pass.logits.cols();
  pass.log_softmax.resize(pass.logits.rows(), n);
  pass.log_probs.resize(n);
  pass.entropies.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    pass.log_softmax.col(j) = log_softmax(pass.logits.col(j));
    const int c = choices[j];
    if (c < 0 || c >= pass.logits.rows()) throw ShapeError("choice out of range for head");
    pass.log_probs(j) = pass.log_softmax(c, j);
    const Eigen::ArrayXd lp = pass.log_softmax.col(j).array();
    pass.entropies(j) = -(lp.exp() * lp).sum();
  }
}

// d(loss)/d(logits) for a categorical head.
Eigen::MatrixXd categorical_logit_grad(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                                       const Eigen::VectorXd& d_entropy) {
  Eigen::MatrixXd g(pass.logits.rows(), pass.logits.cols());
  for (Eigen::Index j = 0; j < pass.logits.cols(); ++j) {
    const Eigen::ArrayXd lp = pass.log_softmax.col(j).array();
    const Eigen::ArrayXd p = lp.exp();
    Eigen::ArrayXd col = -d_log_prob(j) * p;
    col(pass.choices[j]) += d_log_prob(j);
    col += d_entropy(j) * (-p * (lp + pass.entropies(j)));
    g.col(j) = col.matrix();
  }
  return g;
}

void check_batch(const Eigen::MatrixXd& obs, std::size_t a, std::size_t b) {
  if (static_cast<std::size_t>(obs.cols()) != a || a != b)
    throw ShapeError("batch evaluation: column count mismatch");
}

}  // namespace

HeadPass HierPolicy::evaluate_skills(const Eigen::MatrixXd& obs,
                                     std::span<const int> skills) const {
  check_batch(obs, skills.size(), skills.size());
  HeadPass pass;
  pass.skills.assign(skills.begin(), skills.end());
  pass.choices = pass.skills;
  pass.head_input = forward(backbone, obs, &pass.backbone);
  pass.logits = forward(hi, pass.head_input, &pass.policy);
  pass.values = forward(v_hi, pass.head_input, &pass.value).row(0).transpose();
  categorical_stats(pass, pass.choices);
  return pass;
}

HeadPass HierPolicy::evaluate_actions(const Eigen::MatrixXd& obs, std::span<const int> skills,
                                      std::span<const int> actions) const {
  check_batch(obs, skills.size(), actions.size());
  HeadPass pass;
  pass.skills.assign(skills.begin(), skills.end());
  pass.choices.assign(actions.begin(), actions.end());
  const Eigen::MatrixXd feats = forward(backbone, obs, &pass.backbone);
  pass.head_input = conditioned_input(feats, skills);
  pass.logits = forward(lo, pass.head_input, &pass.policy);
  pass.values = forward(v_lo, pass.head_input, &pass.value).row(0).transpose();
  categorical_stats(pass, pass.choices);
  return pass;
}

HeadPass HierPolicy::evaluate_terminations(const Eigen::MatrixXd& obs,
                                           std::span<const int> skills,
                                           std::span<const int> outcomes) const {
  check_batch(obs, skills.size(), outcomes.size());
  HeadPass pass;
  pass.skills.assign(skills.begin(), skills.end());
  pass.choices.assign(outcomes.begin(), outcomes.end());
  const Eigen::MatrixXd feats = forward(backbone, obs, &pass.backbone);
  pass.head_input = conditioned_input(feats, skills);
  pass.logits = forward(term, pass.head_input, &pass.policy);
  const Eigen::Index n = obs.cols();
  pass.log_probs.resize(n);
  pass.entropies.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double x = pass.logits(0, j);
    const double lp1 = log_sigmoid(x);
    const double lp0 = log_sigmoid(-x);
    pass.log_probs(j) = pass.choices[j] ? lp1 : lp0;
    pass.entropies(j) = -(std::exp(lp1) * lp1 + std::exp(lp0) * lp0);
  }
  return pass;
}

void HierPolicy::backward_skills(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                                 const Eigen::VectorXd& d_entropy, const Eigen::VectorXd& d_value,
                                 HierGradients& grads) const {
  const Eigen::MatrixXd g_logits = categorical_logit_grad(pass, d_log_prob, d_entropy);
  Eigen::MatrixXd d_feat, d_feat_v;
  backward(hi, pass.policy, g_logits, grads.hi, &d_feat);
  backward(v_hi, pass.value, d_value.transpose(), grads.v_hi, &d_feat_v);
  d_feat += d_feat_v;
  backward(backbone, pass.backbone, d_feat, grads.backbone);
}

void HierPolicy::backward_actions(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                                  const Eigen::VectorXd& d_entropy,
                                  const Eigen::VectorXd& d_value, HierGradients& grads) const {
  const Eigen::MatrixXd g_logits = categorical_logit_grad(pass, d_log_prob, d_entropy);
  Eigen::MatrixXd d_in, d_in_v;
  backward(lo, pass.policy, g_logits, grads.lo, &d_in);
  backward(v_lo, pass.value, d_value.transpose(), grads.v_lo, &d_in_v);
  d_in += d_in_v;
  const Eigen::Index f = backbone.spec.output_size();
  backward(backbone, pass.backbone, d_in.topRows(f), grads.backbone);
}

void HierPolicy::backward_terminations(const HeadPass& pass, const Eigen::VectorXd& d_log_prob,
                                       const Eigen::VectorXd& d_entropy,
                                       HierGradients& grads) const {
  const Eigen::Index n = pass.logits.cols();
  Eigen::MatrixXd g(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double x = pass.logits(0, j);
    const double p = std::exp(log_sigmoid(x));
    const double dlp = (pass.choices[j] ? 1.0 : 0.0) - p;
    const double dh = -x * p * (1.0 - p);
    g(0, j) = d_log_prob(j) * dlp + d_entropy(j) * dh;
  }
  Eigen::MatrixXd d_in;
  backward(term, pass.policy, g, grads.term, &d_in);
  const Eigen::Index f = backbone.spec.output_size();
  backward(backbone, pass.backbone, d_in.topRows(f), grads.backbone);
}

HierPolicy::EmbedPass HierPolicy::embed_pass(const Eigen::MatrixXd& obs) const {
  EmbedPass pass;
  const ParamSet& bb = config_.detached_embedding ? embed_backbone : backbone;
  const Eigen::MatrixXd feats = forward(bb, obs, &pass.backbone);
  pass.embeddings = forward(embed_head, feats, &pass.head);
  return pass;
}

void HierPolicy::backward_embed(const EmbedPass& pass, const Eigen::MatrixXd& d_embedding,
                                HierGradients& grads) const {
  Eigen::MatrixXd d_feat;
  backward(embed_head, pass.head, d_embedding, grads.embed, &d_feat);
  if (config_.detached_embedding)
    backward(embed_backbone, pass.backbone, d_feat, grads.embed_backbone);
  else
    backward(backbone, pass.backbone, d_feat, grads.backbone);
}

HierGradients HierPolicy::zero_gradients() const {
  HierGradients g;
  g.backbone = Gradients::zeros_like(backbone.layers);
  g.hi = Gradients::zeros_like(hi.layers);
  g.lo = Gradients::zeros_like(lo.layers);
  g.term = Gradients::zeros_like(term.layers);
  g.v_hi = Gradients::zeros_like(v_hi.layers);
  g.v_lo = Gradients::zeros_like(v_lo.layers);
  g.embed = Gradients::zeros_like(embed_head.layers);
  g.embed_backbone = Gradients::zeros_like(embed_backbone.layers);
  return g;
}

double HierPolicy::apply_gradients(HierGradients& grads, double learning_rate,
                                   double max_grad_norm) {
  // The embedding head is trained only through apply_embedding_gradients.
  Gradients* all[6] = {&grads.backbone, &grads.hi, &grads.lo, &grads.term, &grads.v_hi, &grads.v_lo};
  const double norm = clip_global_norm(all, max_grad_norm);
  adam_step(backbone, grads.backbone, learning_rate);
  adam_step(hi, grads.hi, learning_rate);
  adam_step(lo, grads.lo, learning_rate);
  adam_step(term, grads.term, learning_rate);
  adam_step(v_hi, grads.v_hi, learning_rate);
  adam_step(v_lo, grads.v_lo, learning_rate);
  return norm;
}

double HierPolicy::apply_embedding_gradients(HierGradients& grads, double learning_rate,
                                             double max_grad_norm) {
  Gradients& bb_grads = config_.detached_embedding ? grads.embed_backbone : grads.backbone;
  ParamSet& bb = config_.detached_embedding ? embed_backbone : backbone;
  Gradients* both[2] = {&grads.embed, &bb_grads};
  const double norm = clip_global_norm(both, max_grad_norm);
  adam_step(embed_head, grads.embed, learning_rate);
  adam_step(bb, bb_grads, learning_rate);
  return norm;
}

Checkpoint HierPolicy::to_checkpoint(std::int64_t training_step) const {
  Checkpoint c;
  c.training_step = training_step;
  c.heads = {{"backbone", backbone}, {"hi", hi},     {"lo", lo},
             {"term", term},         {"v_hi", v_hi}, {"v_lo", v_lo},
             {"embed", embed_head}};
  if (config_.detached_embedding) c.heads.emplace_back("embed_backbone", embed_backbone);
  c.metadata["kind"] = "hier_policy";
  c.metadata["obs_size"] = config_.obs_size;
  c.metadata["skill_count"] = config_.skill_count;
  c.metadata["embed_dim"] = config_.embed_dim;
  c.metadata["backbone_hidden"] = config_.backbone_hidden;
  c.metadata["head_hidden"] = config_.head_hidden;
  c.metadata["detached_embedding"] = config_.detached_embedding;
  return c;
}

HierPolicy HierPolicy::from_checkpoint(const Checkpoint& ckpt) {
  const auto& m = ckpt.metadata;
  if (m.value("kind", std::string()) != "hier_policy")
    throw IoError("checkpoint does not hold a hierarchical policy");
  HierPolicy p;
  p.config_.obs_size = m.at("obs_size").get<int>();
  p.config_.skill_count = m.at("skill_count").get<int>();
  p.config_.embed_dim = m.at("embed_dim").get<int>();
  p.config_.backbone_hidden = m.at("backbone_hidden").get<std::vector<int>>();
  p.config_.head_hidden = m.at("head_hidden").get<int>();
  p.config_.detached_embedding = m.at("detached_embedding").get<bool>();
  p.config_.validate();
  p.backbone = ckpt.head("backbone");
  p.hi = ckpt.head("hi");
  p.lo = ckpt.head("lo");
  p.term = ckpt.head("term");
  p.v_hi = ckpt.head("v_hi");
  p.v_lo = ckpt.head("v_lo");
  p.embed_head = ckpt.head("embed");
  if (p.config_.detached_embedding) p.embed_backbone = ckpt.head("embed_backbone");
  return p;
}

void HierPolicy::save(const std::filesystem::path& path, std::int64_t training_step) const {
  save_checkpoint(path, to_checkpoint(training_step));
}

HierPolicy HierPolicy::load(const std::filesystem::path& path) {
  return from_checkpoint(load_checkpoint(path));
}

bool HierPolicy::operator==(const HierPolicy& o) const {
  return backbone == o.backbone && hi == o.hi && lo == o.lo && term == o.term &&
         v_hi == o.v_hi && v_lo == o.v_lo && embed_head == o.embed_head &&
         embed_backbone == o.embed_backbone;
}

}  // namespace pasd
