#include "pasd/skill_contrast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

namespace pasd {

void ContrastConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("contrast temperature must be positive");
  if (window < 1) throw ConfigError("contrast window must be at least 1");
  if (min_segment < 1 || min_segment > window)
    throw ConfigError("min segment length must lie in [1, window]");
  if (representative != "uniform" && representative != "midpoint")
    throw ConfigError("representative rule must be 'uniform' or 'midpoint'");
  if (embed_steps < 0) throw ConfigError("contrast embed_steps must be non-negative");
  if (!(embed_learning_rate >= 0.0)) throw ConfigError("contrast embed_learning_rate must be non-negative");
}

std::vector<std::pair<int, int>> skill_windows(std::span<const int> skills, int window,
                                               int min_segment) {
  std::vector<std::pair<int, int>> out;
  std::size_t i = 0;
  while (i < skills.size()) {
    std::size_t j = i;
    while (j < skills.size() && skills[j] == skills[i]) ++j;
    if (skills[i] >= 0) {
      const int run = static_cast<int>(j - i);
      int start = static_cast<int>(i);
      for (int w = 0; w < run / window; ++w, start += window) out.emplace_back(start, window);
      const int rest = run % window;
      if (rest > 0 && rest >= min_segment) out.emplace_back(start, rest);
    }
    i = j;
  }
  return out;
}

std::vector<SkillSegment> segment_rollouts(const RolloutBatch& batch, const ContrastConfig& cfg,
                                           Rng& rng) {
  cfg.validate();
  if (batch.low.empty()) throw ConfigError("segment_rollouts: empty buffer");
  std::vector<SkillSegment> out;
  std::vector<int> skills(batch.horizon);
  for (int k = 0; k < batch.rollouts; ++k) {
    for (int t = 0; t < batch.horizon; ++t) skills[t] = batch.low[batch.step_index(k, t)].skill;
    int j = 0;
    for (auto [first, len] : skill_windows(skills, cfg.window, cfg.min_segment)) {
      SkillSegment s;
      s.rollout = k;
      s.index = j++;
      s.skill = skills[first];
      s.partner_id = batch.partner_id.empty() ? std::string() : batch.partner_id[k];
      s.first_step = batch.step_index(k, first);
      s.length = len;
      const int offset = cfg.representative == "uniform"
                             ? static_cast<int>(rng.index(static_cast<std::size_t>(len)))
                             : len / 2;
      s.representative = s.first_step + offset;
      out.push_back(std::move(s));
    }
  }
  return out;
}

bool PairSets::active(int skill) const {
  auto it = positives.find(skill);
  return it != positives.end() && it->second.size() >= 2;
}

bool PairSets::degenerate() const {
  if (positives.size() < 2) return true;
  return std::none_of(positives.begin(), positives.end(),
                      [](const auto& kv) { return kv.second.size() >= 2; });
}

PairSets build_pairs(std::span<const int> skills) {
  PairSets p;
  for (std::size_t i = 0; i < skills.size(); ++i)
    p.positives[skills[i]].push_back(static_cast<int>(i));
  for (const auto& [z, members] : p.positives) {
    auto& neg = p.negatives[z];
    for (std::size_t i = 0; i < skills.size(); ++i)
      if (skills[i] != z) neg.push_back(static_cast<int>(i));
    if (members.size() < 2) p.degenerate_skills.push_back(z);
  }
  return p;
}

PairSets build_pairs(const std::vector<SkillSegment>& segments) {
  std::vector<int> skills;
  skills.reserve(segments.size());
  for (const auto& s : segments) skills.push_back(s.skill);
  return build_pairs(skills);
}

namespace {

struct AnchorTerms {
  double loss;
  double reward;
};

// `pos` and `neg` are similarities of the anchor to its positives/negatives.
AnchorTerms anchor_terms(std::span<const double> pos, std::span<const double> neg, double tau) {
  double top = -INFINITY;
  for (double s : pos) top = std::max(top, s / tau);
  for (double s : neg) top = std::max(top, s / tau);
  double z = 0.0;
  for (double s : pos) z += std::exp(s / tau - top);
  for (double s : neg) z += std::exp(s / tau - top);
  const double lse = top + std::log(z);
  double loss = 0.0;
  double mass = 0.0;
  for (double s : pos) {
    loss -= s / tau - lse;
    mass += std::exp(s / tau - top);
  }
  const double n = static_cast<double>(pos.size());
  // One division keeps the all-equal case at exactly 1 / (|P| + |N|).
  return {loss / n, mass / (z * n)};
}

void check_unit(const Eigen::VectorXd& v) {
  if (std::abs(v.norm() - 1.0) > 1e-6) throw ConfigError("embedding is not unit-norm");
}

AnchorTerms anchor_terms(const Eigen::VectorXd& anchor, const std::vector<Eigen::VectorXd>& pos,
                         const std::vector<Eigen::VectorXd>& neg, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  if (pos.empty()) throw ConfigError("anchor has no positives");
  check_unit(anchor);
  std::vector<double> sp, sn;
  for (const auto& v : pos) {
    if (v.size() != anchor.size()) throw ShapeError("embedding size mismatch");
    check_unit(v);
    sp.push_back(anchor.dot(v));
  }
  for (const auto& v : neg) {
    if (v.size() != anchor.size()) throw ShapeError("embedding size mismatch");
    check_unit(v);
    sn.push_back(anchor.dot(v));
  }
  return anchor_terms(sp, sn, tau);
}

}  // namespace

double infonce_loss(const Eigen::VectorXd& anchor, const std::vector<Eigen::VectorXd>& positives,
                    const std::vector<Eigen::VectorXd>& negatives, double temperature) {
  return anchor_terms(anchor, positives, negatives, temperature).loss;
}

double intrinsic_reward(const Eigen::VectorXd& anchor,
                        const std::vector<Eigen::VectorXd>& positives,
                        const std::vector<Eigen::VectorXd>& negatives, double temperature) {
  return anchor_terms(anchor, positives, negatives, temperature).reward;
}

double mi_lower_bound(double loss, int negative_count) {
  if (negative_count < 1) throw ConfigError("mi_lower_bound needs at least one negative");
  return std::log(static_cast<double>(negative_count)) - loss;
}

std::vector<double> score_segments(const HierPolicy& policy, const Eigen::MatrixXd& obs,
                                   std::vector<SkillSegment>& segments, const PairSets& pairs,
                                   const ContrastConfig& cfg, ScoreStats* stats) {
  std::vector<double> rewards(segments.size(), 0.0);
  if (segments.empty()) return rewards;
  Eigen::MatrixXd reps(obs.rows(), static_cast<Eigen::Index>(segments.size()));
  for (std::size_t i = 0; i < segments.size(); ++i) reps.col(i) = obs.col(segments[i].representative);
  const Eigen::MatrixXd emb = policy.embed_batch(reps);
  for (std::size_t i = 0; i < segments.size(); ++i) segments[i].embedding = emb.col(i);
  const Eigen::MatrixXd gram = emb.transpose() * emb;

  ScoreStats st;
  st.segments = static_cast<int>(segments.size());
  int anchors = 0;
  int bounded = 0;
  std::vector<double> sp, sn;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const int z = segments[i].skill;
    if (!pairs.active(z)) {
      ++st.degenerate_segments;
      continue;
    }
    sp.clear();
    sn.clear();
    for (int j : pairs.positives.at(z))
      if (j != static_cast<int>(i)) sp.push_back(gram(i, j));
    for (int j : pairs.negatives.at(z)) sn.push_back(gram(i, j));
    const AnchorTerms a = anchor_terms(sp, sn, cfg.temperature);
    rewards[i] = a.reward;
    st.mean_reward += a.reward;
    st.mean_loss += a.loss;
    if (!sn.empty()) {
      st.mi_bound += mi_lower_bound(a.loss, static_cast<int>(sn.size()));
      ++bounded;
    }
    ++anchors;
  }
  if (anchors > 0) {
    st.mean_reward /= anchors;
    st.mean_loss /= anchors;
  }
  if (bounded > 0) st.mi_bound /= bounded;
  if (stats) *stats = st;
  return rewards;
}

void fill_intrinsic(RolloutBatch& batch, const std::vector<SkillSegment>& segments,
                    std::span<const double> rewards) {
  if (rewards.size() != segments.size()) throw ShapeError("fill_intrinsic: size mismatch");
  for (auto& ls : batch.low) ls.intrinsic = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i)
    for (int t = 0; t < segments[i].length; ++t)
      batch.low[segments[i].first_step + t].intrinsic = rewards[i];
}

double batch_infonce(const Eigen::MatrixXd& emb, std::span<const int> skills, double tau,
                     Eigen::MatrixXd* grad) {
  if (static_cast<std::size_t>(emb.cols()) != skills.size())
    throw ShapeError("batch_infonce: column count mismatch");
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  const PairSets pairs = build_pairs(skills);
  const Eigen::MatrixXd gram = emb.transpose() * emb;
  const Eigen::Index n = emb.cols();
  Eigen::MatrixXd g_sim = Eigen::MatrixXd::Zero(n, n);
  double total = 0.0;
  int anchors = 0;
  std::vector<int> idx;
  std::vector<double> sims;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int z = skills[i];
    if (!pairs.active(z)) continue;
    idx.clear();
    sims.clear();
    std::size_t positives = 0;
    for (int j : pairs.positives.at(z)) {
      if (j == i) continue;
      idx.push_back(j);
      ++positives;
    }
    for (int j : pairs.negatives.at(z)) idx.push_back(j);
    double top = -INFINITY;
    for (int j : idx) {
      sims.push_back(gram(i, j) / tau);
      top = std::max(top, sims.back());
    }
    double zsum = 0.0;
    for (double s : sims) zsum += std::exp(s - top);
    const double lse = top + std::log(zsum);
    double loss = lse;
    for (std::size_t q = 0; q < positives; ++q) loss -= sims[q] / static_cast<double>(positives);
    total += loss;
    ++anchors;
    for (std::size_t q = 0; q < idx.size(); ++q) {
      double g = std::exp(sims[q] - lse);
      if (q < positives) g -= 1.0 / static_cast<double>(positives);
      g_sim(i, idx[q]) += g / tau;
    }
  }
  if (anchors == 0) throw ConfigError("no anchor has a positive pair");
  if (grad) {
    g_sim /= static_cast<double>(anchors);
    // d(e_i . e_j) contributes to both columns.
    *grad = emb * (g_sim + g_sim.transpose());
  }
  return total / anchors;
}

double update_embedding(HierPolicy& policy, const Eigen::MatrixXd& obs,
                        const std::vector<SkillSegment>& segments, const ContrastConfig& cfg,
                        double learning_rate, double max_grad_norm) {
  if (segments.empty()) throw ConfigError("update_embedding: no segments");
  Eigen::MatrixXd reps(obs.rows(), static_cast<Eigen::Index>(segments.size()));
  std::vector<int> skills;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    reps.col(i) = obs.col(segments[i].representative);
    skills.push_back(segments[i].skill);
  }
  const auto pass = policy.embed_pass(reps);
  Eigen::MatrixXd g;
  const double loss = batch_infonce(pass.embeddings, skills, cfg.temperature, &g);
  HierGradients grads = policy.zero_gradients();
  policy.backward_embed(pass, g, grads);
  policy.apply_embedding_gradients(grads, learning_rate, max_grad_norm);
  return loss;
}

void write_embedding_record(std::ostream& out, const EmbeddingRecord& r) {
  nlohmann::json j;
  j["rollout"] = r.rollout;
  j["segment"] = r.segment;
  j["skill"] = r.skill;
  j["partner"] = r.partner_id;
  j["variant"] = r.variant;
  j["embedding"] = r.embedding;
  out << j.dump() << "\n";
}

std::vector<EmbeddingRecord> read_embedding_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding table " + path.string());
  std::vector<EmbeddingRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EmbeddingRecord r;
      r.rollout = j.at("rollout").get<int>();
      r.segment = j.at("segment").get<int>();
      r.skill = j.at("skill").get<int>();
      r.partner_id = j.value("partner", std::string());
      r.variant = j.value("variant", std::string("representative"));
      r.embedding = j.at("embedding").get<std::vector<double>>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed embedding record: ") + e.what(), line_no, 1);
    }
  }
  return out;
}

}  // namespace pasd
