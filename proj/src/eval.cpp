#include "pasd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pasd {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["layout"] = layout;
  j["episodes_per_start"] = episodes_per_start;
  j["episode_count"] = episode_count;
  j["set_means"] = set_means;
  j["overall_mean"] = overall_mean;
  j["overall_std"] = overall_std;
  j["partners"] = nlohmann::json::array();
  for (const auto& p : partners)
    j["partners"].push_back({{"id", p.id},
                             {"set", p.set},
                             {"start_means", p.start_means},
                             {"mean", p.mean}});
  return j;
}

EvalReport evaluate(const AgentFactory& make_agent, const PartnerPool& partners,
                    const Layout& layout, const EvalOptions& options) {
  if (partners.size() == 0) throw ConfigError("evaluation population is empty");
  if (options.episodes < 1) throw ConfigError("episodes per partner must be at least 1");
  const RewardConfig rewards = RewardConfig::for_layout(layout);
  EvalReport report;
  report.layout = layout.name;
  report.episodes_per_start = options.episodes;

  std::map<std::string, std::vector<double>> by_set;
  for (std::size_t p = 0; p < partners.size(); ++p) {
    PartnerResult pr;
    pr.id = partners.spec(p).id;
    pr.set = partners.spec(p).set_name();
    for (int start = 0; start < 2; ++start) {
      double sum = 0.0;
      for (int e = 0; e < options.episodes; ++e) {
        const std::uint64_t seed =
            mix_seed(mix_seed(options.seed, p), static_cast<std::uint64_t>(start * options.episodes + e));
        auto agent = make_agent();
        auto partner = partners.make(p);
        TrajectoryLog log =
            play_episode(layout, rewards, *agent, *partner, start == 1, seed, 0, options.horizon);
        log.header.partner = pr.id;
        double ret = 0.0;
        for (const auto& r : log.records) ret += r.team_reward;
        sum += ret;
        ++report.episode_count;
        if (!options.trajectory_dir.empty()) {
          std::ostringstream name;
          name << "partner" << p << "_start" << start << "_ep" << e << ".jsonl";
          write_log(options.trajectory_dir / name.str(), log);
        }
      }
      pr.start_means[start] = sum / options.episodes;
    }
    pr.mean = 0.5 * (pr.start_means[0] + pr.start_means[1]);
    by_set[pr.set].push_back(pr.mean);
    report.partners.push_back(pr);
  }
  for (const auto& [set, means] : by_set)
    report.set_means[set] = std::accumulate(means.begin(), means.end(), 0.0) / means.size();
  double mean = 0.0;
  for (const auto& [_, m] : report.set_means) mean += m;
  mean /= static_cast<double>(report.set_means.size());
  double var = 0.0;
  for (const auto& [_, m] : report.set_means) var += (m - mean) * (m - mean);
  report.overall_mean = mean;
  report.overall_std = std::sqrt(var / static_cast<double>(report.set_means.size()));
  return report;
}

std::vector<EmbeddingRecord> sequence_embeddings(const HierPolicy& policy, const Layout& layout_in,
                                                 const TrajectoryLog& log, int window,
                                                 int min_segment, int log_index) {
  std::vector<int> skills;
  for (const auto& r : log.records) skills.push_back(r.skill);
  if (skills.empty() || std::all_of(skills.begin(), skills.end(), [](int z) { return z < 0; }))
    throw ConfigError("trajectory log carries no skill labels");
  Layout layout = layout_in;
  if (log.header.horizon > 0) layout.horizon = log.header.horizon;
  const ReplayResult replay = replay_log(layout, log);
  const int agent = log.header.agent_index;
  const int obs_size = observation_size(layout);

  std::vector<EmbeddingRecord> out;
  int j = 0;
  for (auto [first, len] : skill_windows(skills, window, min_segment)) {
    Eigen::MatrixXd obs(obs_size, len);
    for (int t = 0; t < len; ++t) {
      const auto o = observe(layout, replay.states[first + t], agent);
      obs.col(t) = Eigen::Map<const Eigen::VectorXd>(o.data(), obs_size);
    }
    const Eigen::MatrixXd emb = policy.embed_batch(obs);
    EmbeddingRecord rep;
    rep.rollout = log_index;
    rep.segment = j;
    rep.skill = skills[first];
    rep.partner_id = log.header.partner;
    const Eigen::VectorXd mid = emb.col(len / 2);
    rep.embedding.assign(mid.data(), mid.data() + mid.size());
    EmbeddingRecord pooled = rep;
    pooled.variant = "pooled";
    Eigen::VectorXd mean = emb.rowwise().mean();
    if (mean.norm() > 0.0) mean.normalize();
    pooled.embedding.assign(mean.data(), mean.data() + mean.size());
    out.push_back(std::move(rep));
    out.push_back(std::move(pooled));
    ++j;
  }
  return out;
}

nlohmann::json SimilarityMatrix::to_json() const {
  nlohmann::json j;
  j["skills"] = skills;
  j["segments"] = segments;
  j["values"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    std::vector<double> row(values.cols());
    for (Eigen::Index c = 0; c < values.cols(); ++c) row[c] = values(r, c);
    j["values"].push_back(row);
  }
  return j;
}

SimilarityMatrix similarity_matrix(const std::vector<EmbeddingRecord>& table) {
  if (table.empty()) throw ConfigError("similarity_matrix: empty embedding table");
  std::vector<int> order(table.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return table[a].skill < table[b].skill; });
  const std::size_t d = table.front().embedding.size();
  Eigen::MatrixXd e(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(table.size()));
  SimilarityMatrix m;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& r = table[order[i]];
    if (r.embedding.size() != d) throw ShapeError("similarity_matrix: embedding size mismatch");
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(r.embedding.data(), static_cast<Eigen::Index>(d));
    const double n = v.norm();
    if (n > 0.0) v /= n;
    e.col(i) = v;
    m.skills.push_back(r.skill);
    m.segments.push_back(order[i]);
  }
  m.values = e.transpose() * e;
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    m.values(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < m.values.cols(); ++j) {
      const double v = std::clamp(m.values(i, j), -1.0, 1.0);
      m.values(i, j) = v;
      m.values(j, i) = v;
    }
  }
  return m;
}

SkillSeparation intra_inter_stats(const SimilarityMatrix& m) {
  double intra = 0.0, inter = 0.0;
  long n_intra = 0, n_inter = 0;
  const Eigen::Index n = m.values.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (m.skills[i] == m.skills[j]) {
        intra += m.values(i, j);
        ++n_intra;
      } else {
        inter += m.values(i, j);
        ++n_inter;
      }
    }
  if (n_intra == 0) throw ConfigError("intra_inter_stats: no skill has two segments");
  if (n_inter == 0) throw ConfigError("intra_inter_stats: only one skill present");
  SkillSeparation s;
  s.intra = intra / static_cast<double>(n_intra);
  s.inter = inter / static_cast<double>(n_inter);
  s.gap = s.intra - s.inter;
  return s;
}

}  // namespace pasd
