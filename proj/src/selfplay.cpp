#include "pasd/selfplay.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "pasd/ppo.hpp"

namespace pasd {

std::vector<std::uint64_t> population_seeds(std::uint64_t run_seed, const std::string& role,
                                            int count) {
  if (role != "train" && role != "eval") throw ConfigError("unknown population role '" + role + "'");
  const std::uint64_t stream = role == "train" ? 0x7a41 : 0xe7a1;
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i)
    out.push_back(mix_seed(mix_seed(run_seed, stream), static_cast<std::uint64_t>(i)));
  return out;
}

std::array<int, 3> stage_iterations(int iterations) {
  if (iterations < 1) throw ConfigError("self-play needs at least one iteration");
  auto at = [&](int pct) { return std::max(1, (iterations * pct + 99) / 100); };
  return {at(10), at(50), iterations};
}

std::vector<double> diversity_bonus(const FlatPolicy& current,
                                    const std::vector<FlatPolicy>& earlier,
                                    const Eigen::MatrixXd& obs) {
  std::vector<double> out(static_cast<std::size_t>(obs.cols()), 0.0);
  if (earlier.empty()) return out;
  const Eigen::MatrixXd p = current.action_probs_batch(obs);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(p.rows(), p.cols());
  for (const auto& e : earlier) mean += e.action_probs_batch(obs);
  mean /= static_cast<double>(earlier.size());
  for (Eigen::Index t = 0; t < obs.cols(); ++t) {
    const Eigen::VectorXd a = p.col(t), b = mean.col(t);
    out[t] = jsd(std::span<const double>(a.data(), a.size()),
                 std::span<const double>(b.data(), b.size()));
  }
  return out;
}

namespace {

struct ChefTrace {
  std::vector<int> cols;  // columns into the batch observation matrix
  std::vector<double> rewards;
  std::vector<double> values;
};

std::string file_hash(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

}  // namespace

SelfPlayResult train_selfplay_population(const RunConfig& cfg_in, const SelfPlayOptions& options) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  const Layout layout = resolve_layout(cfg.layout);
  RewardConfig rewards = RewardConfig::for_layout(layout);
  rewards.partner_delivery_penalty = 0.0;
  const int obs_size = observation_size(layout);
  const int rollouts = cfg.population.rollouts;
  const int horizon = cfg.rollout.horizon;
  const std::int64_t per_iter = static_cast<std::int64_t>(rollouts) * horizon;
  const int iterations = static_cast<int>((cfg.population.steps + per_iter - 1) / per_iter);
  const auto stages = stage_iterations(iterations);
  const std::int64_t last = per_iter * (iterations - 1);
  const auto seeds = population_seeds(cfg.seed, cfg.population.role, cfg.population.count);
  const std::string hash = config_hash(cfg);

  SelfPlayResult result;
  result.population.role = cfg.population.role;
  result.population.layout = layout.name;
  result.population.config_hash = hash;

  std::ofstream metrics_out;
  if (!options.output_dir.empty()) {
    std::filesystem::create_directories(options.output_dir / "agents");
    std::ofstream(options.output_dir / "config.json") << to_json(cfg).dump(2) << "\n";
    metrics_out.open(options.output_dir / "metrics.jsonl", std::ios::trunc);
  }

  std::vector<FlatPolicy> finished;
  for (int agent = 0; agent < cfg.population.count; ++agent) {
    const std::uint64_t seed = seeds[agent];
    FlatPolicy policy(obs_size, kNumActions, seed, cfg.population.hidden);
    for (int it = 0; it < iterations; ++it) {
      const std::int64_t at_step = per_iter * it;
      const std::uint64_t base = mix_seed(seed, 0x1000 + static_cast<std::uint64_t>(it));
      const int cols = 2 * rollouts * horizon;
      FlatBatch batch;
      batch.obs.resize(obs_size, cols);
      batch.actions.resize(cols);
      batch.log_probs.resize(cols);
      std::vector<ChefTrace> traces;
      double team_return = 0.0;
      int col = 0;
      for (int k = 0; k < rollouts; ++k) {
        const std::uint64_t ep_seed = mix_seed(base, static_cast<std::uint64_t>(k));
        Rng rng(mix_seed(ep_seed, 1));
        WorldState s = reset(layout, ep_seed, k % 2 == 1);
        ChefTrace tr[2];
        while (s.tick < horizon) {
          int a[2];
          for (int c = 0; c < 2; ++c) {
            const auto o = observe(layout, s, c);
            const Eigen::Map<const Eigen::VectorXd> v(o.data(), obs_size);
            const ActionSample smp = policy.sample(v, rng);
            batch.obs.col(col) = v;
            batch.actions[col] = smp.action;
            batch.log_probs[col] = smp.log_prob;
            tr[c].cols.push_back(col);
            tr[c].values.push_back(smp.value);
            a[c] = smp.action;
            ++col;
          }
          const StepResult res = step(
              layout, s, JointAction::of(static_cast<Action>(a[0]), static_cast<Action>(a[1])),
              rewards);
          for (int c = 0; c < 2; ++c) tr[c].rewards.push_back(res.team_reward + res.shaped[c]);
          team_return += res.team_reward;
          s = res.state;
        }
        traces.push_back(std::move(tr[0]));
        traces.push_back(std::move(tr[1]));
      }

      const std::vector<double> bonus = diversity_bonus(policy, finished, batch.obs);
      double bonus_mean = 0.0;
      batch.advantages.resize(cols);
      batch.returns.resize(cols);
      for (auto& tr : traces) {
        std::vector<double> r = tr.rewards;
        for (std::size_t t = 0; t < r.size(); ++t) {
          r[t] += cfg.population.diversity_weight * bonus[tr.cols[t]];
          bonus_mean += bonus[tr.cols[t]];
        }
        std::vector<int> dones(r.size(), 0);
        dones.back() = 1;
        const GaeResult g = gae(r, tr.values, 0.0, cfg.ppo.gamma, cfg.ppo.gae_lambda, dones);
        for (std::size_t t = 0; t < r.size(); ++t) {
          batch.advantages[tr.cols[t]] = g.advantages[t];
          batch.returns[tr.cols[t]] = g.returns[t];
        }
      }
      bonus_mean /= static_cast<double>(cols);

      const UpdateMetrics um = ppo_update_flat(
          policy, batch, cfg.ppo, entropy_coeff_at(at_step, last, cfg.ppo),
          learning_rate_at(at_step, last, cfg.ppo), cfg.ppo.minibatch_per_env * rollouts,
          mix_seed(base, 3));

      nlohmann::json rec;
      rec["agent"] = agent;
      rec["iteration"] = it;
      rec["step"] = at_step;
      rec["mean_return"] = team_return / rollouts;
      rec["diversity_bonus"] = bonus_mean;
      rec["update"] = um.to_json();
      if (metrics_out) metrics_out << rec.dump() << "\n" << std::flush;
      result.metrics.push_back(rec);
      if (options.progress)
        *options.progress << "agent " << agent + 1 << "/" << cfg.population.count << " iter "
                          << it + 1 << "/" << iterations << " return " << team_return / rollouts
                          << "\n";

      for (int st = 0; st < 3; ++st) {
        if (it + 1 != stages[st]) continue;
        const Stage stage = static_cast<Stage>(st);
        const std::string id = "agent" + std::to_string(agent) + "_" + to_string(stage);
        std::filesystem::path path;
        if (!options.output_dir.empty()) {
          path = options.output_dir / "agents" / (id + ".ckpt");
          Checkpoint ck = policy.to_checkpoint(per_iter * (it + 1));
          ck.config_hash = hash;
          ck.metadata["agent"] = agent;
          ck.metadata["seed"] = seed;
          ck.metadata["stage"] = to_string(stage);
          save_checkpoint(path, ck);
        }
        PartnerSpec p = PartnerSpec::learned(id, path, stage, seed, per_iter * (it + 1));
        if (!path.empty()) p.checkpoint_hash = file_hash(path);
        result.population.partners.push_back(p);
      }
    }
    finished.push_back(policy);
  }
  if (!options.output_dir.empty())
    save_manifest(options.output_dir / "population.json", result.population);
  return result;
}

}  // namespace pasd
