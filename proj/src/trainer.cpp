#include "pasd/trainer.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "pasd/skill_contrast.hpp"

namespace pasd {

int iteration_count(const RunConfig& cfg) {
  const std::int64_t per = static_cast<std::int64_t>(cfg.rollout.rollouts) * cfg.rollout.horizon;
  return static_cast<int>(std::max<std::int64_t>(1, (cfg.total_steps + per - 1) / per));
}

IterationSchedule schedule_for(const RunConfig& cfg, int iteration) {
  const std::int64_t per = static_cast<std::int64_t>(cfg.rollout.rollouts) * cfg.rollout.horizon;
  const std::int64_t step = per * iteration;
  const std::int64_t last = per * (iteration_count(cfg) - 1);
  IterationSchedule s;
  s.step = step;
  s.lambda = linear_schedule(cfg.lambda.start, cfg.lambda.end, step, last);
  s.entropy_coeff = entropy_coeff_at(step, last, cfg.ppo);
  s.learning_rate = learning_rate_at(step, last, cfg.ppo);
  return s;
}

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int iteration) {
  std::ostringstream name;
  name << "iter_" << std::setw(6) << std::setfill('0') << iteration << ".ckpt";
  return dir / "checkpoints" / name.str();
}

void save_state(const HierPolicy& policy, const RunConfig& cfg, int iterations_done,
                const std::filesystem::path& path) {
  Checkpoint ck = policy.to_checkpoint(schedule_for(cfg, iterations_done).step);
  ck.config_hash = config_hash(cfg);
  ck.metadata["iteration"] = iterations_done;
  ck.metadata["layout"] = cfg.layout;
  save_checkpoint(path, ck);
}

// Keeps metrics records from iterations before `iteration`.
void truncate_metrics(const std::filesystem::path& path, int iteration) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.value("iteration", 0) < iteration) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

}  // namespace

TrainResult train_pasd(const RunConfig& cfg_in, const Population& partners,
                       const TrainOptions& options) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  const Layout layout = resolve_layout(cfg.layout);
  const RewardConfig rewards = RewardConfig::for_layout(layout);
  const PartnerPool pool(partners, layout);
  cfg.policy.obs_size = observation_size(layout);

  TrainResult result;
  int start = 0;
  if (!options.resume.empty()) {
    const Checkpoint ck = load_checkpoint(options.resume);
    if (ck.config_hash != config_hash(cfg))
      throw ConfigError("checkpoint " + options.resume.string() + " was written by a different config");
    result.policy = HierPolicy::from_checkpoint(ck);
    start = ck.metadata.value("iteration", 0);
  } else {
    result.policy = HierPolicy(cfg.policy, mix_seed(cfg.seed, 0x5eed));
  }
  HierPolicy& policy = result.policy;

  std::ofstream metrics_out;
  if (!options.output_dir.empty()) {
    std::filesystem::create_directories(options.output_dir / "checkpoints");
    std::ofstream(options.output_dir / "config.json") << to_json(cfg).dump(2) << "\n";
    const auto mpath = options.output_dir / "metrics.jsonl";
    if (start > 0)
      truncate_metrics(mpath, start);
    else
      std::ofstream(mpath, std::ios::trunc);
    metrics_out.open(mpath, std::ios::app);
  }

  const int total = iteration_count(cfg);
  int it = start;
  for (; it < total; ++it) {
    if (options.stop_after > 0 && it - start >= options.stop_after) break;
    const IterationSchedule sched = schedule_for(cfg, it);
    const std::uint64_t base = mix_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(it));

    RolloutBatch batch = run_rollouts(policy, pool, layout, rewards, cfg.rollout, mix_seed(base, 1));
    Rng seg_rng(mix_seed(base, 2));
    std::vector<SkillSegment> segments = segment_rollouts(batch, cfg.contrast, seg_rng);
    const PairSets pairs = build_pairs(segments);
    ScoreStats stats;
    const std::vector<double> intrinsic =
        score_segments(policy, batch.obs, segments, pairs, cfg.contrast, &stats);
    fill_intrinsic(batch, segments, intrinsic);
    apply_high_mixing(batch, sched.lambda);

    const UpdateMetrics um = ppo_update(policy, batch, cfg.ppo, sched.lambda, sched.entropy_coeff,
                                        sched.learning_rate, mix_seed(base, 3));
    double embed_loss = 0.0;
    bool embed_trained = false;
    if (!segments.empty() && std::any_of(pairs.positives.begin(), pairs.positives.end(),
                                         [](const auto& kv) { return kv.second.size() >= 2; })) {
      const double lr = cfg.contrast.embed_learning_rate > 0.0 ? cfg.contrast.embed_learning_rate
                                                               : sched.learning_rate;
      for (int k = 0; k < cfg.contrast.embed_steps; ++k) {
        const double l = update_embedding(policy, batch.obs, segments, cfg.contrast, lr,
                                          cfg.ppo.max_grad_norm);
        if (k == 0) embed_loss = l;
      }
      embed_trained = cfg.contrast.embed_steps > 0;
    }

    double ret = 0.0, agent_ret = 0.0, deliveries = 0.0;
    for (const auto& e : batch.episodes) {
      ret += e.team_return;
      agent_ret += e.agent_return;
      deliveries += e.deliveries;
    }
    const double ne = static_cast<double>(batch.episodes.size());
    double seg_len = 0.0;
    for (const auto& h : batch.high) seg_len += h.length();
    seg_len /= static_cast<double>(batch.high.size());

    nlohmann::json rec;
    rec["iteration"] = it;
    rec["step"] = sched.step;
    rec["lambda"] = sched.lambda;
    rec["entropy_coeff"] = sched.entropy_coeff;
    rec["learning_rate"] = sched.learning_rate;
    rec["mean_return"] = ret / ne;
    rec["mean_agent_return"] = agent_ret / ne;
    rec["deliveries_per_episode"] = deliveries / ne;
    rec["intrinsic_mean"] = stats.mean_reward;
    rec["infonce_loss"] = stats.mean_loss;
    rec["mi_lower_bound"] = stats.mi_bound;
    rec["embedding_loss"] = embed_trained ? nlohmann::json(embed_loss) : nlohmann::json(nullptr);
    rec["segments"] = stats.segments;
    rec["degenerate_segments"] = stats.degenerate_segments;
    rec["mean_skill_duration"] = seg_len;
    rec["update"] = um.to_json();
    if (metrics_out) metrics_out << rec.dump() << "\n" << std::flush;
    result.metrics.push_back(rec);
    if (options.progress)
      *options.progress << "iter " << it + 1 << "/" << total << " step " << sched.step
                        << " return " << ret / ne << " lambda " << sched.lambda << "\n";

    if (!options.output_dir.empty() && cfg.checkpoint_every > 0 &&
        (it + 1) % cfg.checkpoint_every == 0)
      save_state(policy, cfg, it + 1, checkpoint_path(options.output_dir, it + 1));
  }
  result.iterations_done = it;
  result.complete = it == total;
  if (!options.output_dir.empty()) {
    save_state(policy, cfg, it, options.output_dir / "checkpoints" / "latest.ckpt");
    if (result.complete) save_state(policy, cfg, it, options.output_dir / "policy.ckpt");
  }
  return result;
}

}  // namespace pasd
