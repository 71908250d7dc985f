#include "pasd/rollout.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

namespace pasd {

namespace {

Layout with_horizon(const Layout& layout, int horizon) {
  Layout out = layout;
  if (horizon > 0) out.horizon = horizon;
  return out;
}

void close_segment(RolloutBatch& batch, int end, bool truncated, double gamma) {
  HighSegment& seg = batch.high.back();
  seg.end = end;
  seg.truncated = truncated;
  std::vector<double> r;
  r.reserve(seg.length());
  for (int i = 0; i < seg.length(); ++i) r.push_back(batch.low[seg.first_step + i].reward);
  seg.extrinsic_return = segment_return(r, gamma);
}

}  // namespace

RolloutBatch run_rollouts(const HierPolicy& policy, const PartnerPool& partners,
                          const Layout& base_layout, const RewardConfig& rewards,
                          const RolloutConfig& cfg, std::uint64_t seed) {
  if (cfg.rollouts < 1) throw ConfigError("rollout count must be at least 1");
  if (partners.size() == 0) throw ConfigError("partner population is empty");
  const Layout layout = with_horizon(base_layout, cfg.horizon);
  const int T = layout.horizon;
  const int obs_size = observation_size(layout);
  if (obs_size != policy.config().obs_size)
    throw ShapeError("policy observation size does not match the layout");

  RolloutBatch batch;
  batch.rollouts = cfg.rollouts;
  batch.horizon = T;
  batch.obs.resize(obs_size, static_cast<Eigen::Index>(cfg.rollouts) * T);
  batch.low.resize(static_cast<std::size_t>(cfg.rollouts) * T);
  batch.final_obs.resize(obs_size, cfg.rollouts);

  for (int k = 0; k < cfg.rollouts; ++k) {
    Rng rng(mix_seed(seed, 2 * static_cast<std::uint64_t>(k)));
    Rng partner_rng(mix_seed(seed, 2 * static_cast<std::uint64_t>(k) + 1));
    const std::size_t p = sample_partner(partners.size(), rng);
    const bool swap = cfg.random_start ? rng.bernoulli(0.5) : (k % 2 == 1);
    auto partner = partners.make(p);
    partner->reset();
    WorldState state = reset(layout, seed, swap);

    EpisodeStats stats;
    stats.partner = static_cast<int>(p);
    stats.partner_id = partners.spec(p).id;
    stats.swap_start = swap;
    batch.partner.push_back(static_cast<int>(p));
    batch.partner_id.push_back(stats.partner_id);

    int skill = -1;
    int seg_len = 0;
    for (int t = 0; t < T; ++t) {
      const int i = batch.step_index(k, t);
      observe_into(layout, state, 0,
                   std::span<double>(batch.obs.col(i).data(), static_cast<std::size_t>(obs_size)));
      const Eigen::VectorXd feats = policy.features(batch.obs.col(i));
      LowStep& ls = batch.low[i];
      ls.rollout = k;
      ls.t = t;
      bool switch_skill = skill < 0;
      if (skill >= 0) {
        if (cfg.max_segment_length > 0 && seg_len >= cfg.max_segment_length) {
          switch_skill = true;
        } else {
          const TerminationSample ts = policy.sample_termination_from(feats, skill, rng);
          ls.has_termination = true;
          ls.terminate = ts.terminate ? 1 : 0;
          ls.terminated_skill = skill;
          ls.termination_log_prob = ts.log_prob;
          switch_skill = ts.terminate;
        }
      }
      if (switch_skill) {
        if (!batch.high.empty() && skill >= 0) close_segment(batch, t, false, cfg.gamma);
        const SkillSample ss = policy.sample_skill_from(feats, rng);
        HighSegment seg;
        seg.rollout = k;
        seg.begin = t;
        seg.first_step = i;
        seg.skill = ss.skill;
        seg.log_prob = ss.log_prob;
        seg.value = ss.value;
        batch.high.push_back(seg);
        skill = ss.skill;
        seg_len = 0;
        ls.segment_start = true;
      }
      ++seg_len;
      const ActionSample as = policy.sample_action_from(feats, skill, rng);
      const Action partner_action = partner->act(layout, state, 1, partner_rng);
      const StepResult res =
          step(layout, state, JointAction::of(static_cast<Action>(as.action), partner_action), rewards);
      ls.skill = skill;
      ls.action = as.action;
      ls.partner_action = static_cast<int>(partner_action);
      ls.log_prob = as.log_prob;
      ls.value = as.value;
      ls.reward = res.team_reward + res.shaped[0];
      ls.segment = static_cast<int>(batch.high.size()) - 1;
      stats.team_return += res.team_reward;
      stats.agent_return += ls.reward;
      for (const Event& e : res.events)
        if (e.kind == EventKind::kDelivery) ++stats.deliveries;
      state = res.state;
    }
    observe_into(layout, state, 0,
                 std::span<double>(batch.final_obs.col(k).data(), static_cast<std::size_t>(obs_size)));
    const Eigen::VectorXd feats = policy.features(batch.final_obs.col(k));
    batch.bootstrap_hi.push_back(policy.value_hi_from(feats));
    batch.bootstrap_lo.push_back(policy.value_lo_from(feats, skill));
    batch.final_skill.push_back(skill);
    close_segment(batch, T, true, cfg.gamma);
    batch.episodes.push_back(stats);
  }
  return batch;
}

double segment_return(std::span<const double> rewards, double gamma) {
  if (rewards.empty()) throw ConfigError("segment_return: empty segment");
  double out = 0.0;
  double w = 1.0;
  for (double r : rewards) {
    out += w * r;
    w *= gamma;
  }
  return out;
}

namespace {

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
}

}  // namespace

double mix_high(std::span<const double> extrinsic, std::span<const double> intrinsic,
                double lambda) {
  check_lambda(lambda);
  if (extrinsic.size() != intrinsic.size()) throw ShapeError("mix_high: length mismatch");
  if (extrinsic.empty()) throw ConfigError("mix_high: empty segment");
  double sum = 0.0;
  for (std::size_t i = 0; i < extrinsic.size(); ++i)
    sum += (1.0 - lambda) * extrinsic[i] + lambda * intrinsic[i];
  return sum / static_cast<double>(extrinsic.size());
}

double mix_low(double extrinsic, double intrinsic, double lambda, bool symmetric) {
  check_lambda(lambda);
  if (symmetric) return (1.0 - lambda) * extrinsic + lambda * intrinsic;
  return extrinsic + lambda * intrinsic;
}

void apply_high_mixing(RolloutBatch& batch, double lambda) {
  std::vector<double> r, ri;
  for (HighSegment& seg : batch.high) {
    r.clear();
    ri.clear();
    for (int i = 0; i < seg.length(); ++i) {
      r.push_back(batch.low[seg.first_step + i].reward);
      ri.push_back(batch.low[seg.first_step + i].intrinsic);
    }
    seg.mixed_reward = mix_high(r, ri, lambda);
  }
}

double linear_schedule(double start, double end, std::int64_t step, std::int64_t total) {
  if (step < 0) throw ConfigError("schedule step must be non-negative");
  if (total <= 0) return step == 0 ? start : end;
  if (step >= total) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return start + (end - start) * frac;
}

double lambda_at(std::int64_t step, const LambdaSchedule& s) {
  return linear_schedule(s.start, s.end, step, s.total_steps);
}

// ---------------------------------------------------------------------------
// Trajectory log

namespace {

nlohmann::json chef_pair(const std::array<ChefState, 2>& chefs, const char* field) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& c : chefs) {
    if (std::string(field) == "pos")
      a.push_back({c.pos.x, c.pos.y});
    else if (std::string(field) == "facing")
      a.push_back(std::string(to_string(c.facing)));
    else
      a.push_back(std::string(to_string(c.held)));
  }
  return a;
}

}  // namespace

void write_log_header(std::ostream& out, const TrajectoryHeader& h) {
  nlohmann::json j;
  j["layout"] = h.layout;
  j["swap_start"] = h.swap_start;
  j["seed"] = h.seed;
  j["agent_index"] = h.agent_index;
  j["horizon"] = h.horizon;
  j["partner"] = h.partner;
  if (!h.condition.empty()) j["condition"] = h.condition;
  out << j.dump() << "\n";
}

void write_log_record(std::ostream& out, const TrajectoryRecord& r) {
  nlohmann::json j;
  j["tick"] = r.tick;
  j["pos"] = chef_pair(r.chefs, "pos");
  j["facing"] = chef_pair(r.chefs, "facing");
  j["held"] = chef_pair(r.chefs, "held");
  j["actions"] = {std::string(to_string(r.actions[0])), std::string(to_string(r.actions[1]))};
  j["skill"] = r.skill;
  j["terminate"] = r.terminate;
  j["team_reward"] = r.team_reward;
  j["rewards"] = {r.rewards[0], r.rewards[1]};
  out << j.dump() << "\n";
}

void write_log(const std::filesystem::path& path, const TrajectoryLog& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_log_header(out, log.header);
  for (const auto& r : log.records) write_log_record(out, r);
}

TrajectoryLog parse_log(std::istream& in) {
  TrajectoryLog log;
  std::string line;
  int line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (line_no == 1) {
        log.header.layout = j.at("layout").get<std::string>();
        log.header.swap_start = j.value("swap_start", false);
        log.header.seed = j.value("seed", std::uint64_t{0});
        log.header.agent_index = j.value("agent_index", 0);
        log.header.horizon = j.value("horizon", 0);
        log.header.partner = j.value("partner", std::string());
        log.header.condition = j.value("condition", std::string());
        continue;
      }
      if (!j.contains("tick")) continue;  // summary or other trailer records
      TrajectoryRecord r;
      r.tick = j.at("tick").get<int>();
      for (int c = 0; c < 2; ++c) {
        r.chefs[c].pos = {j.at("pos")[c][0].get<int>(), j.at("pos")[c][1].get<int>()};
        r.chefs[c].facing = orientation_from_string(j.at("facing")[c].get<std::string>());
        r.chefs[c].held = item_from_string(j.at("held")[c].get<std::string>());
        r.actions.actions[c] = action_from_string(j.at("actions")[c].get<std::string>());
        r.rewards[c] = j.at("rewards")[c].get<double>();
      }
      r.skill = j.value("skill", -1);
      r.terminate = j.value("terminate", false);
      r.team_reward = j.at("team_reward").get<double>();
      log.records.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed trajectory log: ") + e.what(), line_no, 1);
  }
  if (line_no == 0) throw ParseError("empty trajectory log", 1, 1);
  return log;
}

TrajectoryLog read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory log " + path.string());
  return parse_log(in);
}

ReplayResult replay_log(const Layout& base_layout, const TrajectoryLog& log) {
  const Layout layout = with_horizon(base_layout, log.header.horizon);
  const RewardConfig rewards = RewardConfig::for_layout(layout);
  ReplayResult out;
  WorldState s = reset(layout, log.header.seed, log.header.swap_start);
  out.states.push_back(s);
  for (const auto& r : log.records) {
    if (r.tick != s.tick || r.chefs[0] != s.chefs[0] || r.chefs[1] != s.chefs[1])
      out.consistent = false;
    const StepResult res = step(layout, s, r.actions, rewards);
    if (res.team_reward != r.team_reward) out.consistent = false;
    out.team_return += res.team_reward;
    s = res.state;
    out.states.push_back(s);
  }
  return out;
}

TrajectoryLog play_episode(const Layout& base_layout, const RewardConfig& rewards,
                           Controller& agent, Controller& partner, bool swap_start,
                           std::uint64_t seed, int agent_index, int horizon) {
  const Layout layout = with_horizon(base_layout, horizon);
  TrajectoryLog log;
  log.header.layout = layout.name;
  log.header.swap_start = swap_start;
  log.header.seed = seed;
  log.header.agent_index = agent_index;
  log.header.horizon = layout.horizon;
  Rng agent_rng(mix_seed(seed, 1));
  Rng partner_rng(mix_seed(seed, 2));
  agent.reset();
  partner.reset();
  WorldState s = reset(layout, seed, swap_start);
  while (s.tick < layout.horizon) {
    TrajectoryRecord r;
    r.tick = s.tick;
    r.chefs = s.chefs;
    const Action a = agent.act(layout, s, agent_index, agent_rng);
    const Action b = partner.act(layout, s, 1 - agent_index, partner_rng);
    r.actions.actions[agent_index] = a;
    r.actions.actions[1 - agent_index] = b;
    r.skill = agent.current_skill();
    r.terminate = agent.terminated_before_last_act();
    const StepResult res = step(layout, s, r.actions, rewards);
    r.team_reward = res.team_reward;
    for (int c = 0; c < 2; ++c) r.rewards[c] = res.team_reward + res.shaped[c];
    log.records.push_back(r);
    s = res.state;
  }
  return log;
}

}  // namespace pasd
