#ifndef PASD_ROLLOUT_HPP_
#define PASD_ROLLOUT_HPP_

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pasd/controllers.hpp"
#include "pasd/hier_policy.hpp"
#include "pasd/kitchen.hpp"
#include "pasd/population.hpp"

namespace pasd {

struct LowStep {
  int rollout = 0;
  int t = 0;
  int skill = 0;
  int action = 0;
  int partner_action = 0;
  double reward = 0.0;     // agent-side extrinsic: team reward plus own shaping
  double intrinsic = 0.0;  // filled after scoring
  double log_prob = 0.0;
  double value = 0.0;      // V_lo(s_t, z_t)
  // Termination decision taken at this step for the previous step's skill.
  bool has_termination = false;
  int terminate = 0;
  int terminated_skill = -1;
  double termination_log_prob = 0.0;
  int segment = 0;         // index into RolloutBatch::high
  bool segment_start = false;
};

struct HighSegment {
  int rollout = 0;
  int begin = 0;  // first timestep, inclusive
  int end = 0;    // exclusive
  int first_step = 0;  // index of begin in RolloutBatch::low / obs columns
  int skill = 0;
  double log_prob = 0.0;
  double value = 0.0;  // V_hi(s_begin)
  double extrinsic_return = 0.0;
  double mixed_reward = 0.0;
  bool truncated = false;
  int length() const { return end - begin; }
};

struct EpisodeStats {
  int partner = 0;
  std::string partner_id;
  bool swap_start = false;
  double team_return = 0.0;
  double agent_return = 0.0;
  int deliveries = 0;
};

// Buffers of one collection phase. Low steps are stored rollout-major; obs
// column i belongs to low[i].
struct RolloutBatch {
  int rollouts = 0;
  int horizon = 0;
  Eigen::MatrixXd obs;
  std::vector<LowStep> low;
  std::vector<HighSegment> high;
  std::vector<int> partner;              // per rollout, pool index
  std::vector<std::string> partner_id;   // per rollout
  Eigen::MatrixXd final_obs;             // per rollout, s_T
  std::vector<int> final_skill;          // per rollout, z active at T
  std::vector<double> bootstrap_hi;      // V_hi(s_T)
  std::vector<double> bootstrap_lo;      // V_lo(s_T, z_last)
  std::vector<EpisodeStats> episodes;

  int step_index(int rollout, int t) const { return rollout * horizon + t; }
};

struct RolloutConfig {
  int rollouts = 30;
  int horizon = 400;
  double gamma = 0.99;
  // Forces a skill switch after this many steps; 0 means unlimited.
  int max_segment_length = 0;
  bool random_start = true;
};

// Collects `cfg.rollouts` episodes with the agent as chef 0 and a partner
// drawn uniformly per rollout. Intrinsic rewards are left at 0.
RolloutBatch run_rollouts(const HierPolicy& policy, const PartnerPool& partners,
                          const Layout& layout, const RewardConfig& rewards,
                          const RolloutConfig& cfg, std::uint64_t seed);

// Discounted extrinsic sum over steps [begin, end) of low.
double segment_return(std::span<const double> rewards, double gamma);

double mix_high(std::span<const double> extrinsic, std::span<const double> intrinsic,
                double lambda);
double mix_low(double extrinsic, double intrinsic, double lambda, bool symmetric = false);

// Fills HighSegment::mixed_reward for every segment of the batch.
void apply_high_mixing(RolloutBatch& batch, double lambda);

struct LambdaSchedule {
  double start = 1.0;
  double end = 0.05;
  std::int64_t total_steps = 1;
};
double lambda_at(std::int64_t step, const LambdaSchedule& schedule);

// Linear interpolation from `start` at step 0 to `end` at `total`, clamped.
double linear_schedule(double start, double end, std::int64_t step, std::int64_t total);

// Line-delimited trajectory log. The first line is a header, one record per
// tick follows; replay_log re-simulates a log through the environment.
struct TrajectoryHeader {
  std::string layout;
  bool swap_start = false;
  std::uint64_t seed = 0;
  int agent_index = 0;
  int horizon = 0;
  std::string partner;
  std::string condition;
};

struct TrajectoryRecord {
  int tick = 0;
  std::array<ChefState, 2> chefs;  // state before the joint action
  JointAction actions;
  int skill = -1;
  bool terminate = false;
  double team_reward = 0.0;
  std::array<double, 2> rewards{0.0, 0.0};
};

struct TrajectoryLog {
  TrajectoryHeader header;
  std::vector<TrajectoryRecord> records;
};

void write_log_header(std::ostream& out, const TrajectoryHeader& h);
void write_log_record(std::ostream& out, const TrajectoryRecord& r);
void write_log(const std::filesystem::path& path, const TrajectoryLog& log);
TrajectoryLog read_log(const std::filesystem::path& path);
TrajectoryLog parse_log(std::istream& in);

struct ReplayResult {
  std::vector<WorldState> states;  // states[i] precedes records[i]; back() is final
  double team_return = 0.0;
  bool consistent = true;          // recorded positions/rewards match the simulation
};
ReplayResult replay_log(const Layout& layout, const TrajectoryLog& log);

// Plays one episode between two controllers and returns its log.
TrajectoryLog play_episode(const Layout& layout, const RewardConfig& rewards, Controller& agent,
                           Controller& partner, bool swap_start, std::uint64_t seed,
                           int agent_index = 0, int horizon = 0);

}  // namespace pasd

#endif  // PASD_ROLLOUT_HPP_
