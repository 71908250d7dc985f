#ifndef PASD_PLAY_HPP_
#define PASD_PLAY_HPP_

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasd/controllers.hpp"
#include "pasd/kitchen.hpp"
#include "pasd/rollout.hpp"

namespace pasd {

// Agent references a human can pick: "scripted:NAME" or a .ckpt path
// relative to the checkpoint root.
class CheckpointCatalog {
 public:
  explicit CheckpointCatalog(std::filesystem::path root = {}) : root_(std::move(root)) {}
  const std::filesystem::path& root() const { return root_; }
  std::vector<std::string> list() const;
  // Throws ConfigError for unknown or escaping references.
  std::unique_ptr<Controller> load(const std::string& ref, const Layout& layout) const;

 private:
  std::filesystem::path root_;
};

enum class SessionStatus { kLobby, kRunning, kFinished };
std::string to_string(SessionStatus s);

struct SessionOptions {
  std::string layout = "cramped_room";
  std::string checkpoint;
  int human_index = 0;
  double tick_rate = 6.0;
  double duration_seconds = 80.0;
  int horizon = 0;  // overrides the duration when positive
  std::uint64_t seed = 0;
};

// Ticks in a session of the given length.
int session_ticks(double tick_rate, double duration_seconds);

struct TickOutput {
  std::vector<Event> events;
  double team_reward = 0.0;
  bool finished = false;
};

class PlaySession {
 public:
  PlaySession(std::string id, const SessionOptions& options, const CheckpointCatalog& catalog);

  const std::string& id() const { return id_; }
  const SessionOptions& options() const { return options_; }
  const Layout& layout() const { return layout_; }
  const WorldState& state() const { return state_; }
  SessionStatus status() const { return status_; }
  double score() const { return score_; }
  int deliveries() const { return deliveries_; }
  int agent_index() const { return 1 - options_.human_index; }

  void start();
  // Mailbox for the human action; safe from any thread, the latest wins.
  void submit(Action a) { pending_.store(static_cast<int>(a), std::memory_order_release); }
  // Consumes the pending action (stay when none), queries the agent and
  // steps once. Throws Error on a finished or unstarted session.
  TickOutput tick();
  void finish();

  TrajectoryLog log() const;
  nlohmann::json summary() const;
  // Writes <dir>/<id>.jsonl (header, tick lines, summary line) and appends
  // the summary to <dir>/summary.jsonl. Returns the session log path.
  std::filesystem::path record(const std::filesystem::path& dir) const;

 private:
  std::string id_;
  SessionOptions options_;
  Layout layout_;
  RewardConfig rewards_;
  std::unique_ptr<Controller> agent_;
  Rng agent_rng_;
  WorldState state_;
  SessionStatus status_ = SessionStatus::kLobby;
  std::atomic<int> pending_{-1};
  double score_ = 0.0;
  int deliveries_ = 0;
  std::vector<TrajectoryRecord> records_;
};

nlohmann::json state_to_json(const WorldState& s);

// Per-connection protocol state. Outgoing sequence numbers count up from 1;
// incoming ones must increase strictly.
struct ClientChannel {
  std::shared_ptr<PlaySession> session;
  std::int64_t last_client_seq = -1;
  std::int64_t next_server_seq = 1;
  bool recorded = false;
};

struct FrameReply {
  std::vector<std::string> frames;
  bool start_ticking = false;
  bool close = false;
};

struct HubOptions {
  std::filesystem::path checkpoint_root;
  std::filesystem::path log_dir;  // session logs; none written when empty
  double tick_rate = 6.0;
  double duration_seconds = 80.0;
  std::uint64_t seed = 1;
};

// Transport-free protocol handling. Frames are JSON objects with "type",
// "session" and "seq"; see docs/wire_protocol.md.
class PlayHub {
 public:
  explicit PlayHub(HubOptions options);

  FrameReply handle(ClientChannel& channel, const std::string& frame);
  // One tick of the channel's session; emits state and, at the end, the
  // episode_end frame, after which the session log is written.
  std::vector<std::string> tick(ClientChannel& channel);
  // Ends and records the channel's session if it has not been recorded.
  void close(ClientChannel& channel);

  nlohmann::json layouts() const;
  nlohmann::json checkpoints() const;
  const HubOptions& options() const { return options_; }
  std::size_t session_count() const { return sessions_created_; }

 private:
  std::string state_frame(ClientChannel& ch, const std::vector<Event>& events);
  std::string episode_end_frame(ClientChannel& ch);
  std::string error_frame(ClientChannel& ch, const std::string& text);
  void record(ClientChannel& ch);

  HubOptions options_;
  CheckpointCatalog catalog_;
  std::size_t sessions_created_ = 0;
};

}  // namespace pasd

#endif  // PASD_PLAY_HPP_
