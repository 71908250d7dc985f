#include "pasd/play.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pasd/checkpoint.hpp"
#include "pasd/flat_policy.hpp"
#include "pasd/hier_policy.hpp"

namespace pasd {

namespace fs = std::filesystem;

std::vector<std::string> CheckpointCatalog::list() const {
  std::vector<std::string> out;
  if (!root_.empty() && fs::is_directory(root_)) {
    for (const auto& e : fs::recursive_directory_iterator(root_))
      if (e.is_regular_file() && e.path().extension() == ".ckpt")
        out.push_back(fs::relative(e.path(), root_).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::unique_ptr<Controller> CheckpointCatalog::load(const std::string& ref,
                                                    const Layout& layout) const {
  if (ref.rfind("scripted:", 0) == 0)
    return scripted_partner(archetype_from_string(ref.substr(9)), layout);
  const fs::path rel(ref);
  if (ref.empty() || rel.is_absolute() ||
      std::any_of(rel.begin(), rel.end(), [](const fs::path& p) { return p == ".."; }))
    throw ConfigError("unknown checkpoint '" + ref + "'");
  const fs::path path = root_ / rel;
  if (!fs::is_regular_file(path)) throw ConfigError("unknown checkpoint '" + ref + "'");
  const Checkpoint ck = load_checkpoint(path);
  const std::string kind = ck.metadata.value("kind", std::string());
  std::unique_ptr<Controller> c;
  int obs = 0;
  if (kind == "flat_policy") {
    auto p = std::make_shared<const FlatPolicy>(FlatPolicy::from_checkpoint(ck));
    obs = p->obs_size();
    c = std::make_unique<FlatController>(p);
  } else if (kind == "hier_policy") {
    auto p = std::make_shared<const HierPolicy>(HierPolicy::from_checkpoint(ck));
    obs = p->config().obs_size;
    c = std::make_unique<HierController>(p);
  } else {
    throw ConfigError("checkpoint '" + ref + "' holds no policy");
  }
  if (obs != observation_size(layout))
    throw ConfigError("checkpoint '" + ref + "' was trained on a different layout");
  return c;
}

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kLobby: return "lobby";
    case SessionStatus::kRunning: return "running";
    case SessionStatus::kFinished: return "finished";
  }
  return "?";
}

int session_ticks(double tick_rate, double duration_seconds) {
  if (!(tick_rate > 0.0) || !(duration_seconds > 0.0))
    throw ConfigError("tick rate and session length must be positive");
  return std::max(1, static_cast<int>(std::lround(tick_rate * duration_seconds)));
}

PlaySession::PlaySession(std::string id, const SessionOptions& options,
                         const CheckpointCatalog& catalog)
    : id_(std::move(id)), options_(options), agent_rng_(mix_seed(options.seed, 1)) {
  if (options_.human_index != 0 && options_.human_index != 1)
    throw ConfigError("human chef index must be 0 or 1");
  const auto& names = bundled_layout_names();
  if (std::find(names.begin(), names.end(), options_.layout) == names.end())
    throw ConfigError("unknown layout '" + options_.layout + "'");
  layout_ = bundled_layout(options_.layout);
  layout_.horizon = options_.horizon > 0
                        ? options_.horizon
                        : session_ticks(options_.tick_rate, options_.duration_seconds);
  rewards_ = RewardConfig::for_layout(layout_);
  agent_ = catalog.load(options_.checkpoint, layout_);
  agent_->reset();
  state_ = reset(layout_, options_.seed, false);
}

void PlaySession::start() {
  if (status_ == SessionStatus::kLobby) status_ = SessionStatus::kRunning;
}

TickOutput PlaySession::tick() {
  if (status_ == SessionStatus::kFinished) throw Error("session " + id_ + " is finished");
  if (status_ == SessionStatus::kLobby) throw Error("session " + id_ + " has not started");
  const int pending = pending_.exchange(-1, std::memory_order_acq_rel);
  const Action human = pending < 0 ? Action::kStay : static_cast<Action>(pending);
  TrajectoryRecord r;
  r.tick = state_.tick;
  r.chefs = state_.chefs;
  const int ai = agent_index();
  r.actions.actions[ai] = agent_->act(layout_, state_, ai, agent_rng_);
  r.actions.actions[options_.human_index] = human;
  r.skill = agent_->current_skill();
  r.terminate = agent_->terminated_before_last_act();
  const StepResult res = step(layout_, state_, r.actions, rewards_);
  r.team_reward = res.team_reward;
  for (int c = 0; c < 2; ++c) r.rewards[c] = res.team_reward + res.shaped[c];
  records_.push_back(r);
  state_ = res.state;
  score_ += res.team_reward;
  for (const Event& e : res.events)
    if (e.kind == EventKind::kDelivery) ++deliveries_;
  TickOutput out;
  out.events = res.events;
  out.team_reward = res.team_reward;
  if (state_.tick >= layout_.horizon) status_ = SessionStatus::kFinished;
  out.finished = status_ == SessionStatus::kFinished;
  return out;
}

void PlaySession::finish() { status_ = SessionStatus::kFinished; }

TrajectoryLog PlaySession::log() const {
  TrajectoryLog log;
  log.header.layout = layout_.name;
  log.header.swap_start = false;
  log.header.seed = options_.seed;
  log.header.agent_index = agent_index();
  log.header.horizon = layout_.horizon;
  log.header.partner = "human";
  log.header.condition = options_.checkpoint;
  log.records = records_;
  return log;
}

nlohmann::json PlaySession::summary() const {
  return {{"session", id_},
          {"condition", options_.checkpoint},
          {"layout", layout_.name},
          {"total_reward", score_},
          {"deliveries", deliveries_},
          {"ticks", static_cast<int>(records_.size())},
          {"human_index", options_.human_index}};
}

fs::path PlaySession::record(const fs::path& dir) const {
  fs::create_directories(dir);
  const fs::path path = dir / (id_ + ".jsonl");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const TrajectoryLog l = log();
  write_log_header(out, l.header);
  for (const auto& r : l.records) write_log_record(out, r);
  out << nlohmann::json{{"summary", summary()}}.dump() << "\n";
  if (!out) throw IoError("short write on " + path.string());
  std::ofstream all(dir / "summary.jsonl", std::ios::app);
  if (!all) throw IoError("cannot append to " + (dir / "summary.jsonl").string());
  all << summary().dump() << "\n";
  return path;
}

nlohmann::json state_to_json(const WorldState& s) {
  nlohmann::json j;
  j["tick"] = s.tick;
  j["chefs"] = nlohmann::json::array();
  for (const auto& c : s.chefs)
    j["chefs"].push_back({{"pos", {c.pos.x, c.pos.y}},
                          {"facing", std::string(to_string(c.facing))},
                          {"held", std::string(to_string(c.held))}});
  j["pots"] = nlohmann::json::array();
  for (const auto& p : s.pots)
    j["pots"].push_back({{"onions", p.onions}, {"remaining", p.remaining}, {"done", p.done}});
  j["counters"] = nlohmann::json::array();
  for (Item i : s.counters) j["counters"].push_back(std::string(to_string(i)));
  return j;
}

PlayHub::PlayHub(HubOptions options)
    : options_(std::move(options)), catalog_(options_.checkpoint_root) {}

namespace {

char cell_char(Cell c) {
  switch (c) {
    case Cell::kFloor: return ' ';
    case Cell::kWall: return 'X';
    case Cell::kOnionDispenser: return 'O';
    case Cell::kDishDispenser: return 'D';
    case Cell::kPot: return 'P';
    case Cell::kServing: return 'S';
    case Cell::kCounter: return 'C';
  }
  return '?';
}

nlohmann::json frame_base(const std::string& type, ClientChannel& ch) {
  return {{"type", type},
          {"session", ch.session ? ch.session->id() : std::string()},
          {"seq", ch.next_server_seq++}};
}

}  // namespace

std::string PlayHub::state_frame(ClientChannel& ch, const std::vector<Event>& events) {
  nlohmann::json j = frame_base("state", ch);
  const PlaySession& s = *ch.session;
  j["tick"] = s.state().tick;
  j["score"] = s.score();
  j["status"] = to_string(s.status());
  j["human_index"] = s.options().human_index;
  j["horizon"] = s.layout().horizon;
  j["state"] = state_to_json(s.state());
  j["events"] = nlohmann::json::array();
  for (const Event& e : events)
    j["events"].push_back({{"kind", std::string(to_string(e.kind))}, {"chef", e.chef}});
  return j.dump();
}

std::string PlayHub::episode_end_frame(ClientChannel& ch) {
  nlohmann::json j = frame_base("episode_end", ch);
  j["total_reward"] = ch.session->score();
  j["ticks"] = ch.session->state().tick;
  return j.dump();
}

std::string PlayHub::error_frame(ClientChannel& ch, const std::string& text) {
  nlohmann::json j = frame_base("error", ch);
  j["text"] = text;
  return j.dump();
}

void PlayHub::record(ClientChannel& ch) {
  if (ch.recorded || !ch.session) return;
  ch.recorded = true;
  if (!options_.log_dir.empty()) ch.session->record(options_.log_dir);
}

FrameReply PlayHub::handle(ClientChannel& ch, const std::string& text) {
  FrameReply reply;
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    reply.frames.push_back(error_frame(ch, "malformed frame"));
    return reply;
  }
  const std::string type = j["type"].get<std::string>();
  if (!j.contains("seq") || !j["seq"].is_number_integer()) {
    reply.frames.push_back(error_frame(ch, "frame has no integer seq"));
    return reply;
  }
  const std::int64_t seq = j["seq"].get<std::int64_t>();
  if (seq <= ch.last_client_seq) {
    reply.frames.push_back(error_frame(ch, "seq " + std::to_string(seq) + " is not increasing"));
    return reply;
  }
  ch.last_client_seq = seq;
  const std::string sid = j.value("session", std::string());

  if (type == "join") {
    if (ch.session) {
      reply.frames.push_back(error_frame(ch, "connection already joined a session"));
      return reply;
    }
    try {
      SessionOptions o;
      o.layout = j.value("layout", std::string());
      o.checkpoint = j.value("checkpoint", std::string());
      o.human_index = j.value("human_index", 0);
      o.tick_rate = j.value("tick_rate", options_.tick_rate);
      o.duration_seconds = j.value("duration", options_.duration_seconds);
      o.horizon = j.value("horizon", 0);
      const std::size_t n = sessions_created_;
      o.seed = mix_seed(options_.seed, n);
      ch.session = std::make_shared<PlaySession>("s" + std::to_string(n + 1), o, catalog_);
      ++sessions_created_;
    } catch (const nlohmann::json::exception& e) {
      reply.frames.push_back(error_frame(ch, std::string("bad join frame: ") + e.what()));
      return reply;
    } catch (const Error& e) {
      reply.frames.push_back(error_frame(ch, e.what()));
      return reply;
    }
    reply.frames.push_back(state_frame(ch, {}));
    return reply;
  }
  if (!ch.session) {
    reply.frames.push_back(error_frame(ch, "no session; send join first"));
    return reply;
  }
  if (sid != ch.session->id()) {
    reply.frames.push_back(error_frame(ch, "frame names session '" + sid + "'"));
    return reply;
  }
  if (type == "input") {
    try {
      ch.session->submit(action_from_string(j.value("action", std::string())));
    } catch (const Error& e) {
      reply.frames.push_back(error_frame(ch, e.what()));
    }
  } else if (type == "start") {
    if (ch.session->status() == SessionStatus::kLobby) {
      ch.session->start();
      reply.start_ticking = true;
      reply.frames.push_back(state_frame(ch, {}));
    } else {
      reply.frames.push_back(error_frame(ch, "session is " + to_string(ch.session->status())));
    }
  } else if (type == "quit") {
    const bool was_done = ch.session->status() == SessionStatus::kFinished;
    ch.session->finish();
    if (!was_done) reply.frames.push_back(episode_end_frame(ch));
    record(ch);
    reply.close = true;
  } else {
    reply.frames.push_back(error_frame(ch, "unknown frame type '" + type + "'"));
  }
  return reply;
}

std::vector<std::string> PlayHub::tick(ClientChannel& ch) {
  std::vector<std::string> out;
  if (!ch.session || ch.session->status() != SessionStatus::kRunning) return out;
  const TickOutput t = ch.session->tick();
  out.push_back(state_frame(ch, t.events));
  if (t.finished) {
    out.push_back(episode_end_frame(ch));
    record(ch);
  }
  return out;
}

void PlayHub::close(ClientChannel& ch) {
  if (!ch.session) return;
  ch.session->finish();
  if (!ch.session->log().records.empty()) record(ch);
  ch.recorded = true;
}

nlohmann::json PlayHub::layouts() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& n : bundled_layout_names()) {
    const Layout l = bundled_layout(n);
    nlohmann::json rows = nlohmann::json::array();
    for (int y = 0; y < l.height; ++y) {
      std::string row;
      for (int x = 0; x < l.width; ++x) row += cell_char(l.at({x, y}));
      rows.push_back(row);
    }
    j.push_back({{"name", n},
                 {"width", l.width},
                 {"height", l.height},
                 {"cook_time", l.cook_time},
                 {"grid", rows},
                 {"spawn", {{l.spawn_points[0].x, l.spawn_points[0].y},
                            {l.spawn_points[1].x, l.spawn_points[1].y}}}});
  }
  return {{"layouts", j}};
}

nlohmann::json PlayHub::checkpoints() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& n : catalog_.list()) j.push_back(n);
  return {{"checkpoints", j}};
}

}  // namespace pasd
