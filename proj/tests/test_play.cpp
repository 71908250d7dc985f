#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pasd/hier_policy.hpp"
#include "pasd/play.hpp"

namespace pasd {
namespace {

namespace fs = std::filesystem;

SessionOptions opts(int horizon = 0) {
  SessionOptions o;
  o.layout = "cramped_room";
  o.checkpoint = "scripted:onion_specialist";
  o.horizon = horizon;
  o.seed = 3;
  return o;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TEST(PlaySession, LobbyThenRunning) {
  const CheckpointCatalog cat;
  PlaySession s("a", opts(), cat);
  EXPECT_EQ(s.status(), SessionStatus::kLobby);
  EXPECT_THROW(s.tick(), Error);
  s.start();
  EXPECT_EQ(s.status(), SessionStatus::kRunning);
  EXPECT_EQ(s.agent_index(), 1);
  s.tick();
  EXPECT_EQ(s.state().tick, 1);
}

TEST(PlaySession, SixTicksPerSecondForEightySeconds) {
  EXPECT_EQ(session_ticks(6.0, 80.0), 480);
  const CheckpointCatalog cat;
  EXPECT_EQ(PlaySession("a", opts(), cat).layout().horizon, 480);
  EXPECT_THROW(session_ticks(0.0, 80.0), ConfigError);
}

TEST(PlaySession, UnknownLayoutOrCheckpointIsRejected) {
  TempDir d("pasd_test_play_cat");
  const CheckpointCatalog cat(d.path);
  SessionOptions o = opts();
  o.checkpoint = "missing.ckpt";
  EXPECT_THROW(PlaySession("a", o, cat), ConfigError);
  o.checkpoint = "../etc/passwd";
  EXPECT_THROW(PlaySession("a", o, cat), ConfigError);
  o.checkpoint = "/etc/passwd";
  EXPECT_THROW(PlaySession("a", o, cat), ConfigError);
  o = opts();
  o.layout = "moon_base";
  EXPECT_THROW(PlaySession("a", o, cat), ConfigError);
  o = opts();
  o.human_index = 2;
  EXPECT_THROW(PlaySession("a", o, cat), ConfigError);
}

TEST(PlaySession, MissingInputMeansStayAndLatestInputWins) {
  const CheckpointCatalog cat;
  PlaySession s("a", opts(), cat);
  s.start();
  s.tick();
  EXPECT_EQ(s.log().records[0].actions[0], Action::kStay);
  s.submit(Action::kUp);
  s.submit(Action::kInteract);
  s.submit(Action::kRight);
  s.tick();
  EXPECT_EQ(s.log().records[1].actions[0], Action::kRight);
  s.tick();
  EXPECT_EQ(s.log().records[2].actions[0], Action::kStay);
}

TEST(PlaySession, HorizonEndsTheSession) {
  const CheckpointCatalog cat;
  PlaySession s("a", opts(3), cat);
  s.start();
  EXPECT_FALSE(s.tick().finished);
  EXPECT_FALSE(s.tick().finished);
  EXPECT_TRUE(s.tick().finished);
  EXPECT_EQ(s.status(), SessionStatus::kFinished);
  EXPECT_THROW(s.tick(), Error);
}

TEST(PlaySession, SessionsAreIsolated) {
  const CheckpointCatalog cat;
  PlaySession a("a", opts(), cat), b("b", opts(), cat);
  a.start();
  b.start();
  for (int t = 0; t < 20; ++t) {
    a.submit(t % 2 ? Action::kLeft : Action::kDown);
    a.tick();
    b.tick();
  }
  EXPECT_NE(a.state(), b.state());
  PlaySession c("c", opts(), cat);
  c.start();
  for (int t = 0; t < 20; ++t) c.tick();
  EXPECT_EQ(b.state(), c.state());
}

// A scripted dish specialist stands in for the human.
TEST(PlaySession, RecordedLogReplaysToTheSameScore) {
  TempDir d("pasd_test_play_log");
  const CheckpointCatalog cat;
  PlaySession s("s7", opts(300), cat);
  s.start();
  auto human = scripted_partner(Archetype::kDishSpecialist, s.layout());
  Rng rng(5);
  while (s.status() == SessionStatus::kRunning) {
    s.submit(human->act(s.layout(), s.state(), 0, rng));
    s.tick();
  }
  EXPECT_GT(s.deliveries(), 0);
  EXPECT_EQ(s.score(), 20.0 * s.deliveries());

  const fs::path path = s.record(d.path);
  std::ifstream in(path);
  std::string line;
  int ticks = 0, summaries = 0, lines = 0;
  double logged = 0.0;
  while (std::getline(in, line)) {
    ++lines;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("tick")) {
      ++ticks;
      logged += j["team_reward"].get<double>();
    }
    if (j.contains("summary")) {
      ++summaries;
      EXPECT_EQ(j["summary"]["total_reward"].get<double>(), s.score());
      EXPECT_EQ(j["summary"]["condition"], "scripted:onion_specialist");
    }
  }
  EXPECT_EQ(ticks, 300);
  EXPECT_EQ(summaries, 1);
  EXPECT_EQ(lines, 302);
  EXPECT_EQ(logged, s.score());

  const TrajectoryLog log = read_log(path);
  const ReplayResult r = replay_log(bundled_layout("cramped_room"), log);
  EXPECT_TRUE(r.consistent);
  EXPECT_EQ(r.team_return, s.score());
  EXPECT_EQ(r.states.back(), s.state());
  std::ifstream all(d.path / "summary.jsonl");
  std::getline(all, line);
  EXPECT_EQ(nlohmann::json::parse(line)["session"], "s7");
}

TEST(PlaySession, TenTickSessionLogsTenLinesAndASummary) {
  TempDir d("pasd_test_play_ten");
  const CheckpointCatalog cat;
  PlaySession s("t", opts(10), cat);
  s.start();
  while (s.status() == SessionStatus::kRunning) s.tick();
  std::ifstream in(s.record(d.path));
  std::string line;
  int ticks = 0, summaries = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ticks += j.contains("tick");
    summaries += j.contains("summary");
  }
  EXPECT_EQ(ticks, 10);
  EXPECT_EQ(summaries, 1);
}

TEST(PlaySession, LearnedAgentFromCatalog) {
  TempDir d("pasd_test_play_hier");
  const Layout l = bundled_layout("cramped_room");
  HierPolicyConfig cfg;
  cfg.obs_size = observation_size(l);
  cfg.skill_count = 3;
  cfg.backbone_hidden = {8};
  cfg.head_hidden = 8;
  fs::create_directories(d.path / "run");
  save_checkpoint(d.path / "run" / "policy.ckpt", HierPolicy(cfg, 1).to_checkpoint());
  save_checkpoint(d.path / "small.ckpt",
                  HierPolicy([&] {
                    HierPolicyConfig c = cfg;
                    c.obs_size = observation_size(bundled_layout("cramped_small"));
                    return c;
                  }(), 1).to_checkpoint());
  const CheckpointCatalog cat(d.path);
  EXPECT_EQ(cat.list(), (std::vector<std::string>{"run/policy.ckpt", "small.ckpt"}));
  SessionOptions o = opts(5);
  o.checkpoint = "run/policy.ckpt";
  PlaySession s("h", o, cat);
  s.start();
  s.tick();
  EXPECT_GE(s.log().records[0].skill, 0);
  o.checkpoint = "small.ckpt";
  EXPECT_THROW(PlaySession("x", o, cat), ConfigError);
}

nlohmann::json parse(const std::string& f) { return nlohmann::json::parse(f); }

TEST(PlayHub, JoinStartTickQuitTranscript) {
  TempDir d("pasd_test_hub");
  HubOptions ho;
  ho.log_dir = d.path;
  PlayHub hub(ho);
  ClientChannel ch;
  FrameReply r = hub.handle(
      ch, R"({"type":"join","session":"","seq":1,"layout":"cramped_small","checkpoint":"scripted:onion_specialist","horizon":4})");
  ASSERT_EQ(r.frames.size(), 1u);
  auto j = parse(r.frames[0]);
  EXPECT_EQ(j["type"], "state");
  EXPECT_EQ(j["session"], "s1");
  EXPECT_EQ(j["seq"], 1);
  EXPECT_EQ(j["status"], "lobby");
  EXPECT_EQ(j["state"]["chefs"].size(), 2u);
  EXPECT_TRUE(hub.tick(ch).empty());  // nothing happens in the lobby

  r = hub.handle(ch, R"({"type":"input","session":"s1","seq":2,"action":"down"})");
  EXPECT_TRUE(r.frames.empty());
  r = hub.handle(ch, R"({"type":"start","session":"s1","seq":3})");
  EXPECT_TRUE(r.start_ticking);
  EXPECT_EQ(parse(r.frames[0])["status"], "running");

  std::int64_t last = 2;
  std::vector<std::string> frames;
  while (ch.session->status() == SessionStatus::kRunning)
    for (auto& f : hub.tick(ch)) frames.push_back(f);
  ASSERT_EQ(frames.size(), 5u);
  for (const auto& f : frames) {
    const auto k = parse(f);
    EXPECT_EQ(k["seq"].get<std::int64_t>(), last + 1);
    last = k["seq"].get<std::int64_t>();
  }
  EXPECT_EQ(parse(frames[0])["tick"], 1);
  EXPECT_EQ(ch.session->log().records[0].actions[0], Action::kDown);
  const auto end = parse(frames.back());
  EXPECT_EQ(end["type"], "episode_end");
  EXPECT_EQ(end["total_reward"], 0.0);
  EXPECT_TRUE(fs::exists(d.path / "s1.jsonl"));

  // After the end the session only answers with errors.
  r = hub.handle(ch, R"({"type":"start","session":"s1","seq":9})");
  EXPECT_EQ(parse(r.frames[0])["type"], "error");
  r = hub.handle(ch, R"({"type":"quit","session":"s1","seq":10})");
  EXPECT_TRUE(r.close);
  EXPECT_TRUE(r.frames.empty());
}

TEST(PlayHub, ProtocolErrors) {
  PlayHub hub({});
  ClientChannel ch;
  auto err = [&](const std::string& frame) {
    const FrameReply r = hub.handle(ch, frame);
    EXPECT_EQ(r.frames.size(), 1u) << frame;
    return r.frames.empty() ? nlohmann::json() : parse(r.frames[0]);
  };
  EXPECT_EQ(err("not json")["type"], "error");
  EXPECT_EQ(err(R"({"type":"start","seq":1})")["text"], "no session; send join first");
  const auto bad = err(
      R"({"type":"join","session":"","seq":2,"layout":"cramped_room","checkpoint":"nope.ckpt"})");
  EXPECT_EQ(bad["type"], "error");
  EXPECT_EQ(bad["session"], "");
  EXPECT_NE(bad["text"].get<std::string>().find("unknown checkpoint"), std::string::npos);
  EXPECT_EQ(hub.session_count(), 0u);
  EXPECT_EQ(err(R"({"type":"join","seq":3,"layout":"cramped_room","checkpoint":"scripted:stationary"})")["type"],
            "state");
  EXPECT_EQ(err(R"({"type":"input","session":"s1","seq":3,"action":"up"})")["type"], "error");
  EXPECT_EQ(err(R"({"type":"input","session":"s9","seq":4,"action":"up"})")["type"], "error");
  EXPECT_EQ(err(R"({"type":"input","session":"s1","seq":5,"action":"jump"})")["type"], "error");
  EXPECT_EQ(err(R"({"type":"dance","session":"s1","seq":6})")["type"], "error");
  EXPECT_EQ(err(R"({"type":"join","seq":7,"layout":"cramped_room","checkpoint":"scripted:stationary"})")["type"],
            "error");
  const FrameReply q = hub.handle(ch, R"({"type":"quit","session":"s1","seq":8})");
  EXPECT_TRUE(q.close);
  EXPECT_EQ(parse(q.frames[0])["type"], "episode_end");
}

TEST(PlayHub, Listings) {
  TempDir d("pasd_test_hub_list");
  std::ofstream(d.path / "x.ckpt") << "x";
  HubOptions ho;
  ho.checkpoint_root = d.path;
  const PlayHub hub(ho);
  EXPECT_EQ(hub.layouts()["layouts"].size(), 6u);
  EXPECT_EQ(hub.layouts()["layouts"][0]["grid"].size(),
            static_cast<std::size_t>(hub.layouts()["layouts"][0]["height"].get<int>()));
  EXPECT_EQ(hub.checkpoints()["checkpoints"], nlohmann::json::array({"x.ckpt"}));
}

}  // namespace
}  // namespace pasd
