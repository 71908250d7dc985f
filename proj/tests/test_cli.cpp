#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pasd/common.hpp"

namespace {

namespace fs = std::filesystem;

// ctest runs each case in its own process, possibly in parallel.
const fs::path kRoot = fs::temp_directory_path() / ("pasd_test_cli_" + std::to_string(getpid()));

int pasd(const std::string& args) {
  const std::string cmd = "PASD_OUTPUT_ROOT=" + kRoot.string() + " " + PASD_CLI_PATH + " " + args +
                          " >" + (kRoot / "last.out").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json json_file(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
};

TEST_F(Cli, PopulationRunIsStagedAndReproducible) {
  const std::string args =
      "train-population --layout cramped_small --count 2 --steps 1200 --rollouts 2";
  ASSERT_EQ(pasd(args + " --out " + (kRoot / "popA").string()), 0) << slurp(kRoot / "last.out");
  ASSERT_EQ(pasd(args + " --out " + (kRoot / "popB").string()), 0);
  const auto a = json_file(kRoot / "popA" / "population.json");
  EXPECT_EQ(a["partners"].size(), 6u);
  for (const auto& p : a["partners"]) EXPECT_TRUE(fs::exists(kRoot / "popA" / p["checkpoint"].get<std::string>()));
  EXPECT_EQ(pasd::fnv1a(slurp(kRoot / "popA" / "population.json")),
            pasd::fnv1a(slurp(kRoot / "popB" / "population.json")));
  // The effective config is echoed into the output directory.
  EXPECT_EQ(json_file(kRoot / "popA" / "config.json")["population"]["count"], 2);
}

TEST_F(Cli, TrainEvaluateExportReplay) {
  ASSERT_EQ(pasd("train-population --layout cramped_small --count 1 --steps 800 --rollouts 2 --out " +
                 (kRoot / "pop").string()),
            0);
  const std::string manifest = (kRoot / "pop" / "population.json").string();
  ASSERT_EQ(pasd("train-pasd --layout cramped_small --partners " + manifest +
                 " --steps 2000 --rollouts 2 --seed 4"),
            0)
      << slurp(kRoot / "last.out");
  const fs::path run = kRoot / "train-pasd" / "cramped_small-seed4";
  std::ifstream m(run / "metrics.jsonl");
  std::vector<nlohmann::json> recs;
  for (std::string line; std::getline(m, line);) recs.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(recs.size(), 5u);
  EXPECT_EQ(recs.front()["lambda"], 1.0);
  EXPECT_EQ(recs.back()["lambda"], 0.05);
  EXPECT_EQ(recs.back()["entropy_coeff"], 0.0);
  EXPECT_TRUE(fs::exists(run / "curves.svg"));

  const std::string eval = "evaluate --layout cramped_small --agent " + (run / "policy.ckpt").string() +
                           " --partners " + manifest + " --episodes 1 --out ";
  ASSERT_EQ(pasd(eval + (kRoot / "evA").string()), 0) << slurp(kRoot / "last.out");
  ASSERT_EQ(pasd(eval + (kRoot / "evB").string()), 0);
  const auto report = json_file(kRoot / "evA" / "report.json");
  EXPECT_EQ(report["set_means"].size(), 3u);
  EXPECT_EQ(slurp(kRoot / "evA" / "report.json"), slurp(kRoot / "evB" / "report.json"));
  EXPECT_TRUE(fs::exists(kRoot / "evA" / "heatmap.svg"));

  ASSERT_EQ(pasd("export-embeddings --layout cramped_small --agent " + (run / "policy.ckpt").string() +
                 " --trajectories " + (kRoot / "evA" / "trajectories").string() + " --out " +
                 (kRoot / "emb").string()),
            0);
  const auto sim = json_file(kRoot / "emb" / "similarity.json");
  const std::size_t n = sim["values"].size();
  std::size_t reps = 0;
  std::ifstream table(kRoot / "emb" / "embeddings.jsonl");
  for (std::string line; std::getline(table, line);)
    reps += nlohmann::json::parse(line)["variant"] == "representative";
  EXPECT_EQ(n, reps);
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(sim["values"][i][i], 1.0);
    for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(sim["values"][i][j], sim["values"][j][i]);
  }

  EXPECT_EQ(pasd("replay " + (kRoot / "evA" / "trajectories" / "partner0_start1_ep0.jsonl").string()), 0);
  EXPECT_NE(slurp(kRoot / "last.out").find("\"consistent\":true"), std::string::npos);
}

TEST_F(Cli, StationaryPairScoresZero) {
  ASSERT_EQ(pasd("evaluate --layout cramped_room --agent scripted:stationary --partners "
                 "scripted:stationary --episodes 1 --out " + (kRoot / "still").string()),
            0);
  EXPECT_EQ(json_file(kRoot / "still" / "report.json")["overall_mean"], 0.0);
}

TEST_F(Cli, ResumeMatchesUninterruptedRun) {
  const std::string base = "train-pasd --layout cramped_small --partners scripted:onion_specialist "
                           "--steps 1600 --rollouts 2 --set checkpoint_every=2 --out ";
  ASSERT_EQ(pasd(base + (kRoot / "full").string()), 0);
  ASSERT_EQ(pasd(base + (kRoot / "split").string() + " --stop-after 3"), 0);
  ASSERT_EQ(pasd(base + (kRoot / "split").string() + " --resume " +
                 (kRoot / "split" / "checkpoints" / "iter_000002.ckpt").string()),
            0);
  EXPECT_EQ(slurp(kRoot / "full" / "metrics.jsonl"), slurp(kRoot / "split" / "metrics.jsonl"));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(pasd("--help"), 0);
  EXPECT_EQ(pasd(""), 1);
  EXPECT_EQ(pasd("train-pasd --no-such-flag"), 1);
  EXPECT_EQ(pasd("train-pasd --layout cramped_small --steps 100"), 1);  // no partners
  EXPECT_EQ(pasd("train-pasd --layout cramped_small --partners scripted:stationary --set ppo.clipp=1"), 1);
  EXPECT_EQ(pasd("train-pasd --layout atlantis --partners scripted:stationary"), 1);
  EXPECT_EQ(pasd("evaluate --layout cramped_room --agent /no/such.ckpt --partners scripted:stationary"), 1);
  EXPECT_EQ(pasd("replay /no/such/log.jsonl"), 2);
  std::ofstream(kRoot / "cfg.json") << R"({"layout": "cramped_small", "seed": 9, "total_steps": 400,
      "rollout": {"count": 2}, "partners": "scripted:stationary"})";
  // Flags override the file.
  ASSERT_EQ(pasd("train-pasd -c " + (kRoot / "cfg.json").string() + " --seed 11"), 0);
  const auto cfg = json_file(kRoot / "train-pasd" / "cramped_small-seed11" / "config.json");
  EXPECT_EQ(cfg["seed"], 11);
  EXPECT_EQ(cfg["total_steps"], 400);
  EXPECT_EQ(cfg["rollout"]["horizon"], 200);
}

}  // namespace
