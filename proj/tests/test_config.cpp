#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pasd/common.hpp"
#include "pasd/config.hpp"

namespace pasd {
namespace {

TEST(Config, DefaultsFollowLayout) {
  const RunConfig c = default_config("cramped_small");
  EXPECT_EQ(c.layout, "cramped_small");
  EXPECT_EQ(c.rollout.horizon, 200);
  EXPECT_EQ(c.rollout.rollouts, 30);
  EXPECT_EQ(c.ppo.clip, 0.05);
  EXPECT_EQ(c.ppo.gamma, 0.99);
  EXPECT_EQ(c.ppo.gae_lambda, 0.98);
  EXPECT_EQ(c.contrast.temperature, 0.1);
  EXPECT_EQ(c.lambda.start, 1.0);
  EXPECT_EQ(c.lambda.end, 0.05);
  EXPECT_EQ(default_config("cramped_room").rollout.horizon, 400);
  EXPECT_TRUE(c.policy.detached_embedding);
  EXPECT_EQ(c.contrast.embed_steps, 20);
  EXPECT_FALSE(default_config("cramped_room").policy.detached_embedding);
  EXPECT_EQ(default_config("cramped_room").contrast.embed_steps, 1);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = default_config("coordination_ring");
  c.seed = 42;
  c.partners = "scripted:clockwise";
  c.policy.backbone_hidden = {32, 16};
  c.ppo.termination_advantage = TerminationAdvantage::kOptionCritic;
  const RunConfig back = apply_json(RunConfig{}, to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, UnknownKeysAndWrongTypesAreRejected) {
  const RunConfig base = default_config("cramped_room");
  EXPECT_THROW(apply_json(base, {{"sed", 3}}), ConfigError);
  EXPECT_THROW(apply_json(base, {{"ppo", {{"clipp", 0.1}}}}), ConfigError);
  EXPECT_THROW(apply_json(base, {{"ppo", {{"clip", "wide"}}}}), ConfigError);
  EXPECT_THROW(apply_json(base, {{"ppo", 3}}), ConfigError);
  EXPECT_THROW(apply_json(base, {{"ppo", {{"termination_advantage", "vibes"}}}}), ConfigError);
  try {
    apply_json(base, {{"contrast", {{"tau", 0.2}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("contrast.tau"), std::string::npos);
  }
}

TEST(Config, FileOverlaysLayoutDefaultsAndLaterOverlaysWin) {
  const auto path = std::filesystem::temp_directory_path() / "pasd_test_config.json";
  std::ofstream(path) << R"({"layout": "cramped_small", "seed": 5, "ppo": {"epochs": 2}})";
  RunConfig c = load_config(path);
  std::filesystem::remove(path);
  EXPECT_EQ(c.layout, "cramped_small");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.ppo.epochs, 2);
  EXPECT_EQ(c.rollout.horizon, 200);  // from the layout defaults
  EXPECT_EQ(c.ppo.clip, 0.05);        // untouched default
  // Command-line flags are applied as a second overlay.
  c = apply_json(c, {{"seed", 8}});
  EXPECT_EQ(c.seed, 8u);
  EXPECT_EQ(c.ppo.epochs, 2);
  EXPECT_THROW(load_config("/no/such/config.json"), ConfigError);
}

TEST(Config, HashIgnoresOutputDirOnly) {
  RunConfig a = default_config("cramped_small");
  RunConfig b = a;
  b.output_dir = "/elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, ValidationCatchesBadValues) {
  RunConfig c = default_config("cramped_small");
  c.total_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = default_config("cramped_small");
  c.lambda.end = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = default_config("cramped_small");
  c.contrast.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = default_config("cramped_small");
  c.ppo.clip = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace pasd
