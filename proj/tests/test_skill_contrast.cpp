#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "pasd/skill_contrast.hpp"
#include "test_util.hpp"

namespace pasd {
namespace {

using oracle::random_unit;

RolloutBatch skill_batch(const std::vector<std::vector<int>>& per_rollout,
                         const std::vector<std::string>& partners) {
  RolloutBatch b;
  b.rollouts = static_cast<int>(per_rollout.size());
  b.horizon = static_cast<int>(per_rollout.front().size());
  for (int k = 0; k < b.rollouts; ++k)
    for (int t = 0; t < b.horizon; ++t) {
      LowStep s;
      s.rollout = k;
      s.t = t;
      s.skill = per_rollout[k][t];
      b.low.push_back(s);
    }
  b.partner_id = partners;
  b.obs = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(b.low.size()));
  return b;
}

std::vector<int> run_of(std::initializer_list<std::pair<int, int>> parts) {
  std::vector<int> v;
  for (auto [skill, len] : parts) v.insert(v.end(), len, skill);
  return v;
}

TEST(Windows, ThirtyStepRunGivesThreeWindows) {
  const auto w = skill_windows(run_of({{2, 30}}), 10, 5);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0], (std::pair{0, 10}));
  EXPECT_EQ(w[2], (std::pair{20, 10}));
}

TEST(Windows, ShortRunsFollowTheMinimumRule) {
  // Runs of 7, 4 and 12: the 7 stays whole, the 4 is dropped, the 12 leaves
  // a remainder of 2 which is dropped as well.
  const auto w = skill_windows(run_of({{0, 7}, {1, 4}, {0, 12}}), 10, 5);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0], (std::pair{0, 7}));
  EXPECT_EQ(w[1], (std::pair{11, 10}));
  EXPECT_TRUE(skill_windows(run_of({{-1, 20}}), 10, 5).empty());
}

TEST(Windows, PartitionNeverCrossesSkillOrRolloutBoundaries) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<int>> rolls(3);
    for (auto& r : rolls) {
      int z = 0;
      while (r.size() < 60) {
        const int len = 1 + static_cast<int>(rng.index(25));
        for (int i = 0; i < len && r.size() < 60; ++i) r.push_back(z);
        z = static_cast<int>(rng.index(4));
      }
    }
    const RolloutBatch b = skill_batch(rolls, {"a", "b", "c"});
    Rng seg_rng(trial);
    ContrastConfig cfg;
    const auto segs = segment_rollouts(b, cfg, seg_rng);
    std::vector<int> covered(b.low.size(), 0);
    for (const auto& s : segs) {
      EXPECT_GE(s.length, cfg.min_segment);
      EXPECT_LE(s.length, cfg.window);
      EXPECT_GE(s.representative, s.first_step);
      EXPECT_LT(s.representative, s.first_step + s.length);
      EXPECT_EQ(b.partner_id[s.rollout], s.partner_id);
      for (int t = 0; t < s.length; ++t) {
        const LowStep& ls = b.low[s.first_step + t];
        EXPECT_EQ(ls.skill, s.skill);
        EXPECT_EQ(ls.rollout, s.rollout);
        ++covered[s.first_step + t];
      }
    }
    for (int c : covered) EXPECT_LE(c, 1);
  }
}

TEST(Segments, SameSkillDifferentPartnersKeepsBothIds) {
  const RolloutBatch b = skill_batch({run_of({{1, 10}}), run_of({{1, 10}})}, {"p0", "p1"});
  Rng rng(1);
  const auto segs = segment_rollouts(b, ContrastConfig{}, rng);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].skill, segs[1].skill);
  EXPECT_EQ(segs[0].partner_id, "p0");
  EXPECT_EQ(segs[1].partner_id, "p1");
  EXPECT_EQ(segs[1].first_step, 10);
}

TEST(Pairs, CountsAndDisjointness) {
  const int skills[] = {0, 0, 1, 1, 1};
  const PairSets p = build_pairs(skills);
  EXPECT_EQ(p.positives.at(0).size(), 2u);
  EXPECT_EQ(p.negatives.at(0).size(), 3u);
  EXPECT_EQ(p.negatives.at(1).size(), 2u);
  EXPECT_FALSE(p.degenerate());
  for (const auto& [z, pos] : p.positives)
    for (int i : pos)
      EXPECT_EQ(std::count(p.negatives.at(z).begin(), p.negatives.at(z).end(), i), 0);

  const int single[] = {3, 3, 3};
  const PairSets q = build_pairs(single);
  EXPECT_TRUE(q.negatives.at(3).empty());
  EXPECT_TRUE(q.degenerate());
  const int lonely[] = {0, 1, 1};
  const PairSets r = build_pairs(lonely);
  EXPECT_FALSE(r.active(0));
  EXPECT_TRUE(r.active(1));
  EXPECT_EQ(r.degenerate_skills, std::vector<int>{0});
}

TEST(InfoNce, WorkedExamples) {
  Eigen::VectorXd e0 = Eigen::VectorXd::Unit(3, 0), e1 = Eigen::VectorXd::Unit(3, 1),
                  e2 = Eigen::VectorXd::Unit(3, 2);
  // Equal similarities, one positive and two negatives.
  EXPECT_NEAR(infonce_loss(e0, {e1}, {e2, e2}, 0.1), std::log(3.0), 1e-12);
  EXPECT_DOUBLE_EQ(intrinsic_reward(e0, {e1}, {e2, e2}, 0.1), 1.0 / 3.0);
  // Positive equal to the anchor, orthogonal negatives, unit temperature.
  const double e = std::exp(1.0);
  EXPECT_NEAR(infonce_loss(e0, {e0}, {e1, e2}, 1.0), -std::log(e / (e + 2.0)), 1e-12);
  EXPECT_NEAR(infonce_loss(e0, {e0}, {e1, e2}, 1.0), 0.5514, 1e-4);
  EXPECT_NEAR(intrinsic_reward(e0, {e0}, {e1, e2}, 1.0), 0.5761, 1e-4);
  EXPECT_EQ(intrinsic_reward(e0, {e1}, {}, 0.1), 1.0);
  // Sharpening towards zero temperature.
  EXPECT_LT(infonce_loss(e0, {e0}, {e1, e2}, 1e-3), 1e-100);
}

TEST(InfoNce, RejectsBadInput) {
  const Eigen::VectorXd e0 = Eigen::VectorXd::Unit(2, 0);
  EXPECT_THROW(infonce_loss(e0, {}, {e0}, 0.1), ConfigError);
  EXPECT_THROW(infonce_loss(2.0 * e0, {e0}, {}, 0.1), ConfigError);
  EXPECT_THROW(infonce_loss(e0, {e0}, {}, 0.0), ConfigError);
  EXPECT_THROW(mi_lower_bound(0.0, 0), ConfigError);
}

TEST(InfoNce, RandomBatchesMatchOracleAndIdentities) {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + static_cast<int>(rng.index(8));
    const int np = 1 + static_cast<int>(rng.index(5)), nn = static_cast<int>(rng.index(6));
    const double tau = 0.05 + rng.uniform();
    const Eigen::VectorXd a = random_unit(rng, d);
    std::vector<Eigen::VectorXd> pos, neg;
    for (int i = 0; i < np; ++i) pos.push_back(random_unit(rng, d));
    for (int i = 0; i < nn; ++i) neg.push_back(random_unit(rng, d));
    const double loss = infonce_loss(a, pos, neg, tau);
    const double r = intrinsic_reward(a, pos, neg, tau);
    EXPECT_GT(r, 0.0);
    EXPECT_LE(r, 1.0);
    EXPECT_LE(-std::log(r), loss + 1e-12);
    EXPECT_NEAR(loss, oracle::brute_infonce(a, pos, neg, tau), 1e-9 * std::max(1.0, loss));
    EXPECT_NEAR(r, oracle::brute_intrinsic(a, pos, neg, tau), 1e-12);
    // Every similarity equal.
    std::vector<Eigen::VectorXd> same_p(np, a), same_n(nn, a);
    EXPECT_EQ(intrinsic_reward(a, same_p, same_n, tau), 1.0 / (np + nn));
  }
  EXPECT_EQ(mi_lower_bound(0.0, 8), std::log(8.0));
  EXPECT_LT(mi_lower_bound(std::log(3.0), 2), 0.0);
  EXPECT_GT(mi_lower_bound(0.1, 4), mi_lower_bound(0.2, 4));
}

TEST(BatchInfoNce, MatchesPerAnchorMeanAndGradient) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4 + static_cast<int>(rng.index(6));
    Eigen::MatrixXd emb(5, n);
    std::vector<int> skills(n);
    for (int i = 0; i < n; ++i) {
      emb.col(i) = random_unit(rng, 5);
      skills[i] = static_cast<int>(rng.index(3));
    }
    skills[0] = skills[1] = 0;
    const PairSets pairs = build_pairs(skills);
    double mean = 0.0;
    int anchors = 0;
    for (int i = 0; i < n; ++i) {
      if (!pairs.active(skills[i])) continue;
      std::vector<Eigen::VectorXd> pos, neg;
      for (int j : pairs.positives.at(skills[i]))
        if (j != i) pos.push_back(emb.col(j));
      for (int j : pairs.negatives.at(skills[i])) neg.push_back(emb.col(j));
      mean += oracle::brute_infonce(emb.col(i), pos, neg, 0.3);
      ++anchors;
    }
    Eigen::MatrixXd g;
    EXPECT_NEAR(batch_infonce(emb, skills, 0.3, &g), mean / anchors, 1e-10);
    for (Eigen::Index k = 0; k < emb.size(); ++k) {
      Eigen::MatrixXd up = emb, down = emb;
      up.data()[k] += 1e-6;
      down.data()[k] -= 1e-6;
      const double fd =
          (batch_infonce(up, skills, 0.3) - batch_infonce(down, skills, 0.3)) / 2e-6;
      EXPECT_LT(testing::relative_error(g.data()[k], fd), 1e-5);
    }
  }
  const int one[] = {0, 1};
  EXPECT_THROW(batch_infonce(Eigen::MatrixXd::Identity(2, 2), one, 0.1), ConfigError);
}

HierPolicyConfig small_policy() {
  HierPolicyConfig c;
  c.obs_size = 6;
  c.skill_count = 3;
  c.embed_dim = 4;
  c.backbone_hidden = {16};
  c.head_hidden = 16;
  return c;
}

std::vector<SkillSegment> frozen_segments(Rng& rng, Eigen::MatrixXd& obs) {
  const int n = 12;
  obs = testing::random_matrix(rng, 6, n, 1.0);
  std::vector<SkillSegment> segs(n);
  for (int i = 0; i < n; ++i) {
    segs[i].skill = i % 3;
    segs[i].representative = i;
    segs[i].first_step = i;
    segs[i].length = 1;
    // Give each skill a recognisable direction in observation space.
    obs(segs[i].skill, i) += 2.0;
  }
  return segs;
}

TEST(UpdateEmbedding, LossFallsOnFrozenBatch) {
  Rng rng(3);
  Eigen::MatrixXd obs;
  const auto segs = frozen_segments(rng, obs);
  HierPolicy policy(small_policy(), 4);
  ContrastConfig cfg;
  std::vector<double> curve;
  for (int s = 0; s < 50; ++s) curve.push_back(update_embedding(policy, obs, segs, cfg, 1e-2));
  std::vector<int> skills;
  for (const auto& s : segs) skills.push_back(s.skill);
  Eigen::MatrixXd reps(6, 12);
  for (int i = 0; i < 12; ++i) reps.col(i) = obs.col(segs[i].representative);
  const double final_loss = batch_infonce(policy.embed_batch(reps), skills, cfg.temperature);
  EXPECT_LT(final_loss, curve.front());
  const Eigen::MatrixXd e = policy.embed_batch(reps);
  for (Eigen::Index i = 0; i < e.cols(); ++i) EXPECT_NEAR(e.col(i).norm(), 1.0, 1e-12);
}

TEST(UpdateEmbedding, ZeroLearningRateChangesNothing) {
  Rng rng(5);
  Eigen::MatrixXd obs;
  const auto segs = frozen_segments(rng, obs);
  HierPolicy policy(small_policy(), 4);
  const HierPolicy before = policy;
  update_embedding(policy, obs, segs, ContrastConfig{}, 0.0);
  for (std::size_t l = 0; l < policy.embed_head.layers.size(); ++l)
    EXPECT_TRUE(policy.embed_head.layers[l].weight == before.embed_head.layers[l].weight);
  for (std::size_t l = 0; l < policy.backbone.layers.size(); ++l)
    EXPECT_TRUE(policy.backbone.layers[l].weight == before.backbone.layers[l].weight);
  EXPECT_TRUE(policy.hi == before.hi);
}

TEST(ScoreSegments, DegenerateSkillsGetZeroAndPermutationIsHarmless) {
  Rng rng(6);
  Eigen::MatrixXd obs;
  auto segs = frozen_segments(rng, obs);
  segs.push_back(segs.back());
  segs.back().skill = 7;  // appears once
  for (auto& s : segs) s.partner_id = "x";
  HierPolicy policy(small_policy(), 9);
  ContrastConfig cfg;
  ScoreStats st;
  const auto r = score_segments(policy, obs, segs, build_pairs(segs), cfg, &st);
  EXPECT_EQ(r.back(), 0.0);
  EXPECT_EQ(st.degenerate_segments, 1);
  for (std::size_t i = 0; i + 1 < r.size(); ++i) {
    EXPECT_GT(r[i], 0.0);
    EXPECT_LE(r[i], 1.0);
  }

  std::vector<SkillSegment> rev(segs.rbegin(), segs.rend());
  for (std::size_t i = 0; i < rev.size(); ++i) rev[i].partner_id = "p" + std::to_string(i);
  const auto rr = score_segments(policy, obs, rev, build_pairs(rev), cfg);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(rr[r.size() - 1 - i], r[i], 1e-12);
}

TEST(FillIntrinsic, BroadcastsAndZeroesTheRest) {
  RolloutBatch b = skill_batch({run_of({{0, 12}, {1, 3}})}, {"p"});
  for (auto& s : b.low) s.intrinsic = 5.0;
  Rng rng(1);
  const auto segs = segment_rollouts(b, ContrastConfig{}, rng);
  ASSERT_EQ(segs.size(), 1u);
  const double r[1] = {0.25};
  fill_intrinsic(b, segs, r);
  for (int t = 0; t < 15; ++t) EXPECT_EQ(b.low[t].intrinsic, t < 10 ? 0.25 : 0.0);
}

TEST(EmbeddingTable, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pasd_test_emb.jsonl";
  {
    std::ofstream out(path);
    write_embedding_record(out, {1, 2, 3, "scripted:onion_specialist", "pooled", {0.6, 0.8}});
    write_embedding_record(out, {0, 0, 1, "", "representative", {1.0, 0.0}});
  }
  const auto t = read_embedding_table(path);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].segment, 2);
  EXPECT_EQ(t[0].partner_id, "scripted:onion_specialist");
  EXPECT_EQ(t[0].variant, "pooled");
  EXPECT_EQ(t[0].embedding, (std::vector<double>{0.6, 0.8}));
  { std::ofstream(path, std::ios::app) << "{\"rollout\": 1}\n"; }
  EXPECT_THROW(read_embedding_table(path), ParseError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pasd
