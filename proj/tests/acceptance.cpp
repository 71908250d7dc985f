// Acceptance run: one PASS/FAIL line per criterion, exit status 0 when all pass.
// The end-to-end criteria train at desk scale and take a few minutes.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "pasd/eval.hpp"
#include "pasd/selfplay.hpp"
#include "pasd/trainer.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace pasd;
using pasd::testing::random_matrix;
using pasd::testing::relative_error;
using pasd::testing::worst_param_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const OutputTransform transforms[] = {OutputTransform::kIdentity, OutputTransform::kSoftmax,
                                        OutputTransform::kSigmoid, OutputTransform::kTanh,
                                        OutputTransform::kL2Normalize};
  Rng rng(777);
  int cases = 0;
  double worst = 0.0;
  for (int round = 0; round < 24; ++round)
    for (OutputTransform t : transforms) {
      const int in = 1 + static_cast<int>(rng.index(5));
      const bool vector_out = t == OutputTransform::kSoftmax || t == OutputTransform::kL2Normalize;
      const int out = (vector_out ? 2 : 1) + static_cast<int>(rng.index(4));
      std::vector<int> hidden;
      for (int d = static_cast<int>(rng.index(3)); d > 0; --d)
        hidden.push_back(1 + static_cast<int>(rng.index(6)));
      const Activation act = rng.bernoulli(0.3) ? Activation::kRelu : Activation::kTanh;
      ParamSet p = init_params(NetworkSpec::mlp(in, hidden, out, t, act), rng.next());
      for (auto& layer : p.layers) {
        layer.weight = random_matrix(rng, layer.weight.rows(), layer.weight.cols(), 1.5);
        layer.bias = random_matrix(rng, layer.bias.rows(), 1, 0.5);
      }
      const int batch = 1 + static_cast<int>(rng.index(4));
      Eigen::MatrixXd x = random_matrix(rng, in, batch, 1.5);
      const Eigen::MatrixXd probe = random_matrix(rng, out, batch, 1.0);
      ForwardCache cache;
      forward(p, x, &cache);
      Gradients g = Gradients::zeros_like(p.layers);
      Eigen::MatrixXd dx;
      backward(p, cache, probe, g, &dx);
      auto loss = [&] { return (forward(p, x).array() * probe.array()).sum(); };
      worst = std::max(worst, worst_param_error(p, g, loss));
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + 1e-5;
        const double up = loss();
        x.data()[i] = saved - 1e-5;
        const double down = loss();
        x.data()[i] = saved;
        worst = std::max(worst, relative_error(dx.data()[i], (up - down) / 2e-5));
      }
      ++cases;
    }
  const double secs = seconds_since(t0);
  return {cases >= 100 && worst < 1e-4 && secs < 60.0,
          std::to_string(cases) + " cases over 5 transforms, worst relative error " + fmt(worst) +
              ", " + fmt(secs, 3) + " s"};
}

Outcome gae_check() {
  Rng rng(4242);
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const int len = 1 + static_cast<int>(rng.index(20));
    std::vector<double> r(len), v(len);
    std::vector<int> done(len, 0);
    for (int t = 0; t < len; ++t) {
      r[t] = rng.normal();
      v[t] = rng.normal();
      done[t] = rng.bernoulli(0.1);
    }
    const double boot = rng.normal(), gamma = 0.9 + 0.1 * rng.uniform(), lam = rng.uniform();
    const GaeResult g = gae(r, v, boot, gamma, lam, done);
    const auto want = oracle::brute_gae(r, v, boot, gamma, lam, done);
    for (int t = 0; t < len; ++t) {
      worst = std::max(worst, std::abs(g.advantages[t] - want[t]));
      worst = std::max(worst, std::abs(g.returns[t] - (want[t] + v[t])));
    }
  }
  return {worst <= 1e-10, "1000 sequences, max deviation " + fmt(worst)};
}

Outcome contrast_check() {
  Rng rng(31337);
  int violations = 0;
  double worst_sym = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + static_cast<int>(rng.index(8));
    const int np = 1 + static_cast<int>(rng.index(5)), nn = static_cast<int>(rng.index(6));
    const double tau = 0.05 + rng.uniform();
    const Eigen::VectorXd a = oracle::random_unit(rng, d);
    std::vector<Eigen::VectorXd> pos, neg;
    for (int i = 0; i < np; ++i) pos.push_back(oracle::random_unit(rng, d));
    for (int i = 0; i < nn; ++i) neg.push_back(oracle::random_unit(rng, d));
    const double loss = infonce_loss(a, pos, neg, tau);
    const double ri = intrinsic_reward(a, pos, neg, tau);
    if (!(ri > 0.0 && ri <= 1.0)) ++violations;
    if (-std::log(ri) > loss + 1e-12) ++violations;
    if (std::abs(loss - oracle::brute_infonce(a, pos, neg, tau)) > 1e-9 * std::max(1.0, loss))
      ++violations;
    const std::vector<Eigen::VectorXd> same_p(np, a), same_n(nn, a);
    const double sym = intrinsic_reward(a, same_p, same_n, tau);
    worst_sym = std::max(worst_sym, std::abs(sym - 1.0 / (np + nn)));
  }
  bool mi_ok = true;
  for (int n : {1, 2, 8, 63}) mi_ok = mi_ok && mi_lower_bound(0.0, n) == std::log(static_cast<double>(n));
  return {violations == 0 && worst_sym == 0.0 && mi_ok,
          "1000 batches, " + std::to_string(violations) + " range/Jensen/oracle violations, "
              "symmetric deviation " + fmt(worst_sym) + ", mi bound at zero loss " +
              (mi_ok ? "= log N" : "wrong")};
}

Outcome schedule_check() {
  const std::int64_t total = 10'000'000;
  const LambdaSchedule ls{1.0, 0.05, total};
  const PpoConfig pc;
  bool ok = lambda_at(0, ls) == 1.0 && lambda_at(total, ls) == 0.05 &&
            entropy_coeff_at(0, total, pc) == 0.01 && entropy_coeff_at(total, total, pc) == 0.0;
  double worst = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const std::int64_t step = total * k / 11;
    const long double f = static_cast<long double>(step) / total;
    const double lam = static_cast<double>(1.0L + (0.05L - 1.0L) * f);
    const double ent = static_cast<double>(0.01L * (1.0L - f));
    worst = std::max({worst, std::abs(lambda_at(step, ls) - lam),
                      std::abs(entropy_coeff_at(step, total, pc) - ent)});
  }
  ok = ok && worst <= 2e-16;
  return {ok, "endpoints 1.0/0.05 and 0.01/0, max deviation from the line at 10 probes " +
                  fmt(worst)};
}

Outcome env_check() {
  Rng rng(8080);
  const auto& names = bundled_layout_names();
  int bad = 0, deliveries_total = 0;
  for (int ep = 0; ep < 1000; ++ep) {
    const Layout l = bundled_layout(names[ep % names.size()]);
    const RewardConfig rc = RewardConfig::for_layout(l);
    WorldState s = reset(l, ep, ep % 2 == 1);
    const WorldState start = s;
    std::vector<JointAction> actions;
    double team = 0.0;
    int deliveries = 0;
    while (s.tick < l.horizon) {
      const JointAction a = JointAction::of(static_cast<Action>(rng.index(kNumActions)),
                                           static_cast<Action>(rng.index(kNumActions)));
      actions.push_back(a);
      const StepResult res = step(l, s, a, rc);
      int picked = 0, delivered = 0;
      for (const Event& e : res.events) {
        picked += e.kind == EventKind::kOnionPickup;
        delivered += e.kind == EventKind::kDelivery;
      }
      if (onions_in_world(res.state) != onions_in_world(s) + picked - kPotCapacity * delivered) ++bad;
      team += res.team_reward;
      deliveries += delivered;
      s = res.state;
    }
    if (team != 20.0 * deliveries) ++bad;
    deliveries_total += deliveries;
    WorldState again = start;
    for (const auto& a : actions) again = step(l, again, a, rc).state;
    if (!(again == s)) ++bad;
  }
  return {bad == 0, "1000 episodes over 6 layouts, " + std::to_string(deliveries_total) +
                        " deliveries, " + std::to_string(bad) + " violations"};
}

Outcome bandit_check() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail = "updates to P(opt)>0.9:";
  bool ok = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    const int u = oracle::bandit_updates_to_solve(seed);
    ok = ok && u > 0 && u <= 200;
    detail += " " + std::to_string(u);
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 60.0, detail + " (seeds 1-3), " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------
// Desk-scale runs.

RunConfig desk_config(std::uint64_t seed, bool intrinsic) {
  RunConfig c = default_config("cramped_small");
  c.seed = seed;
  c.rollout.rollouts = 8;
  c.rollout.horizon = 200;
  c.total_steps = 200'000;
  c.checkpoint_every = 0;
  c.partners = "scripted:onion_specialist,scripted:dish_specialist";
  if (!intrinsic) c.lambda = {0.0, 0.0, 0};
  return c;
}

struct DeskRun {
  EvalReport report;
  double gap = 0.0;
  std::string metrics;
  double train_seconds = 0.0;
};

DeskRun desk_run(std::uint64_t seed, bool intrinsic, const fs::path& dir) {
  const RunConfig cfg = desk_config(seed, intrinsic);
  const Population pop = parse_partner_refs(cfg.partners);
  const Layout layout = resolve_layout(cfg.layout);
  TrainOptions o;
  o.output_dir = dir;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train_pasd(cfg, pop, o);
  DeskRun out;
  out.train_seconds = seconds_since(t0);
  out.metrics = slurp(dir / "metrics.jsonl");
  auto policy = std::make_shared<const HierPolicy>(r.policy);
  const PartnerPool pool(pop, layout);
  EvalOptions eo;
  eo.episodes = cfg.eval.episodes;
  eo.seed = cfg.eval.seed;
  eo.trajectory_dir = dir / "trajectories";
  fs::create_directories(eo.trajectory_dir);
  out.report = evaluate([&] { return std::make_unique<HierController>(policy); }, pool, layout, eo);
  std::ofstream(dir / "report.json") << out.report.to_json().dump(2) << "\n";

  std::vector<fs::path> logs;
  for (const auto& e : fs::directory_iterator(eo.trajectory_dir)) logs.push_back(e.path());
  std::sort(logs.begin(), logs.end());
  std::vector<EmbeddingRecord> table;
  int index = 0;
  for (const auto& p : logs)
    for (auto& rec : sequence_embeddings(*policy, layout, read_log(p), cfg.contrast.window,
                                         cfg.contrast.min_segment, index++))
      if (rec.variant == "representative") table.push_back(std::move(rec));
  try {
    out.gap = intra_inter_stats(similarity_matrix(table)).gap;
  } catch (const ConfigError&) {
    out.gap = std::nan("");
  }
  return out;
}

}  // namespace

int main() {
  const auto t_all = std::chrono::steady_clock::now();
  int failures = 0;
  auto report = [&](const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    if (!o.pass) ++failures;
  };

  report("gradient_correctness", gradient_check());
  report("gae_oracle", gae_check());
  report("contrastive_identities", contrast_check());
  report("schedules", schedule_check());
  report("environment_accounting", env_check());
  report("optimizer_sanity", bandit_check());

  const fs::path root = fs::temp_directory_path() / "pasd_acceptance";
  fs::remove_all(root);
  const auto t_e2e = std::chrono::steady_clock::now();
  const Layout layout = bundled_layout("cramped_small");
  const PartnerPool pool(parse_partner_refs("scripted:onion_specialist,scripted:dish_specialist"),
                         layout);
  EvalOptions eo;
  eo.episodes = desk_config(1, true).eval.episodes;
  eo.seed = desk_config(1, true).eval.seed;
  const double random_mean =
      evaluate([] { return std::make_unique<UniformRandomController>(); }, pool, layout, eo)
          .overall_mean;

  double pasd_sum = 0.0, ablation_sum = 0.0;
  std::vector<double> gaps;
  std::string per_seed;
  std::string first_metrics, first_report;
  for (std::uint64_t seed : {1, 2, 3}) {
    const DeskRun p = desk_run(seed, true, root / ("pasd_seed" + std::to_string(seed)));
    const DeskRun a = desk_run(seed, false, root / ("lambda0_seed" + std::to_string(seed)));
    pasd_sum += p.report.overall_mean;
    ablation_sum += a.report.overall_mean;
    gaps.push_back(p.gap);
    per_seed += " seed " + std::to_string(seed) + ": " + fmt(p.report.overall_mean) + " vs " +
                fmt(a.report.overall_mean) + ";";
    if (seed == 1) {
      first_metrics = p.metrics;
      first_report = p.report.to_json().dump();
    }
  }
  const double pasd_mean = pasd_sum / 3.0, ablation_mean = ablation_sum / 3.0;
  const double e2e_secs = seconds_since(t_e2e);
  report("end_to_end_desk_scale",
         {pasd_mean >= 5.0 * random_mean && pasd_mean > ablation_mean && e2e_secs < 1800.0,
          "mean eval return " + fmt(pasd_mean) + " vs random " + fmt(random_mean) +
              " (needs >= " + fmt(5.0 * random_mean) + ") and lambda=0 ablation " +
              fmt(ablation_mean) + ";" + per_seed + " " + fmt(e2e_secs, 4) + " s"});

  bool gaps_ok = true;
  std::string gap_text;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    gaps_ok = gaps_ok && gaps[i] > 0.0;
    gap_text += " seed " + std::to_string(i + 1) + " " + fmt(gaps[i]);
  }
  report("skill_structure", {gaps_ok, "intra minus inter cosine similarity:" + gap_text});

  // Rerun seed 1 and a small self-play population; outputs must match byte for byte.
  const DeskRun again = desk_run(1, true, root / "pasd_seed1_rerun");
  RunConfig sp = default_config("cramped_small");
  sp.population.count = 2;
  sp.population.steps = 4000;
  sp.population.rollouts = 4;
  train_selfplay_population(sp, {root / "pop_a", nullptr});
  train_selfplay_population(sp, {root / "pop_b", nullptr});
  const bool same_train = again.metrics == first_metrics && !first_metrics.empty();
  const bool same_report = again.report.to_json().dump() == first_report;
  const bool same_pop = slurp(root / "pop_a" / "population.json") == slurp(root / "pop_b" / "population.json") &&
                        slurp(root / "pop_a" / "metrics.jsonl") == slurp(root / "pop_b" / "metrics.jsonl");
  const bool same_ckpt = slurp(root / "pasd_seed1" / "policy.ckpt") == slurp(root / "pasd_seed1_rerun" / "policy.ckpt");
  report("determinism",
         {same_train && same_report && same_pop && same_ckpt,
          std::string("training metrics ") + (same_train ? "identical" : "differ") + ", eval report " +
              (same_report ? "identical" : "differs") + ", final checkpoint " +
              (same_ckpt ? "identical" : "differs") + ", self-play manifest and metrics " +
              (same_pop ? "identical" : "differ")});

  fs::remove_all(root);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " in "
            << fmt(seconds_since(t_all), 4) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
