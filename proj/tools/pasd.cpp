#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "pasd/config.hpp"
#include "pasd/eval.hpp"
#include "pasd/play_server.hpp"
#include "pasd/plot.hpp"
#include "pasd/selfplay.hpp"
#include "pasd/trainer.hpp"

namespace fs = std::filesystem;
using namespace pasd;

namespace {

// Flags shared by the config-driven commands. Unset flags leave the config alone.
struct ConfigFlags {
  std::string file;
  std::optional<std::string> layout;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> partners;
  std::optional<double> steps;
  std::optional<int> rollouts;
  std::optional<int> horizon;
  std::optional<int> skills;
  std::optional<int> count;
  std::optional<std::string> role;
  std::optional<int> episodes;
  std::vector<std::string> sets;
  std::string out;

  void add_to(CLI::App* c) {
    c->add_option("-c,--config", file, "JSON config file");
    c->add_option("--layout", layout, "Bundled layout name or layout file");
    c->add_option("--seed", seed, "Run seed");
    c->add_option("--out", out, "Output directory");
    c->add_option("--set", sets, "Override a config key, e.g. ppo.clip=0.1 (repeatable)");
  }
};

nlohmann::json parse_value(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  return j.is_discarded() ? nlohmann::json(text) : j;
}

// Defaults for the layout, then the file, then flags.
RunConfig resolve_config(const ConfigFlags& f, const std::string& command) {
  nlohmann::json file = nlohmann::json::object();
  if (!f.file.empty()) {
    std::ifstream in(f.file);
    if (!in) throw ConfigError("cannot open config file " + f.file);
    file = nlohmann::json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object())
      throw ConfigError("config file " + f.file + " is not a JSON object");
  }
  nlohmann::json flags = nlohmann::json::object();
  if (f.layout) flags["layout"] = *f.layout;
  if (f.seed) flags["seed"] = *f.seed;
  if (f.partners) flags["partners"] = *f.partners;
  if (f.horizon) flags["rollout"]["horizon"] = *f.horizon;
  if (f.skills) flags["policy"]["skill_count"] = *f.skills;
  if (f.episodes) flags["eval"]["episodes"] = *f.episodes;
  if (command == "train-population") {
    if (f.steps) flags["population"]["steps"] = static_cast<std::int64_t>(*f.steps);
    if (f.rollouts) flags["population"]["rollouts"] = *f.rollouts;
    if (f.count) flags["population"]["count"] = *f.count;
    if (f.role) flags["population"]["role"] = *f.role;
  } else {
    if (f.steps) flags["total_steps"] = static_cast<std::int64_t>(*f.steps);
    if (f.rollouts) flags["rollout"]["count"] = *f.rollouts;
  }
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    nlohmann::json* node = &flags;
    std::string key = s.substr(0, eq);
    for (std::size_t dot; (dot = key.find('.')) != std::string::npos; key = key.substr(dot + 1))
      node = &(*node)[key.substr(0, dot)];
    (*node)[key] = parse_value(s.substr(eq + 1));
  }

  std::string layout = "cramped_room";
  if (file.contains("layout") && file["layout"].is_string()) layout = file["layout"];
  if (f.layout) layout = *f.layout;
  RunConfig cfg = apply_json(apply_json(default_config(layout), file), flags);
  // Rollout horizon follows a layout chosen only by flag.
  if (f.layout && !f.horizon && !(file.contains("rollout") && file["rollout"].contains("horizon")))
    cfg.rollout.horizon = resolve_layout(cfg.layout).horizon;

  if (!f.out.empty()) {
    cfg.output_dir = f.out;
  } else if (cfg.output_dir.empty()) {
    const char* root = std::getenv("PASD_OUTPUT_ROOT");
    const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
    const std::string leaf = fs::path(cfg.layout).stem().string() + "-seed" + std::to_string(cfg.seed);
    cfg.output_dir = (base / command / leaf).string();
  }
  cfg.validate();
  return cfg;
}

void echo_config(const RunConfig& cfg) {
  std::cout << to_json(cfg).dump(2) << "\n";
  fs::create_directories(cfg.output_dir);
  std::ofstream(fs::path(cfg.output_dir) / "config.json") << to_json(cfg).dump(2) << "\n";
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

AgentFactory agent_factory(const std::string& ref, const Layout& layout,
                           std::shared_ptr<const HierPolicy>* hier) {
  if (ref == "random") return [] { return std::make_unique<UniformRandomController>(); };
  if (ref.rfind("scripted:", 0) == 0) {
    const Archetype a = archetype_from_string(ref.substr(9));
    scripted_partner(a, layout);
    return [a, layout] { return scripted_partner(a, layout); };
  }
  if (!fs::exists(ref)) throw ConfigError("agent checkpoint not found: " + ref);
  const Checkpoint ck = load_checkpoint(ref);
  const std::string kind = ck.metadata.value("kind", std::string());
  if (kind == "hier_policy") {
    auto p = std::make_shared<const HierPolicy>(HierPolicy::from_checkpoint(ck));
    if (p->config().obs_size != observation_size(layout))
      throw ConfigError("agent checkpoint was trained on a different layout");
    if (hier) *hier = p;
    return [p] { return std::make_unique<HierController>(p); };
  }
  if (kind == "flat_policy") {
    auto p = std::make_shared<const FlatPolicy>(FlatPolicy::from_checkpoint(ck));
    if (p->obs_size() != observation_size(layout))
      throw ConfigError("agent checkpoint was trained on a different layout");
    return [p] { return std::make_unique<FlatController>(p); };
  }
  throw ConfigError("checkpoint " + ref + " holds no policy");
}

std::vector<fs::path> trajectory_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".jsonl") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Embedding table, similarity matrix, heatmap and separation stats.
void export_embeddings(const HierPolicy& policy, const Layout& layout, const RunConfig& cfg,
                       const std::vector<fs::path>& logs, const std::string& variant,
                       const fs::path& out) {
  std::vector<EmbeddingRecord> table;
  std::ofstream tab(out / "embeddings.jsonl");
  int index = 0;
  for (const auto& p : logs) {
    for (auto& r : sequence_embeddings(policy, layout, read_log(p), cfg.contrast.window,
                                       cfg.contrast.min_segment, index)) {
      write_embedding_record(tab, r);
      if (r.variant == variant) table.push_back(std::move(r));
    }
    ++index;
  }
  if (table.empty()) throw ConfigError("trajectory logs contain no skill windows");
  const SimilarityMatrix m = similarity_matrix(table);
  write_text(out / "similarity.json", m.to_json().dump() + "\n");
  write_text(out / "heatmap.svg", heatmap_svg(m, "skill embedding similarity (" + variant + ")"));
  nlohmann::json sep = {{"variant", variant}, {"rows", m.values.rows()}};
  try {
    const SkillSeparation s = intra_inter_stats(m);
    sep["intra"] = s.intra;
    sep["inter"] = s.inter;
    sep["gap"] = s.gap;
  } catch (const ConfigError& e) {
    sep["note"] = e.what();
  }
  write_text(out / "separation.json", sep.dump(2) + "\n");
  std::cout << sep.dump() << "\n";
}

const std::vector<std::string> kCurveKeys = {"mean_return", "lambda", "intrinsic_mean",
                                             "infonce_loss", "mean_skill_duration"};

int run(int argc, char** argv) {
  CLI::App app{"Partner-adaptive skill discovery: training, evaluation and live play"};
  app.require_subcommand(1);

  ConfigFlags pop_flags;
  auto* pop = app.add_subcommand("train-population", "Train a self-play partner population");
  pop_flags.add_to(pop);
  pop->add_option("--count", pop_flags.count, "Number of agents");
  pop->add_option("--steps", pop_flags.steps, "Environment steps per agent");
  pop->add_option("--rollouts", pop_flags.rollouts, "Parallel episodes per iteration");
  pop->add_option("--horizon", pop_flags.horizon, "Episode length");
  pop->add_option("--role", pop_flags.role, "train or eval");

  ConfigFlags pasd_flags;
  std::string resume;
  int stop_after = 0;
  auto* tr = app.add_subcommand("train-pasd", "Train the hierarchical agent against a population");
  pasd_flags.add_to(tr);
  tr->add_option("--partners", pasd_flags.partners, "Population manifest and/or scripted:NAME, comma-separated");
  tr->add_option("--steps", pasd_flags.steps, "Total environment steps");
  tr->add_option("--rollouts", pasd_flags.rollouts, "Parallel episodes per iteration");
  tr->add_option("--horizon", pasd_flags.horizon, "Episode length");
  tr->add_option("--skills", pasd_flags.skills, "Number of skills");
  tr->add_option("--resume", resume, "Checkpoint to resume from");
  tr->add_option("--stop-after", stop_after, "Stop after this many iterations");

  ConfigFlags eval_flags;
  std::string eval_agent, metrics_path, variant = "representative";
  auto* ev = app.add_subcommand("evaluate", "Evaluate an agent against a partner population");
  eval_flags.add_to(ev);
  ev->add_option("--agent", eval_agent, "Checkpoint path, random or scripted:NAME")->required();
  ev->add_option("--partners", eval_flags.partners, "Evaluation partners");
  ev->add_option("--episodes", eval_flags.episodes, "Episodes per partner and start position");
  ev->add_option("--horizon", eval_flags.horizon, "Episode length");
  ev->add_option("--metrics", metrics_path, "metrics.jsonl to plot training curves from");

  ConfigFlags emb_flags;
  std::string emb_agent, emb_logs;
  auto* em = app.add_subcommand("export-embeddings", "Embed logged skill windows");
  emb_flags.add_to(em);
  em->add_option("--agent", emb_agent, "Hierarchical policy checkpoint")->required();
  em->add_option("--trajectories", emb_logs, "Directory of trajectory logs")->required();
  em->add_option("--variant", variant, "representative or pooled");

  ServerOptions server;
  server.hub.log_dir = "";
  std::string ckpt_root = ".", log_dir;
  auto* sv = app.add_subcommand("serve", "Run the live play server");
  sv->add_option("--address", server.address, "Listen address");
  sv->add_option("--port", server.port, "Listen port");
  sv->add_option("--checkpoints", ckpt_root, "Directory agents are loaded from");
  sv->add_option("--logs", log_dir, "Session log directory");
  sv->add_option("--tick-rate", server.hub.tick_rate, "Ticks per second");
  sv->add_option("--duration", server.hub.duration_seconds, "Session length in seconds");
  sv->add_option("--seed", server.hub.seed, "Session seed base");

  std::string replay_log_path, replay_layout;
  auto* rp = app.add_subcommand("replay", "Re-simulate a trajectory log");
  rp->add_option("log", replay_log_path, "Trajectory log")->required();
  rp->add_option("--layout", replay_layout, "Layout (defaults to the log header)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*pop) {
    const RunConfig cfg = resolve_config(pop_flags, "train-population");
    echo_config(cfg);
    SelfPlayOptions o;
    o.output_dir = cfg.output_dir;
    o.progress = &std::cerr;
    const SelfPlayResult r = train_selfplay_population(cfg, o);
    std::cout << "wrote " << r.population.partners.size() << " checkpoints and "
              << (fs::path(cfg.output_dir) / "population.json").string() << "\n";
    return 0;
  }
  if (*tr) {
    const RunConfig cfg = resolve_config(pasd_flags, "train-pasd");
    if (cfg.partners.empty()) throw ConfigError("train-pasd needs a partner population (--partners)");
    const Population partners = parse_partner_refs(cfg.partners);
    echo_config(cfg);
    TrainOptions o;
    o.output_dir = cfg.output_dir;
    o.resume = resume;
    o.stop_after = stop_after;
    o.progress = &std::cerr;
    const TrainResult r = train_pasd(cfg, partners, o);
    const auto metrics = read_metrics(fs::path(cfg.output_dir) / "metrics.jsonl");
    write_text(fs::path(cfg.output_dir) / "curves.svg", curves_svg(metrics, kCurveKeys, "training"));
    std::cout << (r.complete ? "finished " : "stopped after ") << r.iterations_done
              << " iterations\n";
    return 0;
  }
  if (*ev) {
    const RunConfig cfg = resolve_config(eval_flags, "evaluate");
    if (cfg.partners.empty()) throw ConfigError("evaluate needs partners (--partners)");
    const Layout layout = resolve_layout(cfg.layout);
    const PartnerPool pool(parse_partner_refs(cfg.partners), layout);
    std::shared_ptr<const HierPolicy> hier;
    const AgentFactory agent = agent_factory(eval_agent, layout, &hier);
    echo_config(cfg);
    const fs::path out = cfg.output_dir;
    EvalOptions o;
    o.episodes = cfg.eval.episodes;
    o.seed = cfg.eval.seed;
    o.horizon = eval_flags.horizon ? *eval_flags.horizon : 0;
    o.trajectory_dir = out / "trajectories";
    fs::create_directories(o.trajectory_dir);
    const EvalReport report = evaluate(agent, pool, layout, o);
    write_text(out / "report.json", report.to_json().dump(2) + "\n");
    std::cout << report.to_json()["set_means"].dump() << " overall " << report.overall_mean
              << " +- " << report.overall_std << "\n";
    if (metrics_path.empty() && !eval_agent.empty() &&
        fs::exists(fs::path(eval_agent).parent_path() / "metrics.jsonl"))
      metrics_path = (fs::path(eval_agent).parent_path() / "metrics.jsonl").string();
    if (!metrics_path.empty())
      write_text(out / "curves.svg", curves_svg(read_metrics(metrics_path), kCurveKeys, "training"));
    if (hier) export_embeddings(*hier, layout, cfg, trajectory_files(o.trajectory_dir), variant, out);
    return 0;
  }
  if (*em) {
    const RunConfig cfg = resolve_config(emb_flags, "export-embeddings");
    const Layout layout = resolve_layout(cfg.layout);
    std::shared_ptr<const HierPolicy> hier;
    agent_factory(emb_agent, layout, &hier);
    if (!hier) throw ConfigError("export-embeddings needs a hierarchical policy checkpoint");
    const auto logs = trajectory_files(emb_logs);
    if (logs.empty()) throw ConfigError("no trajectory logs under " + emb_logs);
    if (variant != "representative" && variant != "pooled")
      throw ConfigError("variant must be representative or pooled");
    echo_config(cfg);
    export_embeddings(*hier, layout, cfg, logs, variant, cfg.output_dir);
    return 0;
  }
  if (*sv) {
    server.hub.checkpoint_root = ckpt_root;
    if (log_dir.empty()) {
      const char* root = std::getenv("PASD_OUTPUT_ROOT");
      log_dir = ((root && *root ? fs::path(root) : fs::path("runs")) / "sessions").string();
    }
    server.hub.log_dir = log_dir;
    PlayServer s(server);
    s.stop_on_signals();
    std::cout << "serving on http://" << server.address << ":" << s.port()
              << " (ws path /ws/play), logs in " << log_dir << "\n"
              << std::flush;
    s.run();
    std::cout << "stopped\n";
    return 0;
  }
  if (*rp) {
    const TrajectoryLog log = read_log(replay_log_path);
    Layout layout = resolve_layout(replay_layout.empty() ? log.header.layout : replay_layout);
    const ReplayResult r = replay_log(layout, log);
    double logged = 0.0;
    for (const auto& rec : log.records) logged += rec.team_reward;
    std::cout << nlohmann::json{{"consistent", r.consistent},
                                {"ticks", log.records.size()},
                                {"team_return", r.team_return},
                                {"logged_return", logged}}
                     .dump()
              << "\n";
    return r.consistent ? 0 : 2;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
