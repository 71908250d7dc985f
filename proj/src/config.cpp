#include "pasd/config.hpp"

#include <fstream>
#include <map>
#include <set>

namespace pasd {

namespace {

struct LayoutSchedule {
  double lr;
  double decay;
};

const std::map<std::string, LayoutSchedule>& layout_schedules() {
  static const std::map<std::string, LayoutSchedule> m = {
      {"cramped_room", {1.0e-3, 3.0}},          {"asymmetric_advantages", {1.0e-3, 3.0}},
      {"coordination_ring", {6.0e-4, 1.5}},     {"forced_coordination", {8.0e-4, 2.0}},
      {"counter_circuit", {8.0e-4, 3.0}},       {"cramped_small", {1.0e-3, 3.0}},
  };
  return m;
}

std::string termination_name(TerminationAdvantage t) {
  return t == TerminationAdvantage::kSegment ? "segment" : "option_critic";
}

TerminationAdvantage termination_from(const std::string& s) {
  if (s == "segment") return TerminationAdvantage::kSegment;
  if (s == "option_critic") return TerminationAdvantage::kOptionCritic;
  throw ConfigError("unknown termination advantage '" + s + "'");
}

// Reads known keys from one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where_ + key + "'");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + where_ + key + "' has the wrong type");
    }
  }

  const nlohmann::json* section(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  if (total_steps < 1) throw ConfigError("total_steps must be positive");
  if (rollout.rollouts < 1) throw ConfigError("rollout.count must be at least 1");
  if (rollout.horizon < 1) throw ConfigError("rollout.horizon must be positive");
  if (policy.skill_count < 1) throw ConfigError("policy.skill_count must be at least 1");
  if (!(lambda.start >= 0.0 && lambda.start <= 1.0 && lambda.end >= 0.0 && lambda.end <= 1.0))
    throw ConfigError("lambda schedule endpoints must lie in [0, 1]");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (population.count < 1) throw ConfigError("population.count must be at least 1");
  if (population.steps < 1) throw ConfigError("population.steps must be positive");
  if (population.rollouts < 1) throw ConfigError("population.rollouts must be at least 1");
  if (eval.episodes < 1) throw ConfigError("eval.episodes must be at least 1");
  ppo.validate();
  contrast.validate();
}

RunConfig default_config(const std::string& layout_name) {
  RunConfig c;
  c.layout = layout_name;
  c.policy.skill_count = default_skill_count(layout_name);
  if (auto it = layout_schedules().find(layout_name); it != layout_schedules().end()) {
    c.ppo.learning_rate = it->second.lr;
    c.ppo.lr_decay_ratio = it->second.decay;
  }
  const auto& names = bundled_layout_names();
  if (std::find(names.begin(), names.end(), layout_name) != names.end())
    c.rollout.horizon = bundled_layout(layout_name).horizon;
  // The desk-scale layout runs ~125 updates. One contrastive step per update
  // barely moves phi, and on a shared backbone those steps also jolt the
  // policy features, so give the embedding its own trunk and more steps.
  if (layout_name == "cramped_small") {
    c.policy.detached_embedding = true;
    c.contrast.embed_steps = 20;
    c.contrast.embed_learning_rate = 1.0e-3;
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["layout"] = c.layout;
  j["seed"] = c.seed;
  j["partners"] = c.partners;
  j["total_steps"] = c.total_steps;
  j["checkpoint_every"] = c.checkpoint_every;
  j["output_dir"] = c.output_dir;
  j["rollout"] = {{"count", c.rollout.rollouts},
                  {"horizon", c.rollout.horizon},
                  {"max_segment_length", c.rollout.max_segment_length},
                  {"random_start", c.rollout.random_start}};
  j["ppo"] = {{"clip", c.ppo.clip},
              {"gamma", c.ppo.gamma},
              {"gae_lambda", c.ppo.gae_lambda},
              {"value_coef", c.ppo.value_coef},
              {"entropy_start", c.ppo.entropy_start},
              {"entropy_end", c.ppo.entropy_end},
              {"learning_rate", c.ppo.learning_rate},
              {"lr_decay_ratio", c.ppo.lr_decay_ratio},
              {"epochs", c.ppo.epochs},
              {"minibatch_per_env", c.ppo.minibatch_per_env},
              {"max_grad_norm", c.ppo.max_grad_norm},
              {"normalize_advantages", c.ppo.normalize_advantages},
              {"symmetric_mixing", c.ppo.symmetric_mixing},
              {"termination_advantage", termination_name(c.ppo.termination_advantage)}};
  j["contrast"] = {{"temperature", c.contrast.temperature},
                   {"window", c.contrast.window},
                   {"min_segment", c.contrast.min_segment},
                   {"representative", c.contrast.representative},
                   {"embed_steps", c.contrast.embed_steps},
                   {"embed_learning_rate", c.contrast.embed_learning_rate}};
  j["lambda"] = {{"start", c.lambda.start}, {"end", c.lambda.end}};
  j["policy"] = {{"skill_count", c.policy.skill_count},
                 {"embed_dim", c.policy.embed_dim},
                 {"backbone_hidden", c.policy.backbone_hidden},
                 {"head_hidden", c.policy.head_hidden},
                 {"detached_embedding", c.policy.detached_embedding},
                 {"initial_termination", c.policy.initial_termination},
                 {"hi_init_scale", c.policy.hi_init_scale},
                 {"lo_init_scale", c.policy.lo_init_scale}};
  j["population"] = {{"count", c.population.count},
                     {"diversity_weight", c.population.diversity_weight},
                     {"steps", c.population.steps},
                     {"rollouts", c.population.rollouts},
                     {"role", c.population.role},
                     {"hidden", c.population.hidden}};
  j["eval"] = {{"episodes", c.eval.episodes}, {"seed", c.eval.seed}};
  return j;
}

RunConfig apply_json(RunConfig c, const nlohmann::json& j) {
  Reader r(j, "");
  r.get("layout", c.layout);
  r.get("seed", c.seed);
  r.get("partners", c.partners);
  r.get("total_steps", c.total_steps);
  r.get("checkpoint_every", c.checkpoint_every);
  r.get("output_dir", c.output_dir);
  if (auto* s = r.section("rollout")) {
    Reader q(*s, "rollout.");
    q.get("count", c.rollout.rollouts);
    q.get("horizon", c.rollout.horizon);
    q.get("max_segment_length", c.rollout.max_segment_length);
    q.get("random_start", c.rollout.random_start);
  }
  if (auto* s = r.section("ppo")) {
    Reader q(*s, "ppo.");
    q.get("clip", c.ppo.clip);
    q.get("gamma", c.ppo.gamma);
    q.get("gae_lambda", c.ppo.gae_lambda);
    q.get("value_coef", c.ppo.value_coef);
    q.get("entropy_start", c.ppo.entropy_start);
    q.get("entropy_end", c.ppo.entropy_end);
    q.get("learning_rate", c.ppo.learning_rate);
    q.get("lr_decay_ratio", c.ppo.lr_decay_ratio);
    q.get("epochs", c.ppo.epochs);
    q.get("minibatch_per_env", c.ppo.minibatch_per_env);
    q.get("max_grad_norm", c.ppo.max_grad_norm);
    q.get("normalize_advantages", c.ppo.normalize_advantages);
    q.get("symmetric_mixing", c.ppo.symmetric_mixing);
    std::string term = termination_name(c.ppo.termination_advantage);
    q.get("termination_advantage", term);
    c.ppo.termination_advantage = termination_from(term);
  }
  if (auto* s = r.section("contrast")) {
    Reader q(*s, "contrast.");
    q.get("temperature", c.contrast.temperature);
    q.get("window", c.contrast.window);
    q.get("min_segment", c.contrast.min_segment);
    q.get("representative", c.contrast.representative);
    q.get("embed_steps", c.contrast.embed_steps);
    q.get("embed_learning_rate", c.contrast.embed_learning_rate);
  }
  if (auto* s = r.section("lambda")) {
    Reader q(*s, "lambda.");
    q.get("start", c.lambda.start);
    q.get("end", c.lambda.end);
  }
  if (auto* s = r.section("policy")) {
    Reader q(*s, "policy.");
    q.get("skill_count", c.policy.skill_count);
    q.get("embed_dim", c.policy.embed_dim);
    q.get("backbone_hidden", c.policy.backbone_hidden);
    q.get("head_hidden", c.policy.head_hidden);
    q.get("detached_embedding", c.policy.detached_embedding);
    q.get("initial_termination", c.policy.initial_termination);
    q.get("hi_init_scale", c.policy.hi_init_scale);
    q.get("lo_init_scale", c.policy.lo_init_scale);
  }
  if (auto* s = r.section("population")) {
    Reader q(*s, "population.");
    q.get("count", c.population.count);
    q.get("diversity_weight", c.population.diversity_weight);
    q.get("steps", c.population.steps);
    q.get("rollouts", c.population.rollouts);
    q.get("role", c.population.role);
    q.get("hidden", c.population.hidden);
  }
  if (auto* s = r.section("eval")) {
    Reader q(*s, "eval.");
    q.get("episodes", c.eval.episodes);
    q.get("seed", c.eval.seed);
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  const std::string layout = j.is_object() ? j.value("layout", std::string("cramped_room"))
                                           : std::string("cramped_room");
  return apply_json(default_config(layout), j);
}

std::string config_hash(const RunConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

}  // namespace pasd
