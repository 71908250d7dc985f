#include "pasd/population.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pasd/checkpoint.hpp"

namespace pasd {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kEarly: return "early";
    case Stage::kIntermediate: return "intermediate";
    case Stage::kFinal: return "final";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  if (s == "early") return Stage::kEarly;
  if (s == "intermediate") return Stage::kIntermediate;
  if (s == "final") return Stage::kFinal;
  throw ConfigError("unknown checkpoint stage '" + s + "'");
}

PartnerSpec PartnerSpec::scripted(Archetype a) {
  PartnerSpec p;
  p.kind = PartnerKind::kScripted;
  p.archetype = a;
  p.id = "scripted:" + to_string(a);
  return p;
}

PartnerSpec PartnerSpec::learned(std::string id, std::filesystem::path checkpoint, Stage stage,
                                 std::uint64_t seed, std::int64_t training_step) {
  PartnerSpec p;
  p.kind = PartnerKind::kLearned;
  p.id = std::move(id);
  p.checkpoint = std::move(checkpoint);
  p.stage = stage;
  p.seed = seed;
  p.training_step = training_step;
  return p;
}

std::string PartnerSpec::set_name() const {
  return kind == PartnerKind::kLearned ? to_string(stage) : to_string(archetype);
}

std::vector<std::uint64_t> Population::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& p : partners)
    if (p.kind == PartnerKind::kLearned) out.push_back(p.seed);
  return out;
}

nlohmann::json population_to_json(const Population& pop, const std::filesystem::path& base) {
  nlohmann::json j;
  j["role"] = pop.role;
  j["layout"] = pop.layout;
  j["config_hash"] = pop.config_hash;
  j["partners"] = nlohmann::json::array();
  for (const auto& p : pop.partners) {
    nlohmann::json e;
    e["id"] = p.id;
    if (p.kind == PartnerKind::kScripted) {
      e["kind"] = "scripted";
      e["archetype"] = to_string(p.archetype);
    } else {
      e["kind"] = "learned";
      e["checkpoint"] = p.checkpoint.is_absolute() && !base.empty()
                            ? std::filesystem::relative(p.checkpoint, base).generic_string()
                            : p.checkpoint.generic_string();
      e["stage"] = to_string(p.stage);
      e["seed"] = p.seed;
      e["training_step"] = p.training_step;
      e["checkpoint_hash"] = p.checkpoint_hash;
    }
    j["partners"].push_back(e);
  }
  return j;
}

Population population_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  Population pop;
  try {
    pop.role = j.value("role", std::string("train"));
    pop.layout = j.value("layout", std::string());
    pop.config_hash = j.value("config_hash", std::string());
    for (const auto& e : j.at("partners")) {
      const std::string kind = e.at("kind").get<std::string>();
      if (kind == "scripted") {
        pop.partners.push_back(
            PartnerSpec::scripted(archetype_from_string(e.at("archetype").get<std::string>())));
      } else if (kind == "learned") {
        std::filesystem::path ck = e.at("checkpoint").get<std::string>();
        if (ck.is_relative()) ck = base / ck;
        auto p = PartnerSpec::learned(e.at("id").get<std::string>(), ck,
                                      stage_from_string(e.at("stage").get<std::string>()),
                                      e.value("seed", std::uint64_t{0}),
                                      e.value("training_step", std::int64_t{0}));
        p.checkpoint_hash = e.value("checkpoint_hash", std::string());
        pop.partners.push_back(p);
      } else {
        throw ConfigError("unknown partner kind '" + kind + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed population manifest: ") + e.what());
  }
  return pop;
}

void save_manifest(const std::filesystem::path& path, const Population& pop) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << population_to_json(pop, std::filesystem::absolute(path).parent_path()).dump(2) << "\n";
}

Population load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open population manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed population manifest " + path.string() + ": " + e.what());
  }
  return population_from_json(j, std::filesystem::absolute(path).parent_path());
}

Population parse_partner_refs(const std::string& refs) {
  Population pop;
  std::stringstream ss(refs);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item.rfind("scripted:", 0) == 0) {
      pop.partners.push_back(PartnerSpec::scripted(archetype_from_string(item.substr(9))));
    } else {
      Population sub = load_manifest(item);
      if (pop.layout.empty()) pop.layout = sub.layout;
      pop.role = sub.role;
      pop.config_hash = sub.config_hash;
      for (auto& p : sub.partners) pop.partners.push_back(std::move(p));
    }
  }
  if (pop.partners.empty()) throw ConfigError("partner population is empty");
  return pop;
}

PartnerPool::PartnerPool(const Population& population, const Layout& layout)
    : specs_(population.partners), layout_(layout) {
  if (specs_.empty()) throw ConfigError("partner population is empty");
  flat_.resize(specs_.size());
  hier_.resize(specs_.size());
  std::map<std::filesystem::path, std::size_t> seen;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    if (s.kind == PartnerKind::kScripted) {
      scripted_partner(s.archetype, layout);  // validates compatibility
      continue;
    }
    if (auto it = seen.find(s.checkpoint); it != seen.end()) {
      flat_[i] = flat_[it->second];
      hier_[i] = hier_[it->second];
      continue;
    }
    if (!std::filesystem::exists(s.checkpoint))
      throw ConfigError("partner checkpoint not found: " + s.checkpoint.string());
    const Checkpoint ck = load_checkpoint(s.checkpoint);
    const std::string kind = ck.metadata.value("kind", std::string());
    if (kind == "flat_policy")
      flat_[i] = std::make_shared<const FlatPolicy>(FlatPolicy::from_checkpoint(ck));
    else if (kind == "hier_policy")
      hier_[i] = std::make_shared<const HierPolicy>(HierPolicy::from_checkpoint(ck));
    else
      throw ConfigError("checkpoint " + s.checkpoint.string() + " holds no policy");
    const int obs = flat_[i] ? flat_[i]->obs_size() : hier_[i]->config().obs_size;
    if (obs != observation_size(layout))
      throw ConfigError("partner " + s.id + " was trained on a different layout");
    seen[s.checkpoint] = i;
  }
}

std::unique_ptr<Controller> PartnerPool::make(std::size_t i) const {
  const auto& s = specs_.at(i);
  if (s.kind == PartnerKind::kScripted) return scripted_partner(s.archetype, layout_);
  if (flat_[i]) return std::make_unique<FlatController>(flat_[i]);
  return std::make_unique<HierController>(hier_[i]);
}

std::size_t sample_partner(std::size_t population_size, Rng& rng) {
  if (population_size == 0) throw ConfigError("cannot sample from an empty population");
  return rng.index(population_size);
}

const PartnerSpec& sample_partner(const Population& pop, Rng& rng) {
  return pop.partners[sample_partner(pop.partners.size(), rng)];
}

namespace {

void check_distribution(std::span<const double> p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= -1e-12)) throw ConfigError("distribution has a negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("distribution does not sum to 1");
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("jsd: size mismatch");
  check_distribution(p);
  check_distribution(q);
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) out += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) out += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(out, 0.0);
}

double jsd_many(const std::vector<std::vector<double>>& dists) {
  if (dists.empty()) throw ConfigError("jsd_many: no distributions");
  const std::size_t n = dists.front().size();
  std::vector<double> mean(n, 0.0);
  double mean_entropy = 0.0;
  for (const auto& d : dists) {
    if (d.size() != n) throw ShapeError("jsd_many: size mismatch");
    check_distribution(d);
    for (std::size_t i = 0; i < n; ++i) mean[i] += d[i] / static_cast<double>(dists.size());
    mean_entropy += entropy(d) / static_cast<double>(dists.size());
  }
  return std::max(entropy(mean) - mean_entropy, 0.0);
}

}  // namespace pasd
