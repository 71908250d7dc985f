#ifndef PASD_POPULATION_HPP_
#define PASD_POPULATION_HPP_

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasd/controllers.hpp"
#include "pasd/kitchen.hpp"

namespace pasd {

enum class PartnerKind { kLearned, kScripted };
enum class Stage { kEarly, kIntermediate, kFinal };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct PartnerSpec {
  std::string id;
  PartnerKind kind = PartnerKind::kScripted;
  // Learned partners.
  std::filesystem::path checkpoint;
  Stage stage = Stage::kFinal;
  std::uint64_t seed = 0;
  std::int64_t training_step = 0;
  std::string checkpoint_hash;
  // Scripted partners.
  Archetype archetype = Archetype::kStationary;

  static PartnerSpec scripted(Archetype a);
  static PartnerSpec learned(std::string id, std::filesystem::path checkpoint, Stage stage,
                             std::uint64_t seed, std::int64_t training_step);
  // Evaluation grouping key: stage name for learned, archetype name for scripted.
  std::string set_name() const;
};

struct Population {
  std::string role = "train";  // or "eval"
  std::string layout;
  std::string config_hash;
  std::vector<PartnerSpec> partners;

  std::vector<std::uint64_t> seeds() const;
};

// Manifest paths are stored relative to the manifest's directory.
nlohmann::json population_to_json(const Population& pop, const std::filesystem::path& base);
Population population_from_json(const nlohmann::json& j, const std::filesystem::path& base);
void save_manifest(const std::filesystem::path& path, const Population& pop);
Population load_manifest(const std::filesystem::path& path);

// Comma-separated partner references: "scripted:NAME" entries and/or a
// manifest path. Throws ConfigError on an empty result.
Population parse_partner_refs(const std::string& refs);

// Loaded partners, one controller factory per population entry. Learned
// checkpoints are loaded once and shared read-only.
class PartnerPool {
 public:
  PartnerPool(const Population& population, const Layout& layout);

  std::size_t size() const { return specs_.size(); }
  const PartnerSpec& spec(std::size_t i) const { return specs_.at(i); }
  std::unique_ptr<Controller> make(std::size_t i) const;

 private:
  std::vector<PartnerSpec> specs_;
  std::vector<std::shared_ptr<const FlatPolicy>> flat_;
  std::vector<std::shared_ptr<const HierPolicy>> hier_;
  Layout layout_;
};

// Uniform draw over partner indices.
std::size_t sample_partner(std::size_t population_size, Rng& rng);
const PartnerSpec& sample_partner(const Population& pop, Rng& rng);

// Jensen-Shannon divergence in nats. Throws ConfigError on inputs that are
// not distributions within 1e-6.
double jsd(std::span<const double> p, std::span<const double> q);
// Generalized form: entropy of the mean minus the mean entropy.
double jsd_many(const std::vector<std::vector<double>>& dists);

}  // namespace pasd

#endif  // PASD_POPULATION_HPP_
