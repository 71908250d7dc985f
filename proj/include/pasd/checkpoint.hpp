#ifndef PASD_CHECKPOINT_HPP_
#define PASD_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasd/network.hpp"

namespace pasd {

// Versioned parameter container.
//
//   bytes 0..7   magic "PASDCKPT"
//   bytes 8..11  format version, uint32 little-endian
//   bytes 12..19 manifest length N, uint64 little-endian
//   N bytes      manifest, UTF-8 JSON
//   payload      raw little-endian float64 arrays, in manifest order,
//                each matrix row-major
//
// The manifest lists named heads with their NetworkSpec, Adam step count and
// array shapes, plus the training step, a config hash and free-form metadata.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, ParamSet>> heads;
  std::int64_t training_step = 0;
  std::string config_hash;
  nlohmann::json metadata = nlohmann::json::object();

  const ParamSet& head(const std::string& name) const;
  bool has_head(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

}  // namespace pasd

#endif  // PASD_CHECKPOINT_HPP_
