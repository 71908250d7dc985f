#include "pasd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pasd/common.hpp"

namespace pasd {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'S', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("checkpoint truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

void put_double(std::string& out, double d) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d)); }

double get_double(const std::string& in, std::size_t& pos) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, pos));
}

void put_matrix(std::string& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_double(out, m(r, c));
}

Eigen::MatrixXd get_matrix(const std::string& in, std::size_t& pos, Eigen::Index rows,
                           Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_double(in, pos);
  return m;
}

}  // namespace

const ParamSet& Checkpoint::head(const std::string& name) const {
  for (const auto& [n, p] : heads)
    if (n == name) return p;
  throw IoError("checkpoint has no head '" + name + "'");
}

bool Checkpoint::has_head(const std::string& name) const {
  for (const auto& [n, p] : heads)
    if (n == name) return true;
  return false;
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json hidden = nlohmann::json::array();
  for (auto a : spec.hidden) hidden.push_back(to_string(a));
  return {{"sizes", spec.sizes},
          {"hidden", hidden},
          {"output", to_string(spec.output)},
          {"output_scale", spec.output_scale}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.sizes = j.at("sizes").get<std::vector<int>>();
  for (const auto& a : j.at("hidden")) spec.hidden.push_back(activation_from_string(a.get<std::string>()));
  spec.output = output_transform_from_string(j.at("output").get<std::string>());
  spec.output_scale = j.value("output_scale", 1.0);
  spec.validate();
  return spec;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["version"] = Checkpoint::kVersion;
  manifest["training_step"] = ckpt.training_step;
  manifest["config_hash"] = ckpt.config_hash;
  manifest["metadata"] = ckpt.metadata;
  nlohmann::json heads = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, p] : ckpt.heads) {
    nlohmann::json arrays = nlohmann::json::array();
    auto add = [&](const std::string& aname, const Eigen::MatrixXd& m) {
      arrays.push_back({{"name", aname}, {"shape", {m.rows(), m.cols()}}});
      put_matrix(payload, m);
    };
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const std::string s = std::to_string(l);
      add("weight." + s, p.layers[l].weight);
      add("bias." + s, p.layers[l].bias);
      add("adam_m.weight." + s, p.first_moment[l].weight);
      add("adam_m.bias." + s, p.first_moment[l].bias);
      add("adam_v.weight." + s, p.second_moment[l].weight);
      add("adam_v.bias." + s, p.second_moment[l].bias);
    }
    heads.push_back(
        {{"name", name}, {"spec", spec_to_json(p.spec)}, {"adam_step", p.step}, {"arrays", arrays}});
  }
  manifest["heads"] = heads;
  const std::string mtext = manifest.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  put_le<std::uint64_t>(out, mtext.size());
  out += mtext;
  out += payload;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file (bad magic)");
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != Checkpoint::kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto mlen = get_le<std::uint64_t>(bytes, pos);
  if (pos + mlen > bytes.size()) throw IoError("checkpoint truncated");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(pos, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint manifest: ") + e.what());
  }
  pos += mlen;

  Checkpoint ckpt;
  ckpt.training_step = manifest.at("training_step").get<std::int64_t>();
  ckpt.config_hash = manifest.value("config_hash", std::string());
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& h : manifest.at("heads")) {
    ParamSet p;
    p.spec = spec_from_json(h.at("spec"));
    p.step = h.at("adam_step").get<std::int64_t>();
    const auto& arrays = h.at("arrays");
    const std::size_t n_layers = static_cast<std::size_t>(p.spec.layer_count());
    if (arrays.size() != 6 * n_layers) throw IoError("checkpoint head has wrong array count");
    std::size_t a = 0;
    auto next = [&](Eigen::MatrixXd& dst) {
      const auto shape = arrays.at(a++).at("shape").get<std::vector<Eigen::Index>>();
      dst = get_matrix(bytes, pos, shape.at(0), shape.at(1));
    };
    auto next_vec = [&](Eigen::VectorXd& dst) {
      Eigen::MatrixXd m;
      next(m);
      if (m.cols() != 1) throw IoError("bias array must be a column");
      dst = m.col(0);
    };
    p.layers.resize(n_layers);
    p.first_moment.resize(n_layers);
    p.second_moment.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
      next(p.layers[l].weight);
      next_vec(p.layers[l].bias);
      next(p.first_moment[l].weight);
      next_vec(p.first_moment[l].bias);
      next(p.second_moment[l].weight);
      next_vec(p.second_moment[l].bias);
      if (p.layers[l].weight.rows() != p.spec.sizes[l + 1] ||
          p.layers[l].weight.cols() != p.spec.sizes[l])
        throw IoError("checkpoint weight shape disagrees with spec");
    }
    ckpt.heads.emplace_back(h.at("name").get<std::string>(), std::move(p));
  }
  if (pos != bytes.size()) throw IoError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write on checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace pasd
