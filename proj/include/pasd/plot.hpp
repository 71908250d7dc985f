#ifndef PASD_PLOT_HPP_
#define PASD_PLOT_HPP_

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasd/eval.hpp"

namespace pasd {

// Cosine-similarity heatmap, rows and columns in matrix order, with skill
// boundaries drawn as lines. Values map onto a blue-white-red scale over [-1, 1].
std::string heatmap_svg(const SimilarityMatrix& m, const std::string& title);

// One panel per key: metric value against "step" from metrics.jsonl records.
// Records missing a key (or holding null) are skipped for that panel.
std::string curves_svg(const std::vector<nlohmann::json>& metrics,
                       const std::vector<std::string>& keys, const std::string& title);

std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path);

}  // namespace pasd

#endif  // PASD_PLOT_HPP_
