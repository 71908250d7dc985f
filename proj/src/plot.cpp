#include "pasd/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace pasd {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

std::string colour(double v) {
  v = std::clamp(v, -1.0, 1.0);
  int r, g, b;
  if (v >= 0.0) {
    r = 255;
    g = b = static_cast<int>(std::lround(255.0 * (1.0 - v)));
  } else {
    b = 255;
    r = g = static_cast<int>(std::lround(255.0 * (1.0 + v)));
  }
  std::ostringstream s;
  s << "#" << std::hex << std::setfill('0') << std::setw(2) << r << std::setw(2) << g
    << std::setw(2) << b;
  return s.str();
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

}  // namespace

std::string heatmap_svg(const SimilarityMatrix& m, const std::string& title) {
  const int n = static_cast<int>(m.values.rows());
  const double cell = n > 0 ? std::max(1.0, 480.0 / n) : 1.0;
  const double side = cell * n;
  const double pad = 40.0;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(side + 2 * pad)
    << "\" height=\"" << num(side + 2 * pad) << "\">\n";
  s << "<text x=\"" << pad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      s << "<rect x=\"" << num(pad + j * cell) << "\" y=\"" << num(pad + i * cell)
        << "\" width=\"" << num(cell) << "\" height=\"" << num(cell) << "\" fill=\""
        << colour(m.values(i, j)) << "\"/>\n";
  for (int i = 1; i < n; ++i) {
    if (m.skills[i] == m.skills[i - 1]) continue;
    const double at = pad + i * cell;
    s << "<line x1=\"" << num(at) << "\" y1=\"" << num(pad) << "\" x2=\"" << num(at) << "\" y2=\""
      << num(pad + side) << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << num(pad) << "\" y1=\"" << num(at) << "\" x2=\"" << num(pad + side)
      << "\" y2=\"" << num(at) << "\" stroke=\"black\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string curves_svg(const std::vector<nlohmann::json>& metrics,
                       const std::vector<std::string>& keys, const std::string& title) {
  const double w = 420.0, h = 180.0, pad = 40.0;
  std::ostringstream s;
  const double total_h = pad + keys.size() * (h + pad);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w + 2 * pad) << "\" height=\""
    << num(total_h) << "\">\n";
  s << "<text x=\"" << pad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  for (std::size_t k = 0; k < keys.size(); ++k) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& m : metrics) {
      if (!m.contains(keys[k]) || !m[keys[k]].is_number()) continue;
      pts.emplace_back(m.value("step", 0.0), m[keys[k]].get<double>());
    }
    const double top = pad + k * (h + pad);
    s << "<g>\n<rect x=\"" << pad << "\" y=\"" << num(top) << "\" width=\"" << w << "\" height=\""
      << h << "\" fill=\"none\" stroke=\"#888\"/>\n";
    s << "<text x=\"" << pad << "\" y=\"" << num(top - 6)
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(keys[k]) << "</text>\n";
    if (!pts.empty()) {
      double x0 = pts.front().first, x1 = pts.front().first;
      double y0 = pts.front().second, y1 = pts.front().second;
      for (auto [x, y] : pts) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
      if (x1 == x0) x1 = x0 + 1.0;
      if (y1 == y0) {
        y0 -= 0.5;
        y1 += 0.5;
      }
      s << "<polyline fill=\"none\" stroke=\"#1f77b4\" points=\"";
      for (auto [x, y] : pts)
        s << num(pad + (x - x0) / (x1 - x0) * w) << "," << num(top + h - (y - y0) / (y1 - y0) * h)
          << " ";
      s << "\"/>\n";
      s << "<text x=\"" << num(pad + w + 4) << "\" y=\"" << num(top + 10)
        << "\" font-family=\"sans-serif\" font-size=\"10\">" << num(y1) << "</text>\n";
      s << "<text x=\"" << num(pad + w + 4) << "\" y=\"" << num(top + h)
        << "\" font-family=\"sans-serif\" font-size=\"10\">" << num(y0) << "</text>\n";
    }
    s << "</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed metrics record", n, 1);
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace pasd
