#pragma once

// SVG rendering of robustness grids (heatmaps) and per-algorithm summaries
// (boxplots). Output depends only on the input values, so files are stable
// byte for byte across runs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qarl/errors.hpp"

namespace qarl {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("CSV has no column '" + name + "'");
  }
};

// Plain comma-separated values with a header row; no quoting (the files
// this project writes never need it).
inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty()) {
      t.header = split(line);
      continue;
    }
    auto row = split(line);
    if (row.size() != t.header.size())
      throw ConfigError("CSV row " + std::to_string(t.rows.size() + 2) + " has " + std::to_string(row.size()) +
                        " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ConfigError("CSV is empty");
  return t;
}

inline double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("CSV cell '" + s + "' is not a number");
  }
  if (used != s.size()) throw ConfigError("CSV cell '" + s + "' is not a number");
  return v;
}

// Viridis sampled at nine evenly spaced points.
inline constexpr std::array<const char*, 9> kViridis9{"#440154", "#472d7b", "#3b528b", "#2c728e", "#21918c",
                                                      "#28ae80", "#5ec962", "#addc30", "#fde725"};

// Ramp index for v on [lo, hi]; a constant grid maps to the middle colour.
inline std::size_t ramp_index(double v, double lo, double hi) {
  if (!(hi > lo)) return kViridis9.size() / 2;
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return std::min<std::size_t>(kViridis9.size() - 1, std::size_t(t * double(kViridis9.size())));
}

namespace detail {

inline std::string svg_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

struct HeatmapData {
  std::string axis1_name;
  std::string axis2_name;
  std::vector<double> axis1;  // rows
  std::vector<double> axis2;  // columns
  std::vector<std::vector<double>> values;
};

// Reads the grid CSV written by `sweep` (one row per cell).
inline HeatmapData heatmap_from_csv(const CsvTable& t) {
  const std::size_t c1n = t.column("axis1_name"), c1 = t.column("axis1_mult"), c2n = t.column("axis2_name"),
                    c2 = t.column("axis2_mult"), cv = t.column("mean_return");
  if (t.rows.empty()) throw ConfigError("grid CSV has no cells");
  HeatmapData h;
  h.axis1_name = t.rows.front()[c1n];
  h.axis2_name = t.rows.front()[c2n];
  auto add_unique = [](std::vector<double>& v, double x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& r : t.rows) {
    add_unique(h.axis1, parse_number(r[c1]));
    add_unique(h.axis2, parse_number(r[c2]));
  }
  std::vector<std::vector<int>> seen(h.axis1.size(), std::vector<int>(h.axis2.size(), 0));
  h.values.assign(h.axis1.size(), std::vector<double>(h.axis2.size(), 0.0));
  for (const auto& r : t.rows) {
    const auto i = std::size_t(std::find(h.axis1.begin(), h.axis1.end(), parse_number(r[c1])) - h.axis1.begin());
    const auto j = std::size_t(std::find(h.axis2.begin(), h.axis2.end(), parse_number(r[c2])) - h.axis2.begin());
    if (seen[i][j]++) throw ConfigError("grid CSV repeats a cell");
    h.values[i][j] = parse_number(r[cv]);
  }
  for (const auto& row : seen)
    for (int s : row)
      if (!s) throw ConfigError("grid CSV is missing cells");
  return h;
}

inline std::string heatmap_svg(const HeatmapData& h, const std::string& title = "robustness") {
  const int cell = 48, left = 90, top = 50, legend = 70;
  const int w = left + int(h.axis2.size()) * cell + legend, hgt = top + int(h.axis1.size()) * cell + 60;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& row : h.values)
    for (double v : row) lo = std::min(lo, v), hi = std::max(hi, v);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << hgt << "\" viewBox=\"0 0 " << w
     << ' ' << hgt << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << detail::escape_xml(title) << "</text>\n";
  os << "<text class=\"annotation\" x=\"" << left << "\" y=\"38\">min " << detail::svg_number(lo) << " max "
     << detail::svg_number(hi) << "</text>\n";
  for (std::size_t i = 0; i < h.axis1.size(); ++i) {
    const int y = top + int(i) * cell;
    os << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
       << detail::svg_number(h.axis1[i]) << "</text>\n";
    for (std::size_t j = 0; j < h.axis2.size(); ++j) {
      const int x = left + int(j) * cell;
      os << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
         << "\" fill=\"" << kViridis9[ramp_index(h.values[i][j], lo, hi)] << "\"><title>"
         << detail::svg_number(h.values[i][j]) << "</title></rect>\n";
    }
  }
  const int yb = top + int(h.axis1.size()) * cell;
  for (std::size_t j = 0; j < h.axis2.size(); ++j)
    os << "<text x=\"" << left + int(j) * cell + cell / 2 << "\" y=\"" << yb + 14 << "\" text-anchor=\"middle\">"
       << detail::svg_number(h.axis2[j]) << "</text>\n";
  os << "<text x=\"" << left + int(h.axis2.size()) * cell / 2 << "\" y=\"" << yb + 34 << "\" text-anchor=\"middle\">"
     << detail::escape_xml(h.axis2_name) << "</text>\n";
  os << "<text x=\"14\" y=\"" << top + int(h.axis1.size()) * cell / 2 << "\" transform=\"rotate(-90 14 "
     << top + int(h.axis1.size()) * cell / 2 << ")\" text-anchor=\"middle\">" << detail::escape_xml(h.axis1_name)
     << "</text>\n";
  const int xl = left + int(h.axis2.size()) * cell + 20;
  for (std::size_t k = 0; k < kViridis9.size(); ++k)
    os << "<rect class=\"legend\" x=\"" << xl << "\" y=\"" << top + int(kViridis9.size() - 1 - k) * 12
       << "\" width=\"14\" height=\"12\" fill=\"" << kViridis9[k] << "\"/>\n";
  os << "</svg>\n";
  return os.str();
}

struct BoxStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  std::size_t n = 0;
};

// Quartiles by linear interpolation between order statistics.
inline BoxStats box_stats(std::vector<double> v) {
  if (v.empty()) throw DomainError("box_stats: no values");
  std::sort(v.begin(), v.end());
  auto q = [&v](double p) {
    const double pos = p * double(v.size() - 1);
    const std::size_t i = std::size_t(pos);
    const double f = pos - double(i);
    return i + 1 < v.size() ? v[i] * (1.0 - f) + v[i + 1] * f : v[i];
  };
  return {v.front(), q(0.25), q(0.5), q(0.75), v.back(), v.size()};
}

// One box per value of `group_column`, in first-appearance order.
inline std::string boxplot_svg(const CsvTable& t, const std::string& value_column,
                               const std::string& group_column = "algorithm") {
  const std::size_t cv = t.column(value_column), cg = t.column(group_column);
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : t.rows) {
    if (!groups.count(r[cg])) order.push_back(r[cg]);
    groups[r[cg]].push_back(parse_number(r[cv]));
  }
  if (order.empty()) throw ConfigError("CSV has no rows to summarise");
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& [g, v] : groups)
    for (double x : v) lo = std::min(lo, x), hi = std::max(hi, x);
  if (!(hi > lo)) lo -= 0.5, hi += 0.5;
  const int left = 70, top = 40, plot_h = 240, slot = 90;
  const int w = left + int(order.size()) * slot + 20, h = top + plot_h + 50;
  auto y = [&](double v) { return double(top) + (hi - v) / (hi - lo) * double(plot_h); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << detail::escape_xml(value_column) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * double(k) / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << detail::svg_number(y(v) + 4) << "\" text-anchor=\"end\">"
       << detail::svg_number(v) << "</text>\n";
  }
  for (std::size_t g = 0; g < order.size(); ++g) {
    const BoxStats b = box_stats(groups[order[g]]);
    const double cx = double(left) + (double(g) + 0.5) * slot, half = 22.0;
    const std::string sx = detail::svg_number(cx);
    os << "<g class=\"box\" data-n=\"" << b.n << "\">\n";
    os << "<line x1=\"" << sx << "\" y1=\"" << detail::svg_number(y(b.max)) << "\" x2=\"" << sx << "\" y2=\""
       << detail::svg_number(y(b.min)) << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << detail::svg_number(cx - half) << "\" y=\"" << detail::svg_number(y(b.q3))
       << "\" width=\"" << detail::svg_number(2 * half) << "\" height=\""
       << detail::svg_number(std::max(0.5, y(b.q1) - y(b.q3))) << "\" fill=\"" << kViridis9[(2 * g + 2) % 9]
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << detail::svg_number(cx - half) << "\" y1=\"" << detail::svg_number(y(b.median))
       << "\" x2=\"" << detail::svg_number(cx + half) << "\" y2=\"" << detail::svg_number(y(b.median))
       << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    os << "</g>\n";
    os << "<text x=\"" << sx << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
       << detail::escape_xml(order[g]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace qarl
