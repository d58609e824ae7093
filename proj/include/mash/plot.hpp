#pragma once

// Numeric CSV reading and self-contained SVG line charts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mash/errors.hpp"

namespace mash::plot {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  bool has(const std::string& col) const { return std::find(header.begin(), header.end(), col) != header.end(); }
  std::vector<double> column(const std::string& col) const {
    const auto it = std::find(header.begin(), header.end(), col);
    require(it != header.end(), "csv has no column " + col);
    const auto i = static_cast<std::size_t>(it - header.begin());
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[i]);
    return out;
  }
};

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

inline Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw ConfigError(path + ": empty CSV");
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                        " columns, got " + std::to_string(cells.size()));
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        row.push_back(std::stod(c));
      } catch (const std::exception&) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": non-numeric cell '" + c + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw ConfigError(path + ": CSV has a header but no rows");
  return t;
}

struct Series {
  std::string label;
  std::vector<double> x, y;
  bool dashed = false;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

inline std::string render_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series) {
  require(!series.empty(), "render_svg: no series");
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  const double W = 800, H = 480, L = 80, R = 200, T = 40, B = 60;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  require(std::isfinite(x0) && std::isfinite(y0), "render_svg: series are empty or non-finite");
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pw = W - L - R, ph = H - T - B;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return T + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
    << detail::escape(title) << "</text>\n";
  o << "<g stroke=\"black\" stroke-width=\"1\">\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph << "\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\"/>\n";
  o << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = 0; k <= 5; ++k) {
    const double xv = x0 + (x1 - x0) * k / 5.0, yv = y0 + (y1 - y0) * k / 5.0;
    o << "<line x1=\"" << sx(xv) << "\" y1=\"" << T + ph << "\" x2=\"" << sx(xv) << "\" y2=\"" << T + ph + 5
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << sx(xv) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << detail::fmt(xv)
      << "</text>\n";
    o << "<line x1=\"" << L - 5 << "\" y1=\"" << sy(yv) << "\" x2=\"" << L << "\" y2=\"" << sy(yv)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << L - 8 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << detail::fmt(yv)
      << "</text>\n";
  }
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << detail::escape(xlabel)
    << "</text>\n";
  o << "<text x=\"20\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 " << T + ph / 2
    << ")\">" << detail::escape(ylabel) << "</text>\n</g>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = palette[i % 6];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (s.dashed) o << " stroke-dasharray=\"6 4\"";
    o << " points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) o << (k ? " " : "") << sx(s.x[k]) << "," << sy(s.y[k]);
    o << "\"/>\n";
    const double ly = T + 10 + 20.0 * static_cast<double>(i);
    o << "<line x1=\"" << L + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 45 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
      << "/>\n";
    o << "<text x=\"" << L + pw + 50 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << detail::escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace mash::plot
