#pragma once

// SVG renderings of report files. Plots only draw values already present in
// a report; nothing is recomputed here.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "latentscope/errors.hpp"

namespace latentscope::plot {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Viridis-like ramp, t in [0, 1].
inline std::string ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

inline std::string palette(std::size_t i) {
  static const std::array<const char*, 10> colors{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % colors.size()];
}

class Svg {
 public:
  Svg(double width, double height) : w_(width), h_(height) {
    body_ += "<rect x=\"0\" y=\"0\" width=\"" + num(w_) + "\" height=\"" + num(h_) + "\" fill=\"white\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"/>\n";
  }
  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) + "\" fill=\"" + fill + "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
             "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\"/>\n";
  }
  void polyline(const std::vector<std::array<double, 2>>& pts, const std::string& stroke) {
    body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) body_ += (i ? " " : "") + num(pts[i][0]) + "," + num(pts[i][1]);
    body_ += "\"/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 12.0, const std::string& anchor = "start") {
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" + num(size) +
             "\" text-anchor=\"" + anchor + "\">" + escape(s) + "</text>\n";
  }
  std::string str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w_) + "\" height=\"" + num(h_) +
           "\" viewBox=\"0 0 " + num(w_) + " " + num(h_) + "\">\n" + body_ + "</svg>\n";
  }

 private:
  double w_, h_;
  std::string body_;
};

struct Range {
  double lo = 0.0, hi = 1.0;
  static Range of(const std::vector<double>& v) {
    if (v.empty()) return {};
    auto [a, b] = std::minmax_element(v.begin(), v.end());
    Range r{*a, *b};
    if (r.hi - r.lo < 1e-12) {
      r.lo -= 0.5;
      r.hi += 0.5;
    }
    return r;
  }
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

/// Axes frame with min/max tick labels; returns the inner plot rectangle.
struct Frame {
  double x0 = 60, y0 = 40, x1, y1;
  Range xr, yr;
};

inline Frame axes(Svg& svg, double width, double height, Range xr, Range yr, const std::string& title,
                  const std::string& xlabel, const std::string& ylabel) {
  Frame f{60, 40, width - 20, height - 50, xr, yr};
  svg.text(width / 2, 22, title, 14, "middle");
  svg.line(f.x0, f.y1, f.x1, f.y1, "black");
  svg.line(f.x0, f.y0, f.x0, f.y1, "black");
  char buf[32];
  auto label = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return std::string(buf);
  };
  svg.text(f.x0, f.y1 + 16, label(xr.lo), 10, "middle");
  svg.text(f.x1, f.y1 + 16, label(xr.hi), 10, "middle");
  svg.text(f.x0 - 4, f.y1, label(yr.lo), 10, "end");
  svg.text(f.x0 - 4, f.y0 + 8, label(yr.hi), 10, "end");
  svg.text((f.x0 + f.x1) / 2, height - 12, xlabel, 12, "middle");
  svg.text(14, (f.y0 + f.y1) / 2, ylabel, 12, "middle");
  return f;
}

struct ScatterPoint {
  double t, x, y;
};

/// t-SNE scatter colored by time index.
inline std::string embedding_scatter(const std::vector<ScatterPoint>& pts, const std::string& title) {
  if (pts.empty()) throw ArgumentError("plot: embedding has no points");
  std::vector<double> xs, ys, ts;
  for (const auto& p : pts) {
    xs.push_back(p.x);
    ys.push_back(p.y);
    ts.push_back(p.t);
  }
  Svg svg(480, 480);
  const Frame f = axes(svg, 480, 480, Range::of(xs), Range::of(ys), title, "tsne-1", "tsne-2");
  const Range tr = Range::of(ts);
  for (const auto& p : pts) {
    svg.circle(f.xr.map(p.x, f.x0 + 6, f.x1 - 6), f.yr.map(p.y, f.y1 - 6, f.y0 + 6), 4, ramp(tr.map(p.t, 0, 1)));
  }
  return svg.str();
}

struct Series {
  std::string name;
  std::vector<double> values;  // plotted against 1..n
};

inline std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                              const std::string& ylabel) {
  if (series.empty()) throw ArgumentError("plot: no series");
  std::vector<double> all;
  std::size_t longest = 0;
  for (const auto& s : series) {
    if (s.values.empty()) throw ArgumentError("plot: series '" + s.name + "' is empty");
    all.insert(all.end(), s.values.begin(), s.values.end());
    longest = std::max(longest, s.values.size());
  }
  const double width = 560, height = 400;
  Svg svg(width, height);
  const Frame f = axes(svg, width, height, Range{1.0, static_cast<double>(std::max<std::size_t>(longest, 2))},
                       Range::of(all), title, xlabel, ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::array<double, 2>> pts;
    for (std::size_t n = 0; n < series[i].values.size(); ++n) {
      pts.push_back({f.xr.map(static_cast<double>(n + 1), f.x0, f.x1), f.yr.map(series[i].values[n], f.y1, f.y0)});
    }
    svg.polyline(pts, palette(i));
    const double ly = f.y0 + 14.0 * static_cast<double>(i);
    svg.line(f.x1 - 110, ly, f.x1 - 92, ly, palette(i), 2);
    svg.text(f.x1 - 88, ly + 4, series[i].name, 10);
  }
  return svg.str();
}

/// Categorical heatmap of an integer label grid (rows = lat, cols = lon).
inline std::string label_heatmap(const std::vector<std::uint32_t>& labels, std::size_t nlat, std::size_t nlon,
                                 const std::string& title) {
  if (labels.empty() || labels.size() != nlat * nlon) throw ArgumentError("plot: label grid is empty or malformed");
  const double cell = std::max(4.0, std::min(12.0, 640.0 / static_cast<double>(nlon)));
  const double width = 80 + cell * static_cast<double>(nlon), height = 80 + cell * static_cast<double>(nlat);
  Svg svg(width, height);
  svg.text(width / 2, 22, title, 14, "middle");
  const std::uint32_t top = *std::max_element(labels.begin(), labels.end());
  for (std::size_t i = 0; i < nlat; ++i) {
    for (std::size_t j = 0; j < nlon; ++j) {
      // Latitude index 0 is the southern edge; draw it at the bottom.
      const double y = 40 + cell * static_cast<double>(nlat - 1 - i);
      const std::uint32_t v = labels[i * nlon + j];
      svg.rect(40 + cell * static_cast<double>(j), y, cell, cell, top < 10 ? palette(v) : ramp(v / static_cast<double>(top)));
    }
  }
  svg.text(width / 2, height - 16, "longitude index; color = ablated dimension (0.." + std::to_string(top) + ")", 11,
           "middle");
  return svg.str();
}

struct BoxGroup {
  std::string name;
  std::vector<double> values;
};

/// Per-group spread as min-max whisker with median tick and points.
inline std::string spread_chart(const std::vector<BoxGroup>& groups, const std::string& title) {
  if (groups.empty()) throw ArgumentError("plot: no groups");
  std::vector<double> all;
  for (const auto& g : groups) {
    if (g.values.empty()) throw ArgumentError("plot: group '" + g.name + "' is empty");
    all.insert(all.end(), g.values.begin(), g.values.end());
  }
  all.push_back(0.0);
  const double width = 80.0 + 60.0 * static_cast<double>(groups.size()), height = 400;
  Svg svg(width, height);
  const Frame f = axes(svg, width, height, Range{0.0, static_cast<double>(groups.size())}, Range::of(all), title,
                       "latent space", "cluster sigma");
  const double step = (f.x1 - f.x0) / static_cast<double>(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    std::vector<double> v = groups[i].values;
    std::sort(v.begin(), v.end());
    const double cx = f.x0 + step * (static_cast<double>(i) + 0.5);
    const double median = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    svg.line(cx, f.yr.map(v.front(), f.y1, f.y0), cx, f.yr.map(v.back(), f.y1, f.y0), "#444444");
    svg.line(cx - step * 0.3, f.yr.map(median, f.y1, f.y0), cx + step * 0.3, f.yr.map(median, f.y1, f.y0), palette(i), 2);
    for (double x : v) svg.circle(cx, f.yr.map(x, f.y1, f.y0), 2.5, palette(i));
    svg.text(cx, f.y1 + 30, groups[i].name, 10, "middle");
  }
  return svg.str();
}

}  // namespace latentscope::plot
