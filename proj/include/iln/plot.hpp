#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "iln/errors.hpp"

namespace iln {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  ///< (x, y)
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

/// Line chart with one polyline and one marker per point for each series.
[[nodiscard]] inline std::string line_chart_svg(const std::vector<Series>& series, const std::string& title,
                                                const std::string& x_label, const std::string& y_label) {
  constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
  static const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) throw DomainError("plot: non-finite point in series '" + s.name + "'");
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) throw DomainError("plot: no points");
  if (x1 == x0) x0 -= 1, x1 += 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * ph; };
  using detail::num;

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
                    num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::svg_escape(title) + "</text>\n";
  out += "<g stroke=\"black\"><line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(kLeft + pw) +
         "\" y2=\"" + num(kTop + ph) + "\"/><line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" +
         num(kLeft) + "\" y2=\"" + num(kTop + ph) + "\"/></g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    out += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" +
           detail::tick(fx) + "</text>\n";
    out += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(fy) + 4) + "\" text-anchor=\"end\">" +
           detail::tick(fy) + "</text>\n";
  }
  out += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 10) + "\" text-anchor=\"middle\">" +
         detail::svg_escape(x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(kTop + ph / 2) + ")\">" + detail::svg_escape(y_label) + "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::string color = kColors[i % std::size(kColors)];
    const auto& pts = series[i].points;
    std::string poly;
    for (const auto& [x, y] : pts) poly += (poly.empty() ? "" : " ") + num(px(x)) + "," + num(py(y));
    out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" + poly + "\"/>\n";
    for (const auto& [x, y] : pts) {
      out += "<circle cx=\"" + num(px(x)) + "\" cy=\"" + num(py(y)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    out += "<text x=\"" + num(kLeft + pw + 12) + "\" y=\"" + num(ly + 4) + "\" fill=\"" + color + "\">" +
           detail::svg_escape(series[i].name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace iln
