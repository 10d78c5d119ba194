#pragma once

// Polyline plots of 3D ball paths over the table outline, as SVG text.

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "tt3d/camgeom.hpp"
#include "tt3d/error.hpp"

namespace tt3d {

enum class PlotView { TopDown, Side };

inline PlotView parse_plot_view(std::string_view s) {
  if (s == "top") return PlotView::TopDown;
  if (s == "side") return PlotView::Side;
  throw Error(Errc::ParseError, "unknown plot view '" + std::string(s) + "'");
}

struct PlotSeries {
  std::string label;
  std::vector<Vec3> points;
  std::string color;  // empty: taken from the palette
};

struct PlotOptions {
  double px_per_m = 120.0;
  double margin_m = 0.5;
  double net_height = 0.1525;
};

namespace detail {

// Horizontal axis is world Y in both views; the vertical axis is X (top-down)
// or Z (side).
inline Vec2 plot_coords(const Vec3& p, PlotView view) {
  return view == PlotView::TopDown ? Vec2(p.y(), p.x()) : Vec2(p.y(), p.z());
}

inline std::string svg_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string xml_escape(std::string_view s) {
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

inline std::string render_svg(const std::vector<PlotSeries>& series, PlotView view,
                              const TableModel& table = TableModel::standard(), const PlotOptions& opt = {}) {
  static constexpr std::array<std::string_view, 6> kPalette{"#1f77b4", "#d62728", "#2ca02c",
                                                            "#ff7f0e", "#9467bd", "#8c564b"};
  const double hl = 0.5 * table.length;
  const double hw = 0.5 * table.width;
  Vec2 lo = view == PlotView::TopDown ? Vec2(-hl, -hw) : Vec2(-hl, 0.0);
  Vec2 hi = view == PlotView::TopDown ? Vec2(hl, hw) : Vec2(hl, opt.net_height);
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      const Vec2 q = detail::plot_coords(p, view);
      lo = lo.cwiseMin(q);
      hi = hi.cwiseMax(q);
    }
  }
  lo.array() -= opt.margin_m;
  hi.array() += opt.margin_m;
  const double width = (hi.x() - lo.x()) * opt.px_per_m;
  const double height = (hi.y() - lo.y()) * opt.px_per_m;
  // SVG y grows downwards.
  auto px = [&](const Vec2& q) {
    return detail::svg_number((q.x() - lo.x()) * opt.px_per_m) + "," +
           detail::svg_number((hi.y() - q.y()) * opt.px_per_m);
  };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::svg_number(width) +
                    "\" height=\"" + detail::svg_number(height) + "\" viewBox=\"0 0 " + detail::svg_number(width) +
                    " " + detail::svg_number(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (view == PlotView::TopDown) {
    out += "<polygon points=\"" + px({-hl, -hw}) + " " + px({hl, -hw}) + " " + px({hl, hw}) + " " + px({-hl, hw}) +
           "\" fill=\"#2e6b4f\" stroke=\"black\"/>\n";
    out += "<polyline points=\"" + px({-hl, 0.0}) + " " + px({hl, 0.0}) + "\" stroke=\"white\" fill=\"none\"/>\n";
    out += "<polyline points=\"" + px({0.0, -hw}) + " " + px({0.0, hw}) + "\" stroke=\"black\" stroke-width=\"2\" "
           "fill=\"none\"/>\n";
  } else {
    out += "<polyline points=\"" + px({-hl, 0.0}) + " " + px({hl, 0.0}) + "\" stroke=\"#2e6b4f\" stroke-width=\"4\" "
           "fill=\"none\"/>\n";
    out += "<polyline points=\"" + px({0.0, 0.0}) + " " + px({0.0, opt.net_height}) +
           "\" stroke=\"black\" stroke-width=\"2\" fill=\"none\"/>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    if (s.points.empty()) continue;
    const std::string color = s.color.empty() ? std::string(kPalette[k % kPalette.size()]) : detail::xml_escape(s.color);
    out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (i) out += ' ';
      out += px(detail::plot_coords(s.points[i], view));
    }
    out += "\"><title>" + detail::xml_escape(s.label) + "</title></polyline>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace tt3d
