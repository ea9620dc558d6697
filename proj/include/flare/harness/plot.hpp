#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flare/harness/config.hpp"
#include "flare/harness/log.hpp"

namespace flare::harness {

// ---------------------------------------------------------------------------
// Learning-curve plots as standalone SVG. The renderer is a pure function of
// its inputs: coordinates are rounded to 1/100 px and printed with the
// shortest round-trip formatter, so the same curves always produce the same
// bytes.
// ---------------------------------------------------------------------------

struct PlotSeries {
  std::string label;
  Curve curve;  // steps / mean / dev per evaluation point
};

struct PlotOptions {
  std::string title;
  std::string x_label = "environment steps";
  std::string y_label = "evaluation return";
  int width = 960;
  int height = 540;
};

/// Line colors, assigned to series in order (cycling past the end).
inline constexpr std::array<const char*, 6> kPalette = {
    "#1f77b4", "#2ca02c", "#ff7f0e", "#d62728", "#9467bd", "#8c564b"};

inline const char* series_color(size_t index) { return kPalette[index % kPalette.size()]; }

/// The mean +/- deviation band as a closed polygon in data space: the upper
/// edge left to right, then the lower edge right to left. Exposed separately
/// from the renderer so the band geometry can be checked without parsing SVG.
inline std::vector<std::array<double, 2>> build_band_points(const Curve& c) {
  if (c.steps.size() != c.mean.size() || c.steps.size() != c.dev.size())
    throw std::invalid_argument("plot: curve arrays disagree in length");
  std::vector<std::array<double, 2>> pts;
  pts.reserve(2 * c.steps.size());
  for (size_t i = 0; i < c.steps.size(); ++i)
    pts.push_back({c.steps[i], c.mean[i] + c.dev[i]});
  for (size_t i = c.steps.size(); i-- > 0;)
    pts.push_back({c.steps[i], c.mean[i] - c.dev[i]});
  return pts;
}

/// Tick positions covering [lo, hi] at a 1/2/5 x 10^k spacing, aiming for
/// roughly `target` intervals. Requires hi > lo.
inline std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  if (!(hi > lo)) throw std::invalid_argument("plot: tick range is empty");
  const double raw = (hi - lo) / double(std::max(target, 1));
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  const double step = mag * (norm < 1.5 ? 1.0 : norm < 3.5 ? 2.0 : norm < 7.5 ? 5.0 : 10.0);
  std::vector<double> ticks;
  double t = std::ceil(lo / step) * step;
  const double eps = step * 1e-9;
  for (; t <= hi + eps; t += step) ticks.push_back(std::abs(t) < eps ? 0.0 : t);
  return ticks;
}

namespace detail {

/// Pixel coordinate: rounded to 1/100 px, shortest round-trip formatting.
inline std::string svg_coord(double v) {
  return format_value(std::round(v * 100.0) / 100.0);
}

/// Tick label: %.10g keeps nice tick values compact and exact.
inline std::string tick_label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return std::string(buf);
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Mapper {
  double x0, x1, y0, y1;        // data ranges
  double px0, px1, py0, py1;    // pixel box (py0 = bottom, py1 = top)
  double x(double v) const { return px0 + (v - x0) / (x1 - x0) * (px1 - px0); }
  double y(double v) const { return py0 - (v - y0) / (y1 - y0) * (py0 - py1); }
};

}  // namespace detail

/// Render learning curves (mean line plus deviation band per series) to SVG.
inline std::string render_svg(const std::vector<PlotSeries>& series,
                              const PlotOptions& opt = {}) {
  if (series.empty()) throw std::invalid_argument("plot: no series");
  for (const PlotSeries& s : series)
    if (s.curve.steps.empty())
      throw std::invalid_argument("plot: series '" + s.label + "' is empty");

  double x0 = series[0].curve.steps.front(), x1 = x0;
  double y0 = 0.0, y1 = 0.0;
  bool first = true;
  for (const PlotSeries& s : series) {
    for (size_t i = 0; i < s.curve.steps.size(); ++i) {
      const double lo = s.curve.mean[i] - s.curve.dev[i];
      const double hi = s.curve.mean[i] + s.curve.dev[i];
      if (first) { y0 = lo; y1 = hi; first = false; }
      x0 = std::min(x0, s.curve.steps[i]);
      x1 = std::max(x1, s.curve.steps[i]);
      y0 = std::min(y0, lo);
      y1 = std::max(y1, hi);
    }
  }
  if (x1 <= x0) { const double p = std::max(1.0, std::abs(x0) * 0.1); x0 -= p; x1 += p; }
  if (y1 <= y0) { const double p = std::max(1.0, std::abs(y0) * 0.1); y0 -= p; y1 += p; }
  const double ypad = (y1 - y0) * 0.05;
  y0 -= ypad;
  y1 += ypad;

  const double ml = 64, mr = 16, mt = opt.title.empty() ? 16 : 40, mb = 46;
  const double W = opt.width, H = opt.height;
  detail::Mapper m{x0, x1, y0, y1, ml, W - mr, H - mb, mt};

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         detail::format_int(opt.width) + "\" height=\"" + detail::format_int(opt.height) +
         "\" viewBox=\"0 0 " + detail::format_int(opt.width) + " " +
         detail::format_int(opt.height) + "\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  // Grid and ticks.
  const std::vector<double> xt = nice_ticks(x0, x1);
  const std::vector<double> yt = nice_ticks(y0, y1);
  for (double t : xt) {
    const std::string px = detail::svg_coord(m.x(t));
    svg += "<line x1=\"" + px + "\" y1=\"" + detail::svg_coord(m.py1) + "\" x2=\"" + px +
           "\" y2=\"" + detail::svg_coord(m.py0) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + px + "\" y=\"" + detail::svg_coord(m.py0 + 16) +
           "\" font-size=\"11\" fill=\"#444444\" text-anchor=\"middle\">" +
           detail::tick_label(t) + "</text>\n";
  }
  for (double t : yt) {
    const std::string py = detail::svg_coord(m.y(t));
    svg += "<line x1=\"" + detail::svg_coord(m.px0) + "\" y1=\"" + py + "\" x2=\"" +
           detail::svg_coord(m.px1) + "\" y2=\"" + py + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + detail::svg_coord(m.px0 - 6) + "\" y=\"" + py +
           "\" font-size=\"11\" fill=\"#444444\" text-anchor=\"end\" dy=\"4\">" +
           detail::tick_label(t) + "</text>\n";
  }

  // Series: deviation band beneath the mean line.
  for (size_t si = 0; si < series.size(); ++si) {
    const Curve& c = series[si].curve;
    const char* color = series_color(si);
    bool any_dev = false;
    for (double d : c.dev) any_dev = any_dev || d > 0.0;
    if (any_dev && c.steps.size() > 1) {
      std::string d = "M";
      for (const auto& p : build_band_points(c)) {
        d += detail::svg_coord(m.x(p[0])) + "," + detail::svg_coord(m.y(p[1]));
        d += " L";
      }
      d.resize(d.size() - 2);
      svg += "<path d=\"" + d + " Z\" fill=\"" + std::string(color) +
             "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    if (c.steps.size() == 1) {
      svg += "<circle cx=\"" + detail::svg_coord(m.x(c.steps[0])) + "\" cy=\"" +
             detail::svg_coord(m.y(c.mean[0])) + "\" r=\"3\" fill=\"" +
             std::string(color) + "\"/>\n";
    } else {
      std::string pts;
      for (size_t i = 0; i < c.steps.size(); ++i) {
        if (i) pts += ' ';
        pts += detail::svg_coord(m.x(c.steps[i])) + "," + detail::svg_coord(m.y(c.mean[i]));
      }
      svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" +
             std::string(color) + "\" stroke-width=\"2\"/>\n";
    }
  }

  // Frame, axis labels, title.
  svg += "<rect x=\"" + detail::svg_coord(m.px0) + "\" y=\"" + detail::svg_coord(m.py1) +
         "\" width=\"" + detail::svg_coord(m.px1 - m.px0) + "\" height=\"" +
         detail::svg_coord(m.py0 - m.py1) + "\" fill=\"none\" stroke=\"#333333\"/>\n";
  svg += "<text x=\"" + detail::svg_coord((m.px0 + m.px1) / 2) + "\" y=\"" +
         detail::svg_coord(H - 10) +
         "\" font-size=\"13\" fill=\"#222222\" text-anchor=\"middle\">" +
         detail::xml_escape(opt.x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + detail::svg_coord((m.py0 + m.py1) / 2) +
         "\" font-size=\"13\" fill=\"#222222\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         detail::svg_coord((m.py0 + m.py1) / 2) + ")\">" + detail::xml_escape(opt.y_label) +
         "</text>\n";
  if (!opt.title.empty())
    svg += "<text x=\"" + detail::svg_coord(W / 2) +
           "\" y=\"24\" font-size=\"16\" fill=\"#111111\" text-anchor=\"middle\">" +
           detail::xml_escape(opt.title) + "</text>\n";

  // Legend, top-left inside the plot area.
  for (size_t si = 0; si < series.size(); ++si) {
    const double ly = mt + 16 + 18 * double(si);
    svg += "<line x1=\"" + detail::svg_coord(ml + 10) + "\" y1=\"" + detail::svg_coord(ly) +
           "\" x2=\"" + detail::svg_coord(ml + 32) + "\" y2=\"" + detail::svg_coord(ly) +
           "\" stroke=\"" + std::string(series_color(si)) + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + detail::svg_coord(ml + 38) + "\" y=\"" + detail::svg_coord(ly) +
           "\" font-size=\"12\" fill=\"#222222\" dy=\"4\">" +
           detail::xml_escape(series[si].label) + "</text>\n";
  }

  svg += "</svg>\n";
  return svg;
}

inline void write_svg(const std::vector<PlotSeries>& series, const PlotOptions& opt,
                      const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("plot: cannot open " + path + " for writing");
  f << render_svg(series, opt);
  if (!f) throw std::runtime_error("plot: short write to " + path);
}

}  // namespace flare::harness
