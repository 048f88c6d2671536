#pragma once

// Small static SVG line plots: axes with ticks, polylines, markers, a legend
// and optional reference lines. Enough for the figures the CLI writes.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "anonqcd/errors.hpp"

namespace cli {

struct Series {
  std::string label;
  std::vector<double> x, y;
  bool markers = false;
};

struct RefLine {
  bool vertical = true;
  double at = 0.0;
  std::string label;
};

struct Plot {
  std::string title, subtitle, xlabel, ylabel;
  std::vector<Series> series;
  std::vector<RefLine> lines;
  bool log_y = false;  // log10 scale on y
};

namespace svg_detail {

inline const char* colour(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return palette[i % 6];
}

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<')
      o += "&lt;";
    else if (c == '>')
      o += "&gt;";
    else if (c == '&')
      o += "&amp;";
    else
      o += c;
  }
  return o;
}

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Roughly five round tick values spanning [lo, hi].
inline std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  return t;
}

}  // namespace svg_detail

inline void write_svg(const std::filesystem::path& path, const Plot& plot) {
  using namespace svg_detail;
  const double W = 720, H = 480, L = 80, R = 170, T = 60, B = 60;
  auto ty = [&](double v) { return plot.log_y ? std::log10(v) : v; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : plot.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (plot.log_y && !(s.y[i] > 0))) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  for (const auto& l : plot.lines) {
    if (l.vertical) {
      x0 = std::min(x0, l.at);
      x1 = std::max(x1, l.at);
    } else {
      y0 = std::min(y0, ty(l.at));
      y1 = std::max(y1, ty(l.at));
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::ofstream out(path);
  if (!out) throw anonqcd::InvalidArgument("cannot open `" + path.string() + "` for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(plot.title)
      << "</text>\n";
  if (!plot.subtitle.empty())
    out << "<text x=\"" << W / 2 << "\" y=\"40\" text-anchor=\"middle\" fill=\"#555\">" << esc(plot.subtitle)
        << "</text>\n";

  // Axes, grid and ticks.
  out << "<g stroke=\"#ddd\">\n";
  for (double t : ticks(x0, x1)) out << "<line x1=\"" << px(t) << "\" y1=\"" << T << "\" x2=\"" << px(t) << "\" y2=\"" << H - B << "\"/>\n";
  for (double t : ticks(y0, y1)) out << "<line x1=\"" << L << "\" y1=\"" << py(t) << "\" x2=\"" << W - R << "\" y2=\"" << py(t) << "\"/>\n";
  out << "</g>\n";
  out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(x0, x1))
    out << "<text x=\"" << px(t) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << num(t) << "</text>\n";
  for (double t : ticks(y0, y1))
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(t) + 4 << "\" text-anchor=\"end\">"
        << (plot.log_y ? num(std::pow(10.0, t)) : num(t)) << "</text>\n";
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << esc(plot.xlabel)
      << "</text>\n";
  out << "<text transform=\"translate(20," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << esc(plot.ylabel) << "</text>\n";

  for (const auto& l : plot.lines) {
    if (l.vertical)
      out << "<line x1=\"" << px(l.at) << "\" y1=\"" << T << "\" x2=\"" << px(l.at) << "\" y2=\"" << H - B;
    else
      out << "<line x1=\"" << L << "\" y1=\"" << py(ty(l.at)) << "\" x2=\"" << W - R << "\" y2=\"" << py(ty(l.at));
    out << "\" stroke=\"#777\" stroke-dasharray=\"5,4\"/>\n";
  }

  for (std::size_t i = 0; i < plot.series.size(); ++i) {
    const auto& s = plot.series[i];
    out << "<polyline fill=\"none\" stroke=\"" << colour(i) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < s.x.size(); ++j) {
      if (!std::isfinite(s.x[j]) || !std::isfinite(s.y[j]) || (plot.log_y && !(s.y[j] > 0))) continue;
      out << px(s.x[j]) << ',' << py(ty(s.y[j])) << ' ';
    }
    out << "\"/>\n";
    if (s.markers)
      for (std::size_t j = 0; j < s.x.size(); ++j) {
        if (!std::isfinite(s.x[j]) || !std::isfinite(s.y[j]) || (plot.log_y && !(s.y[j] > 0))) continue;
        out << "<circle cx=\"" << px(s.x[j]) << "\" cy=\"" << py(ty(s.y[j])) << "\" r=\"3\" fill=\"" << colour(i)
            << "\"/>\n";
      }
    const double ly = T + 14 + 18.0 * static_cast<double>(i);
    out << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 36 << "\" y2=\"" << ly
        << "\" stroke=\"" << colour(i) << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - R + 42 << "\" y=\"" << ly + 4 << "\">" << esc(s.label) << "</text>\n";
  }
  out << "</svg>\n";
  out.close();
  if (!out) throw anonqcd::InvalidArgument("failed writing `" + path.string() + "`");
}

}  // namespace cli
