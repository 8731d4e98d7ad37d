#pragma once

// Standalone SVG plots. Every file carries its data as CSV inside <metadata>
// so a figure can be re-plotted without the run that produced it.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stealthbench/metrics.hpp"

namespace stealthbench::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
  bool zero_line = false;
};

namespace detail {

inline constexpr int kWidth = 640;
inline constexpr int kHeight = 420;
inline constexpr int kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;
inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};

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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

inline std::string line_plot(const std::vector<Series>& series, const Axes& ax) {
  using namespace detail;
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto tx = [&](double x) {
    double t = ax.log_x ? (std::log10(x) - std::log10(ax.x_min)) / (std::log10(ax.x_max) - std::log10(ax.x_min))
                        : (x - ax.x_min) / (ax.x_max - ax.x_min);
    return kLeft + std::clamp(t, 0.0, 1.0) * pw;
  };
  auto ty = [&](double y) {
    const double t = (y - ax.y_min) / (ax.y_max - ax.y_min);
    return kTop + (1.0 - std::clamp(t, 0.0, 1.0)) * ph;
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<metadata><![CDATA[\nseries,x,y\n";
  std::ostringstream data;
  data.precision(17);
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) data << s.name << ',' << s.x[i] << ',' << s.y[i] << '\n';
  }
  os << data.str() << "]]></metadata>\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(ax.title)
     << "</text>\n";

  // grid and ticks
  std::vector<double> xt;
  if (ax.log_x) {
    for (double d = std::pow(10.0, std::ceil(std::log10(ax.x_min))); d <= ax.x_max * 1.0000001; d *= 10) xt.push_back(d);
  } else {
    for (int k = 0; k <= 5; ++k) xt.push_back(ax.x_min + (ax.x_max - ax.x_min) * k / 5.0);
  }
  for (double v : xt) {
    os << "<line x1=\"" << num(tx(v)) << "\" y1=\"" << kTop << "\" x2=\"" << num(tx(v)) << "\" y2=\""
       << kTop + ph << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << num(tx(v)) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << tick(v)
       << "</text>\n";
  }
  for (int k = 0; k <= 5; ++k) {
    const double v = ax.y_min + (ax.y_max - ax.y_min) * k / 5.0;
    os << "<line x1=\"" << kLeft << "\" y1=\"" << num(ty(v)) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << num(ty(v))
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(ty(v) + 4) << "\" text-anchor=\"end\">" << tick(v)
       << "</text>\n";
  }
  if (ax.zero_line && ax.y_min < 0 && ax.y_max > 0) {
    os << "<line x1=\"" << kLeft << "\" y1=\"" << num(ty(0)) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << num(ty(0))
       << "\" stroke=\"#555\" stroke-dasharray=\"4 3\"/>\n";
  }
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 14 << "\" text-anchor=\"middle\">"
     << escape(ax.x_label) << "</text>\n";
  os << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(ax.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (ax.log_x && s.x[i] <= 0)) continue;
      os << num(tx(s.x[i])) << ',' << num(ty(s.y[i])) << ' ';
    }
    os << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * k;
    os << "<line x1=\"" << kLeft + pw + 10 << "\" y1=\"" << num(ly) << "\" x2=\"" << kLeft + pw + 30 << "\" y2=\""
       << num(ly) << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + pw + 34 << "\" y=\"" << num(ly + 4) << "\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ROC on a log-FPR axis: the low-FPR region is where operating points live.
// Points at FPR = 0 are drawn at the left edge.
inline std::string roc_svg(const std::vector<std::pair<std::string, metrics::RocCurve>>& curves,
                           const std::string& title) {
  std::vector<Series> series;
  double floor = 1.0;
  for (const auto& [name, c] : curves) {
    for (double f : c.fpr) {
      if (f > 0) floor = std::min(floor, f);
    }
  }
  floor = std::min(1e-3, std::pow(10.0, std::floor(std::log10(floor))));
  for (const auto& [name, c] : curves) {
    Series s{name, {}, {}};
    for (std::size_t i = 0; i < c.fpr.size(); ++i) {
      s.x.push_back(std::max(c.fpr[i], floor));
      s.y.push_back(c.tpr[i]);
    }
    series.push_back(std::move(s));
  }
  Axes ax;
  ax.title = title;
  ax.x_label = "false positive rate (log)";
  ax.y_label = "true positive rate";
  ax.log_x = true;
  ax.x_min = floor;
  ax.x_max = 1.0;
  return line_plot(series, ax);
}

// Log-ratio profiles over frequency in cycles/pixel, with a zero reference.
inline std::string profile_svg(const std::vector<Series>& series, const std::string& title,
                               const std::string& y_label) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = -1, hi = 1;
  const double pad = std::max(0.05, 0.05 * (hi - lo));
  Axes ax;
  ax.title = title;
  ax.x_label = "frequency (cycles/pixel)";
  ax.y_label = y_label;
  ax.x_min = 0.0;
  ax.x_max = 0.5;
  ax.y_min = std::floor((lo - pad) * 10) / 10;
  ax.y_max = std::ceil((hi + pad) * 10) / 10;
  ax.zero_line = true;
  return line_plot(series, ax);
}

}  // namespace stealthbench::plot
