#pragma once

// Minimal line charts written as SVG text. Coordinates are printed with a
// fixed number of decimals so identical inputs give identical bytes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace hpa {

struct Series {
  std::string label;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::vector<Series> series;
  bool unit_range = false;  // pin the y axis to [0, 1]
};

namespace detail {

inline std::string svg_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string svg_escape(const std::string& s) {
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

inline const char* svg_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
  return palette[i % 8];
}

}  // namespace detail

inline constexpr int kSvgWidth = 640;
inline constexpr int kPanelHeight = 240;

/// Panels stacked vertically, one polyline per series over x = 0..n-1.
inline void write_svg(std::ostream& out, const std::vector<Panel>& panels) {
  using detail::svg_fixed;
  const int height = kPanelHeight * static_cast<int>(std::max<std::size_t>(panels.size(), 1));
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kSvgWidth << ' ' << height
      << "\" width=\"" << kSvgWidth << "\" height=\"" << height << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << kSvgWidth << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  const double left = 60, right = kSvgWidth - 130, top_pad = 30, bottom_pad = 30;
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double y0 = static_cast<double>(p) * kPanelHeight;
    const double top = y0 + top_pad, bottom = y0 + kPanelHeight - bottom_pad;

    double lo = 0.0, hi = 1.0;
    std::size_t n = 0;
    if (!panel.unit_range) {
      bool any = false;
      for (const auto& s : panel.series)
        for (double v : s.y)
          if (std::isfinite(v)) {
            lo = any ? std::min(lo, v) : v;
            hi = any ? std::max(hi, v) : v;
            any = true;
          }
      if (!any) lo = 0.0, hi = 1.0;
      if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    }
    for (const auto& s : panel.series) n = std::max(n, s.y.size());

    out << "<text x=\"" << svg_fixed(left) << "\" y=\"" << svg_fixed(y0 + 20)
        << "\" font-family=\"sans-serif\" font-size=\"14\">" << detail::svg_escape(panel.title)
        << "</text>\n";
    out << "<polyline fill=\"none\" stroke=\"black\" points=\"" << svg_fixed(left) << ','
        << svg_fixed(top) << ' ' << svg_fixed(left) << ',' << svg_fixed(bottom) << ' '
        << svg_fixed(right) << ',' << svg_fixed(bottom) << "\"/>\n";
    for (double tick : {lo, hi}) {
      const double ty = bottom - (tick - lo) / (hi - lo) * (bottom - top);
      out << "<text x=\"" << svg_fixed(left - 5) << "\" y=\"" << svg_fixed(ty + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
          << svg_fixed(tick) << "</text>\n";
    }
    out << "<text x=\"" << svg_fixed(right) << "\" y=\"" << svg_fixed(bottom + 16)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">episode "
        << (n ? n - 1 : 0) << "</text>\n";

    for (std::size_t si = 0; si < panel.series.size(); ++si) {
      const Series& s = panel.series[si];
      out << "<polyline fill=\"none\" stroke=\"" << detail::svg_color(si)
          << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.y.size(); ++i) {
        const double x = n > 1 ? left + static_cast<double>(i) / static_cast<double>(n - 1) * (right - left)
                               : left;
        const double v = std::isfinite(s.y[i]) ? std::clamp(s.y[i], lo, hi) : lo;
        const double y = bottom - (v - lo) / (hi - lo) * (bottom - top);
        if (i) out << ' ';
        out << svg_fixed(x) << ',' << svg_fixed(y);
      }
      out << "\"/>\n";
      const double ly = top + 14.0 * static_cast<double>(si);
      out << "<text x=\"" << svg_fixed(right + 10) << "\" y=\"" << svg_fixed(ly + 4)
          << "\" fill=\"" << detail::svg_color(si)
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::svg_escape(s.label)
          << "</text>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace hpa
