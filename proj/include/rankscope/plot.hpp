#pragma once

// Static SVG figure of a rank curve: normalized accuracy vs rank, the knots,
// the threshold lines, the effective-rank band and the knee marker.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "rankscope/curve.hpp"

namespace rankscope {

namespace detail {
inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
}  // namespace detail

inline void write_rank_plot(std::ostream& os, const RankCurveAnalysis& a) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 30, B = 60;
  const double x0 = a.interpolant.x_min(), x1 = a.interpolant.x_max();
  double y0 = std::min(0.0, a.thresholds.lo), y1 = std::max(1.0, a.thresholds.hi);
  for (const auto& [r, g] : a.normalized_curve) {
    y0 = std::min(y0, g);
    y1 = std::max(y1, g);
  }
  y1 += 0.05 * (y1 - y0);
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  using detail::fmt2;

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  if (a.region.found()) {
    os << "<rect x=\"" << fmt2(px(a.region.lo)) << "\" y=\"" << fmt2(T) << "\" width=\""
       << fmt2(px(a.region.hi) - px(a.region.lo)) << "\" height=\"" << fmt2(H - T - B)
       << "\" fill=\"#4c9be8\" fill-opacity=\"0.18\"/>\n";
  }
  // axes
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    os << "<text x=\"" << fmt2(px(xv)) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << fmt2(xv)
       << "</text>\n";
    os << "<text x=\"" << L - 8 << "\" y=\"" << fmt2(py(yv) + 4) << "\" text-anchor=\"end\">" << fmt2(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">rank</text>\n";
  os << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << (T + H - B) / 2 << ")\">accuracy / teacher</text>\n";
  for (double th : {a.thresholds.lo, a.thresholds.hi}) {
    os << "<line x1=\"" << L << "\" y1=\"" << fmt2(py(th)) << "\" x2=\"" << W - R << "\" y2=\"" << fmt2(py(th))
       << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  os << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < a.normalized_curve.size(); ++i) {
    const auto& [r, g] = a.normalized_curve[i];
    os << (i ? " " : "") << fmt2(px(r)) << ',' << fmt2(py(g));
  }
  os << "\"/>\n";
  for (const auto& k : a.knots) {
    os << "<circle cx=\"" << fmt2(px(k.x)) << "\" cy=\"" << fmt2(py(k.y / a.teacher_accuracy))
       << "\" r=\"3.5\" fill=\"#1f5fa8\"/>\n";
  }
  if (a.knee.found()) {
    const double g = a.interpolant(a.knee.rank) / a.teacher_accuracy;
    os << "<line x1=\"" << fmt2(px(a.knee.rank)) << "\" y1=\"" << fmt2(T) << "\" x2=\"" << fmt2(px(a.knee.rank))
       << "\" y2=\"" << H - B << "\" stroke=\"#d62728\" stroke-dasharray=\"2 2\"/>\n";
    os << "<circle cx=\"" << fmt2(px(a.knee.rank)) << "\" cy=\"" << fmt2(py(g))
       << "\" r=\"5\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt2(px(a.knee.rank) + 6) << "\" y=\"" << T + 12 << "\" fill=\"#d62728\">knee "
       << fmt2(a.knee.rank) << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace rankscope
