#pragma once

// Accuracy-vs-rank readout: teacher-normalized effective-rank region and the
// secant-distance knee of the smoothed curve.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "rankscope/pchip.hpp"

namespace rankscope {

inline constexpr std::size_t kDenseGridSize = 2001;

/// Uniform samples over the knot span merged with the knots themselves.
inline std::vector<double> dense_grid(const MonotoneInterpolant& interp, std::size_t samples = kDenseGridSize) {
  if (samples < 2) throw std::invalid_argument("dense_grid: need at least 2 samples");
  const double a = interp.x_min(), b = interp.x_max();
  std::vector<double> xs;
  xs.reserve(samples + interp.xs().size());
  for (std::size_t i = 0; i < samples; ++i)
    xs.push_back(i + 1 == samples ? b : a + (b - a) * static_cast<double>(i) / static_cast<double>(samples - 1));
  xs.insert(xs.end(), interp.xs().begin(), interp.xs().end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  return xs;
}

struct Thresholds {
  double lo = 0.85;
  double hi = 0.95;
};

enum class RegionStatus {
  Found,
  RightOpen,  // reaches the lower threshold but never the upper one
  NoRegion,
};

struct EffectiveRegion {
  RegionStatus status = RegionStatus::NoRegion;
  double lo = 0.0;  // valid unless NoRegion
  double hi = 0.0;  // equals the right end of the span when RightOpen
  bool found() const { return status != RegionStatus::NoRegion; }
};

namespace detail {

// Smallest grid point where f >= level, refined to `tol` by bisection inside
// the preceding grid interval. Returns false if the level is never reached.
template <class F>
bool first_crossing(const std::vector<double>& xs, F&& f, double level, double tol, double& out) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (f(xs[i]) < level) continue;
    if (i == 0) {
      out = xs[0];
      return true;
    }
    double a = xs[i - 1], b = xs[i];
    while (b - a > tol) {
      const double m = 0.5 * (a + b);
      (f(m) >= level ? b : a) = m;
    }
    out = b;
    return true;
  }
  return false;
}

}  // namespace detail

inline EffectiveRegion effective_region(const MonotoneInterpolant& interp, double teacher_accuracy,
                                        Thresholds th = {}) {
  if (!(teacher_accuracy > 0.0)) throw std::invalid_argument("effective_region: teacher accuracy must be positive");
  if (!(th.lo > 0.0) || th.hi < th.lo) throw std::invalid_argument("effective_region: need 0 < lo <= hi");
  const auto xs = dense_grid(interp);
  auto g = [&](double r) { return interp(r) / teacher_accuracy; };
  constexpr double kTol = 1e-7;
  EffectiveRegion region;
  if (!detail::first_crossing(xs, g, th.lo, kTol, region.lo)) return region;
  if (detail::first_crossing(xs, g, th.hi, kTol, region.hi)) {
    region.status = RegionStatus::Found;
  } else {
    region.status = RegionStatus::RightOpen;
    region.hi = interp.x_max();
  }
  return region;
}

enum class KneeStatus { Found, DegenerateCurve };

struct Knee {
  KneeStatus status = KneeStatus::DegenerateCurve;
  double rank = 0.0;
  double distance = 0.0;  // in normalized [0,1] x [0,1] coordinates
  bool found() const { return status == KneeStatus::Found; }
};

/// Point of maximum perpendicular distance to the endpoint secant, given
/// curve samples. Both axes are rescaled to [0, 1] (x over the sample span,
/// y over [y_min, y_max]) before measuring. Ties go to the smallest x.
inline Knee knee_of_samples(const std::vector<double>& xs, const std::vector<double>& ys, double y_min,
                            double y_max) {
  if (xs.size() < 2 || xs.size() != ys.size()) throw std::invalid_argument("knee: need >= 2 matching samples");
  const double x0 = xs.front(), x1 = xs.back();
  const double yspan = y_max - y_min;
  if (!(x1 > x0) || !(yspan > 1e-15 * std::max(1.0, std::abs(y_max)))) return {};
  auto nx = [&](double x) { return (x - x0) / (x1 - x0); };
  auto ny = [&](double y) { return (y - y_min) / yspan; };
  const double ax = 0.0, ay = ny(ys.front());
  const double bx = 1.0, by = ny(ys.back());
  const double len = std::hypot(bx - ax, by - ay);
  Knee best;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double px = nx(xs[i]), py = ny(ys[i]);
    const double dist = std::abs((bx - ax) * (ay - py) - (ax - px) * (by - ay)) / len;
    if (dist > best.distance) {
      best.distance = dist;
      best.rank = xs[i];
    }
  }
  if (best.distance <= 1e-12) return {};
  best.status = KneeStatus::Found;
  return best;
}

inline Knee effective_knee(const MonotoneInterpolant& interp) {
  const auto xs = dense_grid(interp);
  std::vector<double> ys(xs.size());
  std::transform(xs.begin(), xs.end(), ys.begin(), [&](double x) { return interp(x); });
  const auto [lo, hi] = std::minmax_element(interp.ys().begin(), interp.ys().end());
  return knee_of_samples(xs, ys, *lo, *hi);
}

struct RankCurveAnalysis {
  std::vector<Knot> knots;  // as fitted (after the optional isotonic pass)
  MonotoneInterpolant interpolant;
  double teacher_accuracy = 0.0;
  Thresholds thresholds;
  EffectiveRegion region;
  Knee knee;
  std::vector<std::pair<double, double>> normalized_curve;  // (rank, accuracy / teacher)
};

struct AnalyzeOptions {
  Thresholds thresholds;
  bool isotonic = false;  // pool-adjacent-violators pre-pass on the knots
};

inline RankCurveAnalysis analyze(const std::vector<Knot>& knots, double teacher_accuracy,
                                 const AnalyzeOptions& opt = {}) {
  RankCurveAnalysis out;
  out.knots = opt.isotonic ? isotonic_knots(knots) : knots;
  out.interpolant = fit_pchip(out.knots);
  out.teacher_accuracy = teacher_accuracy;
  out.thresholds = opt.thresholds;
  out.region = effective_region(out.interpolant, teacher_accuracy, opt.thresholds);
  out.knee = effective_knee(out.interpolant);
  for (double x : dense_grid(out.interpolant)) out.normalized_curve.emplace_back(x, out.interpolant(x) / teacher_accuracy);
  return out;
}

}  // namespace rankscope
