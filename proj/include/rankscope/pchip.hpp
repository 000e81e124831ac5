#pragma once

// Shape-preserving piecewise cubic Hermite interpolation (Fritsch-Carlson
// slopes with the weighted harmonic mean for non-uniform spacing).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace rankscope {

struct Knot {
  double x;
  double y;
  bool operator==(const Knot&) const = default;
};

class MonotoneInterpolant {
 public:
  MonotoneInterpolant() = default;

  explicit MonotoneInterpolant(const std::vector<Knot>& knots) {
    if (knots.size() < 2) throw std::invalid_argument("fit_pchip: need at least 2 knots");
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (!std::isfinite(knots[i].x) || !std::isfinite(knots[i].y))
        throw std::invalid_argument("fit_pchip: non-finite knot");
      if (i > 0 && !(knots[i].x > knots[i - 1].x))
        throw std::invalid_argument("fit_pchip: knot x values must be strictly increasing (at index " +
                                    std::to_string(i) + ")");
      xs_.push_back(knots[i].x);
      ys_.push_back(knots[i].y);
    }
    compute_slopes();
  }

  const std::vector<double>& xs() const { return xs_; }
  const std::vector<double>& ys() const { return ys_; }
  const std::vector<double>& slopes() const { return slopes_; }
  double x_min() const { return xs_.front(); }
  double x_max() const { return xs_.back(); }

  /// Outside the knot span the end interval's cubic is extended.
  double operator()(double x) const {
    const std::size_t i = interval(x);
    const double h = xs_[i + 1] - xs_[i];
    const double t = (x - xs_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;
    return h00 * ys_[i] + h10 * h * slopes_[i] + h01 * ys_[i + 1] + h11 * h * slopes_[i + 1];
  }

  double derivative(double x) const {
    const std::size_t i = interval(x);
    const double h = xs_[i + 1] - xs_[i];
    const double t = (x - xs_[i]) / h;
    const double t2 = t * t;
    const double d00 = 6 * t2 - 6 * t;
    const double d10 = 3 * t2 - 4 * t + 1;
    const double d01 = -6 * t2 + 6 * t;
    const double d11 = 3 * t2 - 2 * t;
    return (d00 * ys_[i] + d01 * ys_[i + 1]) / h + d10 * slopes_[i] + d11 * slopes_[i + 1];
  }

 private:
  std::size_t interval(double x) const {
    auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    std::size_t i = it == xs_.begin() ? 0 : static_cast<std::size_t>(it - xs_.begin()) - 1;
    return std::min(i, xs_.size() - 2);
  }

  static double sign(double v) { return (v > 0) - (v < 0); }

  void compute_slopes() {
    const std::size_t n = xs_.size();
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = xs_[i + 1] - xs_[i];
      delta[i] = (ys_[i + 1] - ys_[i]) / h[i];
    }
    slopes_.assign(n, 0.0);
    if (n == 2) {
      slopes_[0] = slopes_[1] = delta[0];
      return;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (delta[i - 1] * delta[i] <= 0.0) continue;
      const double w1 = 2 * h[i] + h[i - 1];
      const double w2 = h[i] + 2 * h[i - 1];
      slopes_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
    slopes_[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
    slopes_[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }

  // One-sided three-point estimate, clamped to keep the end interval monotone.
  static double edge_slope(double h0, double h1, double d0, double d1) {
    double d = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (sign(d) != sign(d0)) {
      d = 0.0;
    } else if (sign(d0) != sign(d1) && std::abs(d) > std::abs(3 * d0)) {
      d = 3 * d0;
    }
    return d;
  }

  std::vector<double> xs_;
  std::vector<double> ys_;
  std::vector<double> slopes_;
};

inline MonotoneInterpolant fit_pchip(const std::vector<Knot>& knots) { return MonotoneInterpolant(knots); }

/// Pool-adjacent-violators: least-squares nondecreasing fit to the knot values.
inline std::vector<Knot> isotonic_knots(const std::vector<Knot>& knots) {
  struct Block {
    double sum;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (const auto& k : knots) {
    blocks.push_back({k.y, 1});
    while (blocks.size() > 1) {
      auto& b = blocks[blocks.size() - 1];
      auto& a = blocks[blocks.size() - 2];
      if (a.sum / a.count <= b.sum / b.count) break;
      a.sum += b.sum;
      a.count += b.count;
      blocks.pop_back();
    }
  }
  std::vector<Knot> out;
  std::size_t i = 0;
  for (const auto& b : blocks)
    for (std::size_t c = 0; c < b.count; ++c, ++i) out.push_back({knots[i].x, b.sum / b.count});
  return out;
}

}  // namespace rankscope
