#pragma once

// Small dense matrices and a one-sided Jacobi SVD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankscope/tensor.hpp"

namespace rankscope {

/// Row-major dense matrix without autodiff.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw DimensionError("Matrix: value count does not match shape");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix from_tensor(const Tensor& t) {
    if (t.ndim() != 2) throw DimensionError("Matrix::from_tensor: expected 2-D tensor, got " + shape_str(t.shape()));
    return Matrix(t.dim(0), t.dim(1), std::vector<double>(t.values().begin(), t.values().end()));
  }
  Tensor to_tensor(bool requires_grad = false) const { return Tensor({rows, cols}, data, requires_grad); }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  Matrix transposed() const {
    Matrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw DimensionError("Matrix product: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  detail::gemm_nn(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
  return c;
}

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

inline double frobenius_distance(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw DimensionError("frobenius_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return std::sqrt(s);
}

/// Thin SVD: M[m x n] = U[m x k] diag(sigma) V[n x k]^T with k = min(m, n),
/// sigma sorted nonincreasing.
struct SvdResult {
  Matrix u;
  std::vector<double> sigma;
  Matrix v;

  Matrix reconstruct(std::size_t rank) const {
    rank = std::min(rank, sigma.size());
    Matrix out(u.rows, v.rows);
    for (std::size_t i = 0; i < u.rows; ++i)
      for (std::size_t j = 0; j < v.rows; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < rank; ++k) s += u(i, k) * sigma[k] * v(j, k);
        out(i, j) = s;
      }
    return out;
  }
};

struct SvdOptions {
  double rotation_tolerance = 1e-12;
  int max_sweeps = 100;
};

namespace detail {

// Completes columns of q flagged in `missing` to an orthonormal set.
inline void complete_orthonormal(Matrix& q, const std::vector<bool>& missing) {
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < q.cols; ++j) {
    if (!missing[j]) continue;
    for (; candidate < q.rows; ++candidate) {
      std::vector<double> v(q.rows, 0.0);
      v[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < q.cols; ++c) {
          if (c == j || (missing[c] && c > j)) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < q.rows; ++i) dot += q(i, c) * v[i];
          for (std::size_t i = 0; i < q.rows; ++i) v[i] -= dot * q(i, c);
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (std::size_t i = 0; i < q.rows; ++i) q(i, j) = v[i] / norm;
        ++candidate;
        break;
      }
    }
  }
}

// One-sided Jacobi on a tall matrix (rows >= cols).
inline SvdResult jacobi_svd_tall(const Matrix& m, const SvdOptions& opt) {
  const std::size_t rows = m.rows, n = m.cols;
  // Column-major working copy so column rotations touch contiguous memory.
  std::vector<double> a(rows * n);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n; ++j) a[j * rows + i] = m(i, j);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  bool converged = n < 2;
  for (int sweep = 0; sweep < opt.max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* ap = a.data() + p * rows;
        double* aq = a.data() + q * rows;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += ap[i] * ap[i];
          beta += aq[i] * aq[i];
          gamma += ap[i] * aq[i];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= opt.rotation_tolerance * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double x = ap[i], y = aq[i];
          ap[i] = c * x - s * y;
          aq[i] = s * x + c * y;
        }
        double* vp = v.data() + p * n;
        double* vq = v.data() + q * n;
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
  }
  if (!converged) {
    throw NumericError("svd_small: Jacobi iteration did not converge within " + std::to_string(opt.max_sweeps) +
                       " sweeps");
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += a[j * rows + i] * a[j * rows + i];
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult out{Matrix(rows, n), std::vector<double>(n), Matrix(n, n)};
  const double cutoff = (norms.empty() ? 0.0 : norms[order[0]]) * 1e-14;
  std::vector<bool> missing(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    const double sig = norms[j];
    out.sigma[k] = sig;
    if (sig > cutoff && sig > 0.0) {
      for (std::size_t i = 0; i < rows; ++i) out.u(i, k) = a[j * rows + i] / sig;
    } else {
      missing[k] = true;
    }
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v[j * n + i];
  }
  if (std::any_of(missing.begin(), missing.end(), [](bool b) { return b; })) complete_orthonormal(out.u, missing);
  return out;
}

}  // namespace detail

/// Singular value decomposition of a small dense matrix by one-sided Jacobi
/// rotations. Throws NumericError on non-finite input or non-convergence.
inline SvdResult svd_small(const Matrix& m, const SvdOptions& opt = {}) {
  if (m.rows == 0 || m.cols == 0) throw DimensionError("svd_small: empty matrix");
  for (double x : m.data) {
    if (!std::isfinite(x)) throw NumericError("svd_small: non-finite matrix entry");
  }
  if (m.rows >= m.cols) return detail::jacobi_svd_tall(m, opt);
  SvdResult t = detail::jacobi_svd_tall(m.transposed(), opt);
  return SvdResult{std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

/// exp of the Shannon entropy (natural log) of the normalized singular values.
inline double entropy_erank(const std::vector<double>& sigma) {
  double total = 0.0;
  for (double s : sigma) {
    if (s < 0.0 || !std::isfinite(s)) throw std::domain_error("entropy_erank: invalid singular value");
    total += s;
  }
  if (!(total > 0.0)) throw std::domain_error("entropy_erank: matrix has no nonzero singular value");
  double h = 0.0;
  for (double s : sigma) {
    const double p = s / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

inline double entropy_erank(const Matrix& m) { return entropy_erank(svd_small(m).sigma); }

}  // namespace rankscope
