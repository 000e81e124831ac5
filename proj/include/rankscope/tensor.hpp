#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors that
// require gradients record a backward rule on the output node; calling
// backward() on a scalar walks the recorded DAG in reverse topological order
// and accumulates gradients into every reachable leaf that requires them.
//
// Nodes are never mutated once they take part in a graph. Leaves may be
// updated in place (optimizer steps) through mutable_values().
//
// A single graph is not thread safe. Distinct graphs built from distinct
// leaves can be used from different threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rankscope {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  bool backward_done = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

inline bool& no_grad_flag() {
  thread_local bool flag = false;
  return flag;
}

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::no_grad_flag()) { detail::no_grad_flag() = true; }
  ~NoGradGuard() { detail::no_grad_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) { node_->shape = {1}; node_->values = {0.0}; }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError("tensor constructed with non-finite value");
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad = false) {
    std::vector<double> vals;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("ragged matrix literal");
      vals.insert(vals.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(vals), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }
  std::span<const double> values() const { return node_->values; }
  double operator[](std::size_t i) const { return node_->values[i]; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->backward_fn; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }
  void set_requires_grad(bool on) {
    if (!is_leaf()) throw std::logic_error("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
  }

  /// In-place access for leaves only (optimizer updates, initialization).
  std::span<double> mutable_values() {
    if (!is_leaf()) throw std::logic_error("in-place mutation of a non-leaf tensor");
    return node_->values;
  }

  /// Fresh leaf holding a copy of the values.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->values, requires_grad);
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  void backward();

  // Used by op implementations.
  static Tensor from_node(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
}

// Builds an output tensor and, when any input tracks gradients, records the
// backward rule on it.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  check_finite(values, op);
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->values = std::move(values);
  if (!no_grad_flag()) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      for (auto& t : inputs) n->inputs.push_back(t.node());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor::from_node(std::move(n));
}

inline void accumulate(Node& target, std::span<const double> delta) {
  if (!target.requires_grad) return;
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// C[m x n] (+)= A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] (+)= A[k x m]^T * B[k x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

inline void Tensor::backward() {
  if (size() != 1) throw DimensionError("backward() requires a scalar root, got " + shape_str(shape()));
  if (node_->backward_done) throw std::logic_error("backward() already called on this graph root");
  if (!node_->requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::unordered_set<detail::Node*> on_stack;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  on_stack.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (!child->requires_grad) continue;
      if (on_stack.count(child)) throw std::logic_error("cycle detected in autodiff graph");
      if (visited.insert(child).second) {
        on_stack.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      on_stack.erase(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  node_->backward_done = true;
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) detail::gemm_nt(self.grad.data(), nb.values.data(), na.grad_buffer().data(), m, n, k);
    if (nb.requires_grad) detail::gemm_tn(na.values.data(), self.grad.data(), nb.grad_buffer().data(), k, m, n);
  });
}

/// a[m x k] * b[n x k]^T. Used for x * W^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
  return detail::make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    // dA = dC * B ; dB = dC^T * A
    if (na.requires_grad) detail::gemm_nn(self.grad.data(), nb.values.data(), na.grad_buffer().data(), m, n, k);
    if (nb.requires_grad) detail::gemm_tn(self.grad.data(), na.values.data(), nb.grad_buffer().data(), n, m, k);
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto v = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return detail::make_result("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& g = na.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

/// Batched a[B x m x k] * b[B x k x n], or b^T per batch when transpose_b is set (b is [B x n x k]).
inline Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(nb * m * n, 0.0);
  for (std::size_t s = 0; s < nb; ++s) {
    const double* pa = a.values().data() + s * m * k;
    const double* pb = b.values().data() + s * k * n;
    double* pc = out.data() + s * m * n;
    if (transpose_b)
      detail::gemm_nt(pa, pb, pc, m, k, n);
    else
      detail::gemm_nn(pa, pb, pc, m, k, n);
  }
  return detail::make_result("bmm", {nb, m, n}, std::move(out), {a, b},
                             [nb, m, k, n, transpose_b](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nbn = *self.inputs[1];
    for (std::size_t s = 0; s < nb; ++s) {
      const double* g = self.grad.data() + s * m * n;
      const double* pa = na.values.data() + s * m * k;
      const double* pb = nbn.values.data() + s * k * n;
      if (na.requires_grad) {
        double* ga = na.grad_buffer().data() + s * m * k;
        if (transpose_b)
          detail::gemm_nn(g, pb, ga, m, n, k);
        else
          detail::gemm_nt(g, pb, ga, m, n, k);
      }
      if (nbn.requires_grad) {
        double* gb = nbn.grad_buffer().data() + s * k * n;
        if (transpose_b)
          detail::gemm_tn(g, pa, gb, n, m, k);
        else
          detail::gemm_tn(pa, g, gb, k, m, n);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(*self.inputs[0], self.grad);
    detail::accumulate(*self.inputs[1], self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(*self.inputs[0], self.grad);
    auto& nb = *self.inputs[1];
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.values[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.values[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::make_result("scale", a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

/// Adds a constant to every element.
inline Tensor shift(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
  return detail::make_result("shift", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    detail::accumulate(*self.inputs[0], self.grad);
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Adds bias[d] to every length-d row of x[..., d].
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t d = x.shape().back();
  if (bias.ndim() != 1 || bias.dim(0) != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % d];
  return detail::make_result("add_bias", x.shape(), std::move(out), {x, bias}, [d](detail::Node& self) {
    detail::accumulate(*self.inputs[0], self.grad);
    auto& nb = *self.inputs[1];
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline Tensor gelu(const Tensor& x) {
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kBeta = 0.044715;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kAlpha * (v + kBeta * v * v * v)));
  }
  return detail::make_result("gelu", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& nx = *self.inputs[0];
    auto& g = nx.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = nx.values[i];
      const double u = kAlpha * (v + kBeta * v * v * v);
      const double t = std::tanh(u);
      const double du = kAlpha * (1.0 + 3.0 * kBeta * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and shape

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make_result("sum", {1}, {s}, {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Sum over one axis; the axis is removed (a 1-D input reduces to shape [1]).
inline Tensor sum_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.ndim()) throw DimensionError("sum_axis: axis out of range for " + shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
  return detail::make_result("sum_axis", out_shape, std::move(out), {x}, [outer, len, inner](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += self.grad[o * inner + i];
  });
}

inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.ndim()) throw DimensionError("mean_axis: axis out of range for " + shape_str(x.shape()));
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

/// Mean over several axes, applied from the highest axis down.
inline Tensor mean(const Tensor& x, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end(), std::greater<>());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  Tensor out = x;
  for (auto a : axes) out = mean_axis(out, a);
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    detail::accumulate(*self.inputs[0], self.grad);
  });
}

/// [B*S x H*dh] -> [B*H x S x dh]
inline Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads) {
  if (x.ndim() != 2 || x.dim(0) != batch * seq || x.dim(1) % heads != 0) {
    throw DimensionError("split_heads: bad input " + shape_str(x.shape()));
  }
  const std::size_t dh = x.dim(1) / heads, d = x.dim(1);
  std::vector<double> out(x.size());
  auto idx_out = [=](std::size_t b, std::size_t h, std::size_t s, std::size_t j) {
    return ((b * heads + h) * seq + s) * dh + j;
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dh; ++j) out[idx_out(b, h, s, j)] = x[(b * seq + s) * d + h * dh + j];
  return detail::make_result("split_heads", {batch * heads, seq, dh}, std::move(out), {x},
                             [=](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < dh; ++j) g[(b * seq + s) * d + h * dh + j] += self.grad[idx_out(b, h, s, j)];
  });
}

/// [B*H x S x dh] -> [B*S x H*dh]
inline Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  if (x.ndim() != 3 || x.dim(0) != batch * heads) throw DimensionError("merge_heads: bad input " + shape_str(x.shape()));
  const std::size_t seq = x.dim(1), dh = x.dim(2), d = heads * dh;
  std::vector<double> out(x.size());
  auto idx_in = [=](std::size_t b, std::size_t h, std::size_t s, std::size_t j) {
    return ((b * heads + h) * seq + s) * dh + j;
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dh; ++j) out[(b * seq + s) * d + h * dh + j] = x[idx_in(b, h, s, j)];
  return detail::make_result("merge_heads", {batch * seq, d}, std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < dh; ++j) g[idx_in(b, h, s, j)] += self.grad[(b * seq + s) * d + h * dh + j];
  });
}

// ---------------------------------------------------------------------------
// Normalization and probabilities (all along the last axis)

inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.ndim() != 1 || beta.ndim() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layernorm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match input " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layernorm: eps must be positive");
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
    }
  }
  return detail::make_result("layernorm", x.shape(), std::move(out), {x, gamma, beta},
                             [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
    auto& nx = *self.inputs[0];
    auto& ng = *self.inputs[1];
    auto& nbeta = *self.inputs[2];
    const double* dy = self.grad.data();
    if (ng.requires_grad) {
      auto& g = ng.grad_buffer();
      for (std::size_t i = 0; i < rows * d; ++i) g[i % d] += dy[i] * xhat[i];
    }
    if (nbeta.requires_grad) {
      auto& g = nbeta.grad_buffer();
      for (std::size_t i = 0; i < rows * d; ++i) g[i % d] += dy[i];
    }
    if (nx.requires_grad) {
      auto& g = nx.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = dy[r * d + j] * ng.values[j];
          m1 += dxh;
          m2 += dxh * xhat[r * d + j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = dy[r * d + j] * ng.values[j];
          g[r * d + j] += inv_std[r] * (dxh - m1 - xhat[r * d + j] * m2);
        }
      }
    }
  });
}

/// Softmax along the last axis, computed with max subtraction.
inline Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[r * n + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= z;
  }
  auto saved = out;
  return detail::make_result("softmax", x.shape(), std::move(out), {x},
                             [n, rows, y = std::move(saved)](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[r * n + j] * (self.grad[r * n + j] - dot);
    }
  });
}

/// Softmax along a given axis. Only the last axis is supported.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis + 1 != x.ndim()) throw DimensionError("softmax: only the last axis is supported");
  return softmax(x);
}

inline Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size()), probs(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const double lz = std::log(z) + mx;
    for (std::size_t j = 0; j < n; ++j) {
      out[r * n + j] = xr[j] - lz;
      probs[r * n + j] = std::exp(out[r * n + j]);
    }
  }
  return detail::make_result("log_softmax", x.shape(), std::move(out), {x},
                             [n, rows, p = std::move(probs)](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += self.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r * n + j] - p[r * n + j] * s;
    }
  });
}

/// out[i] = x[i, index[i]] for x[N x C].
inline Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  if (x.ndim() != 2 || x.dim(0) != index.size()) {
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= c) throw DimensionError("pick: index out of range");
    out[i] = x[i * c + idx[i]];
  }
  const std::size_t n = idx.size();
  return detail::make_result("pick", {n}, std::move(out), {x}, [c, idx = std::move(idx)](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * c + idx[i]] += self.grad[i];
  });
}

/// Row-wise cosine similarity of a[N x D] and b[N x D]:
/// <a_i, b_i> / (|a_i| |b_i| + eps). A zero row gives 0.
inline Tensor cosine_rows(const Tensor& a, const Tensor& b, double eps = 1e-12) {
  detail::require_same_shape(a, b, "cosine_rows");
  if (a.ndim() != 2) throw DimensionError("cosine_rows: expected [N x D], got " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), d = a.dim(1);
  std::vector<double> out(rows), dots(rows), na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = a[r * d + j], y = b[r * d + j];
      dot += x * y;
      sa += x * x;
      sb += y * y;
    }
    dots[r] = dot;
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    out[r] = dot / (na[r] * nb[r] + eps);
  }
  return detail::make_result("cosine_rows", {rows}, std::move(out), {a, b},
                             [rows, d, eps, dots = std::move(dots), na = std::move(na), nb = std::move(nb)](
                                 detail::Node& self) {
    auto& nda = *self.inputs[0];
    auto& ndb = *self.inputs[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double den = na[r] * nb[r] + eps;
      const double g = self.grad[r];
      // d/da = b/den - dot * |b| * (a/|a|) / den^2, and symmetrically for b.
      if (nda.requires_grad) {
        auto& ga = nda.grad_buffer();
        const double coef = na[r] > 0.0 ? dots[r] * nb[r] / (na[r] * den * den) : 0.0;
        for (std::size_t j = 0; j < d; ++j)
          ga[r * d + j] += g * (ndb.values[r * d + j] / den - coef * nda.values[r * d + j]);
      }
      if (ndb.requires_grad) {
        auto& gb = ndb.grad_buffer();
        const double coef = nb[r] > 0.0 ? dots[r] * na[r] / (nb[r] * den * den) : 0.0;
        for (std::size_t j = 0; j < d; ++j)
          gb[r * d + j] += g * (nda.values[r * d + j] / den - coef * ndb.values[r * d + j]);
      }
    }
  });
}

}  // namespace rankscope
