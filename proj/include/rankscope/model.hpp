#pragma once

// Pre-norm transformer encoders: a full-rank teacher and rank-r factorized
// students that share its block structure.
//
// Input samples are pre-tokenized sequences [batch x seq_len x d_model].
// Each block is LayerNorm -> multi-head self-attention -> residual, then
// LayerNorm -> MLP (GELU) -> residual. A final LayerNorm, mean pooling over
// tokens and a linear head produce the logits.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "rankscope/random.hpp"
#include "rankscope/svd.hpp"
#include "rankscope/tensor.hpp"

namespace rankscope {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EncoderConfig {
  std::size_t depth = 2;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t d_ff = 64;
  std::size_t n_classes = 4;
  std::size_t seq_len = 4;
  double layernorm_eps = 1e-5;

  void validate() const {
    if (depth == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || n_classes == 0 || seq_len == 0)
      throw ConfigError("encoder config: all sizes must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("encoder config: d_model (" + std::to_string(d_model) + ") is not divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
    if (!(layernorm_eps > 0.0)) throw ConfigError("encoder config: layernorm_eps must be positive");
  }

  /// Largest rank every factorized layer admits.
  std::size_t max_rank() const { return std::min(d_model, d_ff); }

  bool operator==(const EncoderConfig&) const = default;
};

struct FullLinear {
  Tensor weight;  // [d_out x d_in]
  Tensor bias;    // [d_out]
};

/// W ~ A * B with A [d_out x r] and B [r x d_in]. The product is never formed
/// in the forward pass.
struct FactorizedLinear {
  Tensor a;
  Tensor b;
  Tensor bias;
  std::size_t rank() const { return a.dim(1); }
};

class Linear {
 public:
  Linear() = default;
  Linear(FullLinear f) : impl_(std::move(f)) {}
  Linear(FactorizedLinear f) : impl_(std::move(f)) {
    const auto& fl = std::get<FactorizedLinear>(impl_);
    if (fl.a.ndim() != 2 || fl.b.ndim() != 2 || fl.a.dim(1) != fl.b.dim(0))
      throw DimensionError("FactorizedLinear: A " + shape_str(fl.a.shape()) + " and B " + shape_str(fl.b.shape()) +
                           " do not chain");
    if (fl.rank() > std::min(fl.a.dim(0), fl.b.dim(1)))
      throw DimensionError("FactorizedLinear: rank exceeds min(d_in, d_out)");
  }

  bool factorized() const { return std::holds_alternative<FactorizedLinear>(impl_); }
  const FullLinear& full() const { return std::get<FullLinear>(impl_); }
  const FactorizedLinear& factors() const { return std::get<FactorizedLinear>(impl_); }

  std::size_t d_in() const { return factorized() ? factors().b.dim(1) : full().weight.dim(1); }
  std::size_t d_out() const { return factorized() ? factors().a.dim(0) : full().weight.dim(0); }
  const Tensor& bias() const { return factorized() ? factors().bias : full().bias; }

  /// x [N x d_in] -> [N x d_out]
  Tensor forward(const Tensor& x) const {
    if (factorized()) {
      const auto& f = factors();
      return add_bias(matmul_nt(matmul_nt(x, f.b), f.a), f.bias);
    }
    return add_bias(matmul_nt(x, full().weight), full().bias);
  }

  /// The dense weight this layer applies (A*B when factorized).
  Matrix effective_weight() const {
    if (factorized()) return Matrix::from_tensor(factors().a) * Matrix::from_tensor(factors().b);
    return Matrix::from_tensor(full().weight);
  }

  std::size_t weight_count() const {
    return factorized() ? factors().a.size() + factors().b.size() : full().weight.size();
  }

  template <class Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    if (factorized()) {
      auto& f = std::get<FactorizedLinear>(impl_);
      fn(prefix + ".a", f.a);
      fn(prefix + ".b", f.b);
      fn(prefix + ".bias", f.bias);
    } else {
      auto& f = std::get<FullLinear>(impl_);
      fn(prefix + ".weight", f.weight);
      fn(prefix + ".bias", f.bias);
    }
  }

 private:
  std::variant<FullLinear, FactorizedLinear> impl_;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct EncoderBlock {
  LayerNormParams ln1;
  Linear q, k, v, o;
  LayerNormParams ln2;
  Linear fc1, fc2;
};

/// Sublayer outputs of one block, each [batch x seq_len x d_model], taken
/// before the residual add.
struct BlockCapture {
  std::size_t block_index = 0;
  Tensor attn_out;
  Tensor mlp_out;
};

struct ForwardOutput {
  Tensor logits;  // [batch x n_classes]
  std::vector<BlockCapture> captures;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

enum class StudentInit { Svd, Random };

class Model {
 public:
  EncoderConfig config;
  std::vector<EncoderBlock> blocks;
  LayerNormParams final_norm;
  FullLinear head;
  std::optional<std::size_t> rank;  // set for factorized students

  ForwardOutput forward(const Tensor& batch, bool capture) const {
    const auto& c = config;
    if (batch.ndim() != 3 || batch.dim(1) != c.seq_len || batch.dim(2) != c.d_model) {
      throw DimensionError("forward: expected input [batch x " + std::to_string(c.seq_len) + " x " +
                           std::to_string(c.d_model) + "], got " + shape_str(batch.shape()));
    }
    const std::size_t nb = batch.dim(0), s = c.seq_len, d = c.d_model, h = c.n_heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d / h));
    ForwardOutput out;
    Tensor x = reshape(batch, {nb * s, d});
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& blk = blocks[l];
      Tensor a = layernorm(x, blk.ln1.gamma, blk.ln1.beta, c.layernorm_eps);
      Tensor qh = split_heads(blk.q.forward(a), nb, s, h);
      Tensor kh = split_heads(blk.k.forward(a), nb, s, h);
      Tensor vh = split_heads(blk.v.forward(a), nb, s, h);
      Tensor probs = softmax(scale(bmm(qh, kh, true), attn_scale));
      Tensor attn = blk.o.forward(merge_heads(bmm(probs, vh), nb, h));
      x = x + attn;
      Tensor m = layernorm(x, blk.ln2.gamma, blk.ln2.beta, c.layernorm_eps);
      Tensor mlp = blk.fc2.forward(gelu(blk.fc1.forward(m)));
      x = x + mlp;
      if (capture) out.captures.push_back({l, reshape(attn, {nb, s, d}), reshape(mlp, {nb, s, d})});
    }
    Tensor xn = layernorm(x, final_norm.gamma, final_norm.beta, c.layernorm_eps);
    Tensor pooled = mean_axis(reshape(xn, {nb, s, d}), 1);
    out.logits = add_bias(matmul_nt(pooled, head.weight), head.bias);
    return out;
  }

  /// Parameters in a stable order with dotted names.
  std::vector<NamedParameter> parameters() const {
    std::vector<NamedParameter> out;
    auto* self = const_cast<Model*>(this);
    self->visit_params([&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
    return out;
  }

  /// (name, layer) for every attention and MLP linear map.
  std::vector<std::pair<std::string, const Linear*>> linear_layers() const {
    std::vector<std::pair<std::string, const Linear*>> out;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "blocks." + std::to_string(l);
      const auto& b = blocks[l];
      out.emplace_back(p + ".attn.q", &b.q);
      out.emplace_back(p + ".attn.k", &b.k);
      out.emplace_back(p + ".attn.v", &b.v);
      out.emplace_back(p + ".attn.o", &b.o);
      out.emplace_back(p + ".mlp.fc1", &b.fc1);
      out.emplace_back(p + ".mlp.fc2", &b.fc2);
    }
    return out;
  }

  void set_trainable(bool on) {
    visit_params([on](const std::string&, Tensor& t) { t.set_requires_grad(on); });
  }

  void zero_grad() {
    visit_params([](const std::string&, Tensor& t) { t.zero_grad(); });
  }

  /// Deep copy; the clone shares no tensors with this model.
  Model clone() const {
    Model m = *this;
    m.visit_params([](const std::string&, Tensor& t) { t = t.detach(t.requires_grad()); });
    return m;
  }

  template <class Fn>
  void visit_params(Fn&& fn) {
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "blocks." + std::to_string(l);
      auto& b = blocks[l];
      fn(p + ".ln1.gamma", b.ln1.gamma);
      fn(p + ".ln1.beta", b.ln1.beta);
      b.q.for_each_param(p + ".attn.q", fn);
      b.k.for_each_param(p + ".attn.k", fn);
      b.v.for_each_param(p + ".attn.v", fn);
      b.o.for_each_param(p + ".attn.o", fn);
      fn(p + ".ln2.gamma", b.ln2.gamma);
      fn(p + ".ln2.beta", b.ln2.beta);
      b.fc1.for_each_param(p + ".mlp.fc1", fn);
      b.fc2.for_each_param(p + ".mlp.fc2", fn);
    }
    fn(std::string("norm.gamma"), final_norm.gamma);
    fn(std::string("norm.beta"), final_norm.beta);
    fn(std::string("head.weight"), head.weight);
    fn(std::string("head.bias"), head.bias);
  }
};

inline std::size_t param_count(const Model& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters()) n += p.tensor.size();
  return n;
}

/// Weight entries of the attention and MLP linear maps (biases excluded).
inline std::size_t linear_weight_count(const Model& m) {
  std::size_t n = 0;
  for (const auto& [name, layer] : m.linear_layers()) n += layer->weight_count();
  return n;
}

struct CompressionReport {
  std::size_t teacher_params = 0;
  std::size_t student_params = 0;
  std::size_t teacher_linear_weights = 0;
  std::size_t student_linear_weights = 0;
  double total_ratio = 0.0;          // all parameters
  double linear_blocks_ratio = 0.0;  // factorized weight matrices only
};

inline CompressionReport compression_ratio(const Model& teacher, const Model& student) {
  CompressionReport r;
  r.teacher_params = param_count(teacher);
  r.student_params = param_count(student);
  r.teacher_linear_weights = linear_weight_count(teacher);
  r.student_linear_weights = linear_weight_count(student);
  r.total_ratio = static_cast<double>(r.teacher_params) / static_cast<double>(r.student_params);
  r.linear_blocks_ratio = static_cast<double>(r.teacher_linear_weights) / static_cast<double>(r.student_linear_weights);
  return r;
}

namespace detail {

inline Tensor normal_tensor(Rng& rng, Shape shape, double stddev) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), rng.normal_vector(n, stddev), true);
}

inline FullLinear init_full(Rng& rng, std::size_t d_out, std::size_t d_in) {
  return {normal_tensor(rng, {d_out, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in))), Tensor::zeros({d_out}, true)};
}

inline LayerNormParams init_layernorm(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

}  // namespace detail

/// Full-rank teacher with scaled-normal weights (std 1/sqrt(d_in)), zero
/// biases and unit LayerNorms. Deterministic in the seed.
inline Model build_teacher(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model m;
  m.config = cfg;
  const std::size_t d = cfg.d_model;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    EncoderBlock b;
    b.ln1 = detail::init_layernorm(d);
    b.q = detail::init_full(rng, d, d);
    b.k = detail::init_full(rng, d, d);
    b.v = detail::init_full(rng, d, d);
    b.o = detail::init_full(rng, d, d);
    b.ln2 = detail::init_layernorm(d);
    b.fc1 = detail::init_full(rng, cfg.d_ff, d);
    b.fc2 = detail::init_full(rng, d, cfg.d_ff);
    m.blocks.push_back(std::move(b));
  }
  m.final_norm = detail::init_layernorm(d);
  m.head = detail::init_full(rng, cfg.n_classes, d);
  return m;
}

/// Best rank-r factors of a dense layer: A = U_r sqrt(S_r), B = sqrt(S_r) V_r^T.
inline FactorizedLinear factorize_svd(const Linear& layer, std::size_t r) {
  const Matrix w = layer.effective_weight();
  const auto svd = svd_small(w);
  const std::size_t d_out = w.rows, d_in = w.cols;
  std::vector<double> a(d_out * r), b(r * d_in);
  for (std::size_t k = 0; k < r; ++k) {
    const double s = std::sqrt(svd.sigma[k]);
    for (std::size_t i = 0; i < d_out; ++i) a[i * r + k] = svd.u(i, k) * s;
    for (std::size_t j = 0; j < d_in; ++j) b[k * d_in + j] = s * svd.v(j, k);
  }
  return {Tensor({d_out, r}, std::move(a), true), Tensor({r, d_in}, std::move(b), true), layer.bias().detach(true)};
}

/// Student whose attention and MLP linear maps are rank-r factorizations of
/// the teacher's. LayerNorms and the head are copied. All parameters are
/// trainable.
inline Model factorize_student(const Model& teacher, std::size_t r, StudentInit init = StudentInit::Svd,
                               std::uint64_t seed = 0) {
  if (r == 0) throw ConfigError("factorize_student: rank must be >= 1");
  for (const auto& [name, layer] : teacher.linear_layers()) {
    if (r > std::min(layer->d_in(), layer->d_out()))
      throw ConfigError("factorize_student: rank " + std::to_string(r) + " exceeds min dimension of " + name + " (" +
                        std::to_string(layer->d_out()) + "x" + std::to_string(layer->d_in()) + ")");
  }
  Model s = teacher.clone();
  s.set_trainable(true);
  s.rank = r;
  Rng rng(seed);
  auto convert = [&](Linear& layer) {
    if (init == StudentInit::Svd) {
      layer = Linear(factorize_svd(layer, r));
    } else {
      const std::size_t d_out = layer.d_out(), d_in = layer.d_in();
      FactorizedLinear f{detail::normal_tensor(rng, {d_out, r}, 1.0 / std::sqrt(static_cast<double>(r))),
                         detail::normal_tensor(rng, {r, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in))),
                         layer.bias().detach(true)};
      layer = Linear(std::move(f));
    }
  };
  for (auto& b : s.blocks) {
    for (Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2}) convert(*l);
  }
  return s;
}

}  // namespace rankscope
