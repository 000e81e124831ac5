#pragma once

// Distillation objectives.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankscope/model.hpp"
#include "rankscope/tensor.hpp"

namespace rankscope {

inline constexpr double kCosineEps = 1e-12;

/// Cosine similarity of two equally shaped tensors, flattened.
/// <u, v> / (|u| |v| + 1e-12), so a zero vector gives 0.
inline double cosine_sim(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape())
    throw DimensionError("cosine_sim: shape mismatch " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  NoGradGuard ng;
  return cosine_rows(reshape(u, {1, u.size()}), reshape(v, {1, v.size()}), kCosineEps).item();
}

/// How a [batch x seq x d] activation is split into vectors for the cosine terms.
enum class CosineConvention {
  PerSample,  // one vector per sample (seq*d flattened), averaged over the batch
  PerToken,   // one vector per token, averaged over batch and tokens
};

inline Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

/// 1 - mean cosine between student and teacher rows.
inline Tensor cosine_distance(const Tensor& student, const Tensor& teacher, CosineConvention conv) {
  if (student.shape() != teacher.shape())
    throw DimensionError("cosine_distance: shape mismatch " + shape_str(student.shape()) + " vs " +
                         shape_str(teacher.shape()));
  const std::size_t batch = student.dim(0);
  Shape rows_shape;
  if (conv == CosineConvention::PerToken && student.ndim() == 3)
    rows_shape = {batch * student.dim(1), student.dim(2)};
  else
    rows_shape = {batch, student.size() / batch};
  Tensor cos = cosine_rows(reshape(student, rows_shape), reshape(teacher, rows_shape), kCosineEps);
  return shift(scale(mean(cos), -1.0), 1.0);
}

/// MSE (element mean) + (1 - cos) on one pair of activations.
inline Tensor mse_cos(const Tensor& student, const Tensor& teacher, CosineConvention conv) {
  return add(mse(student, teacher), cosine_distance(student, teacher, conv));
}

/// Logit matching alone: mean squared error plus (1 - cos), batch-averaged.
inline Tensor logit_mse_cos_loss(const Tensor& teacher_logits, const Tensor& student_logits) {
  return mse_cos(student_logits, teacher_logits.detach(), CosineConvention::PerSample);
}

/// (1/L) sum_l [MSE(attn) + MSE(mlp) + (1 - cos(attn)) + (1 - cos(mlp))]
///   + MSE(logits) + (1 - cos(logits)).
/// Teacher tensors are treated as constants.
inline Tensor geometric_loss(const ForwardOutput& teacher, const ForwardOutput& student,
                             CosineConvention conv = CosineConvention::PerSample) {
  if (teacher.captures.size() != student.captures.size() || teacher.captures.empty())
    throw std::invalid_argument("geometric_loss: teacher has " + std::to_string(teacher.captures.size()) +
                                " block captures, student has " + std::to_string(student.captures.size()));
  Tensor blocks;
  for (std::size_t l = 0; l < student.captures.size(); ++l) {
    const auto& s = student.captures[l];
    const auto& t = teacher.captures[l];
    Tensor term = add(mse_cos(s.attn_out, t.attn_out.detach(), conv), mse_cos(s.mlp_out, t.mlp_out.detach(), conv));
    blocks = l == 0 ? term : add(blocks, term);
  }
  blocks = scale(blocks, 1.0 / static_cast<double>(student.captures.size()));
  return add(blocks, mse_cos(student.logits, teacher.logits.detach(), CosineConvention::PerSample));
}

/// Mean negative log-likelihood of the labels.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  return scale(mean(pick(log_softmax(logits), labels)), -1.0);
}

/// alpha * T^2 * KL(softmax(z_T / T) || softmax(z_S / T)) + (1 - alpha) * CE(z_S, labels),
/// both batch-averaged.
inline Tensor pure_kd_loss(const Tensor& teacher_logits, const Tensor& student_logits,
                           std::span<const std::size_t> labels, double alpha, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("pure_kd_loss: temperature must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("pure_kd_loss: alpha must lie in [0, 1]");
  if (teacher_logits.shape() != student_logits.shape())
    throw DimensionError("pure_kd_loss: logit shape mismatch");
  const std::size_t batch = student_logits.dim(0), classes = student_logits.dim(1);

  // Teacher side is constant: p_T and sum p_T log p_T per batch.
  std::vector<double> pt(teacher_logits.size());
  double neg_entropy = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = teacher_logits.values().data() + b * classes;
    double mx = z[0] / temperature;
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, z[j] / temperature);
    double norm = 0.0;
    for (std::size_t j = 0; j < classes; ++j) norm += std::exp(z[j] / temperature - mx);
    const double log_norm = std::log(norm) + mx;
    for (std::size_t j = 0; j < classes; ++j) {
      const double lp = z[j] / temperature - log_norm;
      pt[b * classes + j] = std::exp(lp);
      neg_entropy += pt[b * classes + j] * lp;
    }
  }
  neg_entropy /= static_cast<double>(batch);
  const Tensor teacher_probs(student_logits.shape(), std::move(pt));
  Tensor log_ps = log_softmax(scale(student_logits, 1.0 / temperature));
  Tensor cross = scale(sum(mul(teacher_probs, log_ps)), -1.0 / static_cast<double>(batch));
  Tensor kl = shift(cross, neg_entropy);
  Tensor ce = cross_entropy(student_logits, labels);
  return add(scale(kl, alpha * temperature * temperature), scale(ce, 1.0 - alpha));
}

/// Which distillation objective a student is trained with.
struct LossMode {
  enum class Kind { Geometric, LogitMseCos, PureKD, CrossEntropy };
  Kind kind = Kind::Geometric;
  double alpha = 0.9;
  double temperature = 4.0;

  static LossMode geometric() { return {Kind::Geometric}; }
  static LossMode logit_mse_cos() { return {Kind::LogitMseCos}; }
  static LossMode pure_kd(double alpha, double temperature) { return {Kind::PureKD, alpha, temperature}; }
  /// Hard labels only; used to train teachers.
  static LossMode cross_entropy() { return {Kind::CrossEntropy}; }

  bool needs_captures() const { return kind == Kind::Geometric; }

  std::string label() const {
    switch (kind) {
      case Kind::Geometric: return "Geometric Distillation";
      case Kind::LogitMseCos: return "Logit MSE + Cosine";
      case Kind::CrossEntropy: return "Cross-Entropy";
      case Kind::PureKD: {
        auto fmt = [](double v) {
          std::string s = std::to_string(v);
          s.erase(s.find_last_not_of('0') + 1);
          if (!s.empty() && s.back() == '.') s.pop_back();
          return s;
        };
        return "Pure KD (\xCE\xB1=" + fmt(alpha) + ", T=" + fmt(temperature) + ")";
      }
    }
    return "";
  }

  /// Stable machine tag, e.g. "pure_kd:0.9:4".
  std::string tag() const {
    switch (kind) {
      case Kind::Geometric: return "geometric";
      case Kind::LogitMseCos: return "logit_mse_cos";
      case Kind::CrossEntropy: return "cross_entropy";
      case Kind::PureKD: {
        std::string l = label();  // reuse formatting
        auto a = l.find('=') + 1, c = l.find(',');
        auto t = l.find("T=") + 2, e = l.find(')');
        return "pure_kd:" + l.substr(a, c - a) + ":" + l.substr(t, e - t);
      }
    }
    return "";
  }

  static LossMode parse(const std::string& s) {
    if (s == "geometric") return geometric();
    if (s == "logit_mse_cos") return logit_mse_cos();
    if (s == "cross_entropy") return cross_entropy();
    if (s.rfind("pure_kd:", 0) == 0) {
      auto rest = s.substr(8);
      auto colon = rest.find(':');
      if (colon == std::string::npos) throw std::invalid_argument("loss mode '" + s + "': expected pure_kd:<alpha>:<T>");
      auto number = [&](const std::string& f) {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(f, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used == 0 || used != f.size()) throw std::invalid_argument("loss mode '" + s + "': malformed number '" + f + "'");
        return v;
      };
      const double a = number(rest.substr(0, colon)), t = number(rest.substr(colon + 1));
      if (!(a >= 0.0 && a <= 1.0) || !(t > 0.0)) throw std::invalid_argument("loss mode '" + s + "': alpha/T out of range");
      return pure_kd(a, t);
    }
    throw std::invalid_argument("unknown loss mode '" + s + "'");
  }
};

/// The five objectives compared in the ablation.
inline std::vector<LossMode> ablation_modes() {
  return {LossMode::geometric(), LossMode::logit_mse_cos(), LossMode::pure_kd(0.9, 4.0), LossMode::pure_kd(0.5, 4.0),
          LossMode::pure_kd(0.9, 2.0)};
}

}  // namespace rankscope
