#pragma once

// Teacher training and student distillation loops.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankscope/data.hpp"
#include "rankscope/losses.hpp"
#include "rankscope/model.hpp"
#include "rankscope/random.hpp"

namespace rankscope {

enum class OptimizerKind { Adam, SgdMomentum };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double momentum = 0.9;  // SGD only
  std::uint64_t seed = 0;
  LossMode loss = LossMode::geometric();
  CosineConvention cosine = CosineConvention::PerSample;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One metric-log row. Epoch 0 is the state before any update.
struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;  // objective over the full training split
  double val_accuracy = 0.0;
  double wall_ms = 0.0;  // cumulative since the start of training
};

inline nlohmann::ordered_json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"loss", m.loss}, {"val_accuracy", m.val_accuracy}, {"wall_ms", m.wall_ms}};
}

/// JSON-lines metric log, one object per epoch.
inline void write_metric_log(std::ostream& os, const std::vector<EpochMetrics>& log) {
  for (const auto& m : log) os << to_json(m).dump() << '\n';
}

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> log;
};

namespace detail {

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<Tensor> params) : cfg_(cfg), params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      if (cfg_.optimizer == OptimizerKind::Adam) v_.emplace_back(p.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.mutable_values();
      auto& m = m_[i];
      if (cfg_.optimizer == OptimizerKind::Adam) {
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
          m[j] = b1 * m[j] + (1 - b1) * g[j];
          v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
          w[j] -= cfg_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
        }
      } else {
        for (std::size_t j = 0; j < w.size(); ++j) {
          m[j] = cfg_.momentum * m[j] + g[j];
          w[j] -= cfg_.learning_rate * m[j];
        }
      }
      p.zero_grad();
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t stride = t.size() / t.dim(0);
  std::vector<double> v(rows.size() * stride);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                v.begin() + static_cast<std::ptrdiff_t>(i * stride));
  Shape s = t.shape();
  s[0] = rows.size();
  return Tensor(std::move(s), std::move(v));
}

inline ForwardOutput gather_output(const ForwardOutput& full, std::span<const std::size_t> rows) {
  ForwardOutput out;
  out.logits = gather_rows(full.logits, rows);
  for (const auto& c : full.captures)
    out.captures.push_back({c.block_index, gather_rows(c.attn_out, rows), gather_rows(c.mlp_out, rows)});
  return out;
}

inline Tensor objective(const LossMode& mode, CosineConvention conv, const ForwardOutput& teacher,
                        const ForwardOutput& student, std::span<const std::size_t> labels) {
  switch (mode.kind) {
    case LossMode::Kind::Geometric: return geometric_loss(teacher, student, conv);
    case LossMode::Kind::LogitMseCos: return logit_mse_cos_loss(teacher.logits, student.logits);
    case LossMode::Kind::PureKD:
      return pure_kd_loss(teacher.logits, student.logits, labels, mode.alpha, mode.temperature);
    case LossMode::Kind::CrossEntropy: return cross_entropy(student.logits, labels);
  }
  throw std::logic_error("unknown loss mode");
}

}  // namespace detail

/// Forward over a whole split without recording a tape.
inline ForwardOutput forward_all(const Model& model, const LabeledData& data, bool capture) {
  NoGradGuard ng;
  return model.forward(data.tokens, capture);
}

inline std::vector<std::size_t> predict(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.values().subspan(i * c, c);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

inline double accuracy_from_logits(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto pred = predict(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Top-1 accuracy (ties resolve to the lowest class index).
inline double evaluate(const Model& model, const LabeledData& data) {
  return accuracy_from_logits(forward_all(model, data, false).logits, data.labels);
}

/// Trains `student` against a frozen `teacher` with cfg.loss. With
/// LossMode::cross_entropy() the teacher is ignored and may be the student
/// itself. Deterministic given cfg.seed.
inline TrainResult train_student(const Model& teacher, Model student, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  const bool need_teacher = cfg.loss.kind != LossMode::Kind::CrossEntropy;
  const bool capture = cfg.loss.needs_captures();
  ForwardOutput teacher_out;
  try {
    student = student.clone();
    student.set_trainable(true);
    // The teacher is constant, so its outputs are computed once per sample.
    if (need_teacher) teacher_out = forward_all(teacher, data.train, capture);
  } catch (const NumericError& e) {
    throw TrainingError(std::string("non-finite value before training: ") + e.what());
  }

  auto full_loss = [&]() {
    NoGradGuard ng;
    auto s = student.forward(data.train.tokens, capture);
    return detail::objective(cfg.loss, cfg.cosine, teacher_out, s, data.train.labels).item();
  };
  auto elapsed_ms = [&]() { return std::chrono::duration<double, std::milli>(Clock::now() - start).count(); };

  TrainResult result;
  try {
    result.log.push_back({0, full_loss(), evaluate(student, data.val), elapsed_ms()});
  } catch (const NumericError& e) {
    throw TrainingError(std::string("non-finite loss before training: ") + e.what());
  }

  std::vector<Tensor> params;
  for (auto& p : student.parameters()) params.push_back(p.tensor);
  detail::Optimizer opt(cfg, params);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    std::size_t batch_index = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size, ++batch_index) {
      std::span<const std::size_t> rows(order.data() + pos, std::min(cfg.batch_size, order.size() - pos));
      try {
        const LabeledData batch = data.train.batch(rows);
        ForwardOutput t = need_teacher ? detail::gather_output(teacher_out, rows) : ForwardOutput{};
        ForwardOutput s = student.forward(batch.tokens, capture);
        Tensor loss = detail::objective(cfg.loss, cfg.cosine, t, s, batch.labels);
        loss.backward();
        opt.step();
      } catch (const NumericError& e) {
        throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + ": " + e.what());
      }
    }
    try {
      result.log.push_back({epoch, full_loss(), evaluate(student, data.val), elapsed_ms()});
    } catch (const NumericError& e) {
      throw TrainingError("non-finite loss after epoch " + std::to_string(epoch) + ": " + e.what());
    }
  }
  result.model = std::move(student);
  return result;
}

/// Trains a model on hard labels (cross-entropy).
inline TrainResult train_teacher(Model model, const Dataset& data, TrainConfig cfg) {
  cfg.loss = LossMode::cross_entropy();
  return train_student(model, model, data, cfg);
}

}  // namespace rankscope
