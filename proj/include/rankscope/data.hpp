#pragma once

// Synthetic token-sequence classification with a controlled latent dimension.
//
// Each dataset draws a random orthonormal basis Q [d_model x k] and a list of
// unit "axes" in the k-dimensional latent space: the coordinate axes
// e_0..e_{k-1}, followed (only when k < n_classes) by the diagonals
// (e_i + e_j)/sqrt(2), (e_i - e_j)/sqrt(2). Axis index i belongs to class
// i mod n_classes.
//
// A sample draws z ~ N(0, I_k) until the axis with the largest |<u_i, z>|
// belongs to the wanted class and leads the runner-up by at least 0.3; z is
// then oriented so that <u_i, z> > 0. Its tokens are
//
//   x_t = Q (a_t * z + nuisance_t) + noise_sigma * eps_t
//
// with a_t = +1, -1, +1, ... (0 for the last token of an odd-length
// sequence), nuisance_t ~ U[-0.1, 0.1]^k and eps_t ~ N(0, I). As a set the
// tokens are symmetric under z -> -z, so pooled odd features carry no class
// signal and the label depends on all k latent coordinates; read position by
// position the sequence is linearly separable when k >= n_classes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankscope/checkpoint.hpp"
#include "rankscope/model.hpp"
#include "rankscope/random.hpp"
#include "rankscope/tensor.hpp"

namespace rankscope {

struct DatasetConfig {
  std::size_t n_classes = 4;
  std::size_t n_train = 1024;
  std::size_t n_val = 1024;
  std::size_t seq_len = 4;
  std::size_t d_model = 32;
  std::size_t latent_dim = 8;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_classes < 2) throw ConfigError("dataset: n_classes must be >= 2");
    if (seq_len == 0 || d_model == 0 || latent_dim == 0) throw ConfigError("dataset: sizes must be positive");
    if (latent_dim > d_model)
      throw ConfigError("dataset: latent_dim (" + std::to_string(latent_dim) + ") exceeds d_model (" +
                        std::to_string(d_model) + ")");
    if (seq_len < 2) throw ConfigError("dataset: seq_len must be >= 2");
    if (latent_dim + latent_dim * (latent_dim - 1) < n_classes)
      throw ConfigError("dataset: latent_dim " + std::to_string(latent_dim) + " offers too few axes for " +
                        std::to_string(n_classes) + " classes");
    if (n_train < n_classes || n_val < n_classes) throw ConfigError("dataset: each split needs >= n_classes samples");
    if (!(noise_sigma >= 0.0)) throw ConfigError("dataset: noise_sigma must be >= 0");
  }

  bool operator==(const DatasetConfig&) const = default;
};

/// Samples [n x seq_len x d_model] with labels in [0, n_classes).
struct LabeledData {
  Tensor tokens;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t seq_len() const { return tokens.dim(1); }
  std::size_t d_model() const { return tokens.dim(2); }

  /// Gathers the given rows into a new constant batch.
  LabeledData batch(std::span<const std::size_t> rows) const {
    const std::size_t stride = seq_len() * d_model();
    std::vector<double> v(rows.size() * stride);
    std::vector<std::size_t> l(rows.size());
    auto src = tokens.values();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * stride), stride,
                  v.begin() + static_cast<std::ptrdiff_t>(i * stride));
      l[i] = labels[rows[i]];
    }
    return {Tensor({rows.size(), seq_len(), d_model()}, std::move(v)), std::move(l)};
  }
};

struct Dataset {
  DatasetConfig config;
  LabeledData train;
  LabeledData val;
};

namespace detail {

inline constexpr double kNuisance = 0.1;
inline constexpr double kAxisMargin = 0.3;

inline std::vector<double> token_pattern(std::size_t s) {
  std::vector<double> a(s);
  for (std::size_t t = 0; t < s; ++t) a[t] = t % 2 == 0 ? 1.0 : -1.0;
  if (s % 2 == 1) a[s - 1] = 0.0;
  return a;
}

// Class axes in latent coordinates (unit vectors), at least n_classes of them.
inline std::vector<std::vector<double>> class_axes(std::size_t k, std::size_t n_classes) {
  std::vector<std::vector<double>> axes;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> u(k, 0.0);
    u[j] = 1.0;
    axes.push_back(std::move(u));
  }
  const double h = 1.0 / std::sqrt(2.0);
  for (std::size_t i = 0; i < k && axes.size() < n_classes; ++i)
    for (std::size_t j = i + 1; j < k && axes.size() < n_classes; ++j)
      for (double sgn : {1.0, -1.0}) {
        if (axes.size() >= n_classes) break;
        std::vector<double> u(k, 0.0);
        u[i] = h;
        u[j] = sgn * h;
        axes.push_back(std::move(u));
      }
  return axes;
}

// Random orthonormal columns via modified Gram-Schmidt.
inline Matrix random_orthonormal(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix q(rows, cols);
  for (std::size_t j = 0; j < cols; ++j) {
    for (;;) {
      std::vector<double> v = rng.normal_vector(rows, 1.0);
      for (std::size_t c = 0; c < j; ++c) {
        double dot = 0.0;
        for (std::size_t i = 0; i < rows; ++i) dot += q(i, c) * v[i];
        for (std::size_t i = 0; i < rows; ++i) v[i] -= dot * q(i, c);
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-8) continue;
      for (std::size_t i = 0; i < rows; ++i) q(i, j) = v[i] / norm;
      break;
    }
  }
  return q;
}

inline LabeledData generate_split(const DatasetConfig& cfg, const Matrix& basis, std::size_t n, Rng& rng) {
  const std::size_t k = cfg.latent_dim, s = cfg.seq_len, d = cfg.d_model;
  const auto pattern = token_pattern(s);
  const auto axes = class_axes(k, cfg.n_classes);

  std::vector<double> values(n * s * d, 0.0);
  std::vector<std::size_t> labels(n);
  std::vector<double> z(k), latent(k), proj(axes.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % cfg.n_classes;
    std::size_t best = 0;
    for (;;) {
      for (auto& v : z) v = rng.normal();
      for (std::size_t a = 0; a < axes.size(); ++a) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += axes[a][j] * z[j];
        proj[a] = dot;
      }
      best = 0;
      double top = -1.0, second = -1.0;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const double m = std::abs(proj[a]);
        if (m > top) {
          second = top;
          top = m;
          best = a;
        } else if (m > second) {
          second = m;
        }
      }
      if (best % cfg.n_classes == c && top - second >= kAxisMargin) break;
    }
    if (proj[best] < 0.0)
      for (auto& v : z) v = -v;
    labels[i] = c;
    for (std::size_t t = 0; t < s; ++t) {
      for (std::size_t j = 0; j < k; ++j) latent[j] = pattern[t] * z[j] + rng.uniform(-kNuisance, kNuisance);
      double* tok = values.data() + (i * s + t) * d;
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += basis(r, j) * latent[j];
        tok[r] = acc;
      }
      if (cfg.noise_sigma > 0.0)
        for (std::size_t r = 0; r < d; ++r) tok[r] += rng.normal(0.0, cfg.noise_sigma);
    }
  }
  return {Tensor({n, s, d}, std::move(values)), std::move(labels)};
}

}  // namespace detail

/// Stratified, fully deterministic in cfg.seed; classes are exactly balanced
/// up to n mod n_classes.
inline Dataset generate(const DatasetConfig& cfg) {
  cfg.validate();
  Rng basis_rng(derive_seed(cfg.seed, 1));
  const Matrix basis = detail::random_orthonormal(basis_rng, cfg.d_model, cfg.latent_dim);
  Rng train_rng(derive_seed(cfg.seed, 2));
  Rng val_rng(derive_seed(cfg.seed, 3));
  return {cfg, detail::generate_split(cfg, basis, cfg.n_train, train_rng),
          detail::generate_split(cfg, basis, cfg.n_val, val_rng)};
}

// Dataset file: "RSDATA01", u64 header length, JSON header
// {"format": "rankscope.dataset", "version": 1, "n_classes", "seq_len",
//  "d_model", "splits": [{"name", "count"}...]}, then per split in order:
// count * seq_len * d_model float64 LE token values followed by count u64 LE
// labels.

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  nlohmann::ordered_json h;
  h["format"] = "rankscope.dataset";
  h["version"] = 1;
  h["n_classes"] = ds.config.n_classes;
  h["seq_len"] = ds.config.seq_len;
  h["d_model"] = ds.config.d_model;
  h["splits"] = {{{"name", "train"}, {"count", ds.train.size()}}, {{"name", "val"}, {"count", ds.val.size()}}};
  const std::string hs = h.dump();
  os.write("RSDATA01", 8);
  detail::put_u64(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const LabeledData* split : {&ds.train, &ds.val}) {
    for (double v : split->tokens.values()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
    for (auto l : split->labels) detail::put_u64(os, l);
  }
}

/// Loads token/label splits. Generation parameters other than the shapes are
/// not stored, so config fields such as latent_dim are left at defaults.
inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  if (!is || !is.read(magic, 8) || std::string(magic, 8) != "RSDATA01")
    throw FormatError("dataset: '" + path + "' is not a rankscope dataset file");
  const auto hl = detail::get_u64(is);
  if (hl > (1u << 20)) throw FormatError("dataset: implausible header length");
  std::string hs(hl, '\0');
  if (!is.read(hs.data(), static_cast<std::streamsize>(hl))) throw FormatError("dataset: truncated header");
  const auto h = nlohmann::json::parse(hs);
  Dataset ds;
  ds.config.n_classes = h.at("n_classes");
  ds.config.seq_len = h.at("seq_len");
  ds.config.d_model = h.at("d_model");
  const std::size_t stride = ds.config.seq_len * ds.config.d_model;
  std::vector<LabeledData*> targets{&ds.train, &ds.val};
  const auto& splits = h.at("splits");
  if (splits.size() != 2) throw FormatError("dataset: expected train and val splits");
  for (std::size_t s = 0; s < 2; ++s) {
    const std::size_t n = splits[s].at("count");
    std::vector<double> v(n * stride);
    for (auto& x : v) x = std::bit_cast<double>(detail::get_u64(is));
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) {
      l = detail::get_u64(is);
      if (l >= ds.config.n_classes) throw FormatError("dataset: label out of range");
    }
    *targets[s] = {Tensor({n, ds.config.seq_len, ds.config.d_model}, std::move(v)), std::move(labels)};
  }
  ds.config.n_train = ds.train.size();
  ds.config.n_val = ds.val.size();
  return ds;
}

}  // namespace rankscope
