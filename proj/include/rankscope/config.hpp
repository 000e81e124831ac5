#pragma once

// Run configuration: one JSON document with nested sections.
//
//   {
//     "seed": 0,
//     "output_dir": "runs/desk",
//     "dataset":       {"n_train", "n_val", "latent_dim", "noise_sigma"},
//     "model":         {"depth", "d_model", "n_heads", "d_ff", "n_classes", "seq_len", "layernorm_eps"},
//     "teacher_train": {"epochs", "batch_size", "learning_rate", "optimizer", "momentum"},
//     "student_train": {... same keys ..., "loss", "cosine"},
//     "sweep":         {"rank_grid", "parallelism", "init"},
//     "analysis":      {"lo", "hi", "isotonic"},
//     "ablation":      {"rank"}
//   }
//
// Every key is optional; missing keys keep their defaults and unknown keys are
// rejected. The dataset takes d_model, n_classes and seq_len from "model".
//
// Precedence, lowest first: defaults, config file, RANKSCOPE_SEED (seed only),
// --set overrides, dedicated flags such as --seed.
//
// The single seed drives everything: dataset generation, teacher init and
// shuffling use it directly, and each student uses derive_seed(seed, rank).

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "rankscope/checkpoint.hpp"
#include "rankscope/curve.hpp"
#include "rankscope/data.hpp"
#include "rankscope/model.hpp"
#include "rankscope/sweep.hpp"
#include "rankscope/train.hpp"

namespace rankscope {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/desk";
  DatasetConfig dataset;
  EncoderConfig model;
  TrainConfig teacher_train;
  TrainConfig student_train;
  std::vector<std::size_t> rank_grid{1, 2, 4, 8, 16, 32};
  std::size_t parallelism = 1;
  StudentInit init = StudentInit::Svd;
  Thresholds thresholds;
  bool isotonic = false;
  std::size_t ablation_rank = 8;

  RunConfig() {
    teacher_train.epochs = 30;
    teacher_train.learning_rate = 3e-3;
    teacher_train.loss = LossMode::cross_entropy();
    student_train.epochs = 15;
    student_train.learning_rate = 1e-3;
  }

  /// Dataset with the shared fields filled in from the model section.
  DatasetConfig dataset_config() const {
    DatasetConfig d = dataset;
    d.d_model = model.d_model;
    d.n_classes = model.n_classes;
    d.seq_len = model.seq_len;
    d.seed = seed;
    return d;
  }

  TrainConfig teacher_train_config() const {
    TrainConfig t = teacher_train;
    t.seed = seed;
    t.loss = LossMode::cross_entropy();
    return t;
  }

  SweepConfig sweep_config(const std::string& teacher_path) const {
    SweepConfig s;
    s.rank_grid = rank_grid;
    s.train = student_train;
    s.train.seed = seed;
    s.teacher_checkpoint = teacher_path;
    s.parallelism = parallelism;
    s.output_dir = output_dir;
    s.init = init;
    return s;
  }

  AnalyzeOptions analyze_options() const { return {thresholds, isotonic}; }

  void validate() const {
    model.validate();
    dataset_config().validate();
    teacher_train.validate();
    sweep_config("").validate(model);
    if (!(thresholds.lo > 0.0 && thresholds.lo <= thresholds.hi))
      throw ConfigError("analysis: thresholds must satisfy 0 < lo <= hi");
    if (ablation_rank == 0 || ablation_rank > model.max_rank())
      throw ConfigError("ablation: rank " + std::to_string(ablation_rank) + " outside [1, " +
                        std::to_string(model.max_rank()) + "]");
  }
};

namespace detail {

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd_momentum") return OptimizerKind::SgdMomentum;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd_momentum)");
}

inline CosineConvention parse_cosine(const std::string& s) {
  if (s == "per_sample") return CosineConvention::PerSample;
  if (s == "per_token") return CosineConvention::PerToken;
  throw ConfigError("unknown cosine convention '" + s + "' (expected per_sample or per_token)");
}

inline StudentInit parse_init(const std::string& s) {
  if (s == "svd") return StudentInit::Svd;
  if (s == "random") return StudentInit::Random;
  throw ConfigError("unknown init '" + s + "' (expected svd or random)");
}

inline void check_keys(const nlohmann::json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& field, const std::string& section) {
  if (!j.contains(key)) return;
  // get<size_t>() would wrap -1 and truncate 2.5, so insist on the JSON kind.
  const auto& v = j.at(key);
  bool kind_ok = true;
  if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
    kind_ok = v.is_number_unsigned();
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    kind_ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const auto& e) { return e.is_number_unsigned(); });
  }
  if (!kind_ok) throw ConfigError("config: '" + section + "." + key + "' has the wrong type");
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: '" + section + "." + key + "' has the wrong type");
  }
}

inline void read_train(const nlohmann::json& j, TrainConfig& t, const std::string& section, bool student) {
  std::set<std::string> keys{"epochs", "batch_size", "learning_rate", "optimizer", "momentum"};
  if (student) keys.insert({"loss", "cosine"});
  check_keys(j, section, keys);
  read_field(j, "epochs", t.epochs, section);
  read_field(j, "batch_size", t.batch_size, section);
  read_field(j, "learning_rate", t.learning_rate, section);
  read_field(j, "momentum", t.momentum, section);
  std::string s;
  if (j.contains("optimizer")) {
    read_field(j, "optimizer", s, section);
    t.optimizer = parse_optimizer(s);
  }
  if (j.contains("cosine")) {
    read_field(j, "cosine", s, section);
    t.cosine = parse_cosine(s);
  }
  if (j.contains("loss")) {
    read_field(j, "loss", s, section);
    try {
      t.loss = LossMode::parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
}

inline nlohmann::ordered_json train_to_json(const TrainConfig& t, bool student) {
  nlohmann::ordered_json j{{"epochs", t.epochs},
                           {"batch_size", t.batch_size},
                           {"learning_rate", t.learning_rate},
                           {"optimizer", to_string(t.optimizer)},
                           {"momentum", t.momentum}};
  if (student) {
    j["loss"] = t.loss.tag();
    j["cosine"] = to_string(t.cosine);
  }
  return j;
}

}  // namespace detail

/// Applies the keys present in `j` on top of `cfg`.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  using detail::read_field;
  detail::check_keys(j, "", {"seed", "output_dir", "dataset", "model", "teacher_train", "student_train", "sweep",
                             "analysis", "ablation"});
  read_field(j, "seed", cfg.seed, "");
  read_field(j, "output_dir", cfg.output_dir, "");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_keys(d, "dataset", {"n_train", "n_val", "latent_dim", "noise_sigma"});
    read_field(d, "n_train", cfg.dataset.n_train, "dataset");
    read_field(d, "n_val", cfg.dataset.n_val, "dataset");
    read_field(d, "latent_dim", cfg.dataset.latent_dim, "dataset");
    read_field(d, "noise_sigma", cfg.dataset.noise_sigma, "dataset");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, "model", {"depth", "d_model", "n_heads", "d_ff", "n_classes", "seq_len", "layernorm_eps"});
    try {
      cfg.model = encoder_config_from_json(m, cfg.model);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: 'model' has a field of the wrong type");
    }
  }
  if (j.contains("teacher_train")) detail::read_train(j.at("teacher_train"), cfg.teacher_train, "teacher_train", false);
  if (j.contains("student_train")) detail::read_train(j.at("student_train"), cfg.student_train, "student_train", true);
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    detail::check_keys(s, "sweep", {"rank_grid", "parallelism", "init"});
    read_field(s, "rank_grid", cfg.rank_grid, "sweep");
    read_field(s, "parallelism", cfg.parallelism, "sweep");
    if (s.contains("init")) {
      std::string v;
      read_field(s, "init", v, "sweep");
      cfg.init = detail::parse_init(v);
    }
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    detail::check_keys(a, "analysis", {"lo", "hi", "isotonic"});
    read_field(a, "lo", cfg.thresholds.lo, "analysis");
    read_field(a, "hi", cfg.thresholds.hi, "analysis");
    read_field(a, "isotonic", cfg.isotonic, "analysis");
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    detail::check_keys(a, "ablation", {"rank"});
    read_field(a, "rank", cfg.ablation_rank, "ablation");
  }
}

/// Full resolved configuration, in the same layout the loader accepts.
inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dataset"] = {{"n_train", c.dataset.n_train},
                  {"n_val", c.dataset.n_val},
                  {"latent_dim", c.dataset.latent_dim},
                  {"noise_sigma", c.dataset.noise_sigma}};
  j["model"] = to_json(c.model);
  j["teacher_train"] = detail::train_to_json(c.teacher_train, false);
  j["student_train"] = detail::train_to_json(c.student_train, true);
  j["sweep"] = {{"rank_grid", c.rank_grid}, {"parallelism", c.parallelism}, {"init", to_string(c.init)}};
  j["analysis"] = {{"lo", c.thresholds.lo}, {"hi", c.thresholds.hi}, {"isotonic", c.isotonic}};
  j["ablation"] = {{"rank", c.ablation_rank}};
  return j;
}

inline nlohmann::json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON (" + e.what() + ")");
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  RunConfig cfg;
  apply_config_json(cfg, parse_config_text(text, path));
  return cfg;
}

/// Applies one "dotted.key=value" override. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json patch = nlohmann::json::object();
  nlohmann::json* cur = &patch;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
    if (dot == std::string::npos) {
      (*cur)[part] = value;
      break;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
  apply_config_json(cfg, patch);
}

}  // namespace rankscope
