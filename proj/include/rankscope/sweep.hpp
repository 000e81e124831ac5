#pragma once

// Rank sweep: factorize the teacher at every rank on the grid, distill,
// evaluate, and persist one record per rank.
//
// Output directory layout:
//   sweep.jsonl          one record per completed rank, sorted by rank
//   sweep_timing.jsonl   {"rank", "wall_ms"} per rank (kept apart so the
//                        records stay byte-identical across reruns)
//   sweep_meta.json      teacher accuracy, config echo, failures
//   metrics/rank_<r>.jsonl  per-rank training log
//
// A rank that already has a record in sweep.jsonl is not retrained.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "rankscope/checkpoint.hpp"
#include "rankscope/curve.hpp"
#include "rankscope/data.hpp"
#include "rankscope/model.hpp"
#include "rankscope/random.hpp"
#include "rankscope/train.hpp"

#ifndef RANKSCOPE_VERSION
#define RANKSCOPE_VERSION "0.1.0"
#endif

namespace rankscope {

namespace fs = std::filesystem;

struct SweepConfig {
  std::vector<std::size_t> rank_grid{1, 2, 4, 8, 16, 32};
  TrainConfig train;  // template; the seed field is the base seed
  std::string teacher_checkpoint;
  std::size_t parallelism = 1;
  std::string output_dir;
  StudentInit init = StudentInit::Svd;

  void validate(const EncoderConfig& arch) const {
    if (rank_grid.empty()) throw ConfigError("sweep: rank grid is empty");
    for (std::size_t i = 0; i < rank_grid.size(); ++i) {
      if (rank_grid[i] == 0) throw ConfigError("sweep: ranks must be positive");
      if (i > 0 && rank_grid[i] <= rank_grid[i - 1]) throw ConfigError("sweep: rank grid must be strictly increasing");
      if (rank_grid[i] > arch.max_rank())
        throw ConfigError("sweep: rank " + std::to_string(rank_grid[i]) + " exceeds the largest admissible rank " +
                          std::to_string(arch.max_rank()) + " for this architecture");
    }
    if (parallelism == 0) throw ConfigError("sweep: parallelism must be >= 1");
    train.validate();
  }
};

struct SweepRecord {
  std::size_t rank = 0;
  double final_val_accuracy = 0.0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t student_param_count = 0;
  double wall_ms = 0.0;

  bool operator==(const SweepRecord&) const = default;
};

struct SweepFailure {
  std::size_t rank = 0;
  std::string error;
};

struct SweepResult {
  std::vector<SweepRecord> records;  // sorted by rank
  std::vector<SweepFailure> failures;
  std::vector<std::size_t> trained_ranks;  // ranks trained in this invocation
  double teacher_accuracy = 0.0;
  double total_wall_ms = 0.0;
};

/// Per-rank seed, independent of execution order.
inline std::uint64_t rank_seed(std::uint64_t base_seed, std::size_t rank) { return derive_seed(base_seed, rank); }

inline nlohmann::ordered_json to_json(const SweepRecord& r) {
  return {{"rank", r.rank},
          {"final_val_accuracy", r.final_val_accuracy},
          {"final_loss", r.final_loss},
          {"seed", r.seed},
          {"epochs", r.epochs},
          {"student_param_count", r.student_param_count}};
}

inline SweepRecord sweep_record_from_json(const nlohmann::json& j) {
  SweepRecord r;
  r.rank = j.at("rank").get<std::size_t>();
  r.final_val_accuracy = j.at("final_val_accuracy").get<double>();
  r.final_loss = j.at("final_loss").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.epochs = j.at("epochs").get<std::size_t>();
  r.student_param_count = j.at("student_param_count").get<std::size_t>();
  if (r.final_val_accuracy < 0.0 || r.final_val_accuracy > 1.0)
    throw FormatError("sweep record for rank " + std::to_string(r.rank) + ": accuracy outside [0, 1]");
  return r;
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd_momentum"; }
inline std::string to_string(CosineConvention c) { return c == CosineConvention::PerSample ? "per_sample" : "per_token"; }
inline std::string to_string(StudentInit i) { return i == StudentInit::Svd ? "svd" : "random"; }

inline nlohmann::ordered_json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"optimizer", to_string(t.optimizer)},
          {"momentum", t.momentum},
          {"seed", t.seed},
          {"loss", t.loss.tag()},
          {"cosine", to_string(t.cosine)}};
}

inline nlohmann::ordered_json to_json(const SweepConfig& s) {
  return {{"rank_grid", s.rank_grid},
          {"train", to_json(s.train)},
          {"teacher_checkpoint", s.teacher_checkpoint},
          {"parallelism", s.parallelism},
          {"init", to_string(s.init)}};
}

/// Writes `content` to `path` via a temporary file and rename.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    os << content;
    if (!os) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

/// Reads existing records; a truncated last line (interrupted write) is ignored.
inline std::map<std::size_t, SweepRecord> read_sweep_records(const fs::path& path) {
  std::map<std::size_t, SweepRecord> out;
  std::ifstream is(path);
  if (!is) return out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      auto r = sweep_record_from_json(nlohmann::json::parse(line));
      out[r.rank] = r;
    } catch (const nlohmann::json::exception&) {
      continue;
    }
  }
  return out;
}

inline std::map<std::size_t, double> read_sweep_timing(const fs::path& path) {
  std::map<std::size_t, double> out;
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line)) {
    try {
      auto j = nlohmann::json::parse(line);
      out[j.at("rank").get<std::size_t>()] = j.at("wall_ms").get<double>();
    } catch (const nlohmann::json::exception&) {
      continue;
    }
  }
  return out;
}

/// Trains and evaluates one rank. Throws on failure.
inline SweepRecord run_rank(const Model& teacher, const Dataset& data, const SweepConfig& cfg, std::size_t rank,
                            std::vector<EpochMetrics>* log_out = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  TrainConfig tc = cfg.train;
  tc.seed = rank_seed(cfg.train.seed, rank);
  Model student = factorize_student(teacher, rank, cfg.init, tc.seed);
  TrainResult res = train_student(teacher, std::move(student), data, tc);
  SweepRecord r;
  r.rank = rank;
  r.final_val_accuracy = res.log.back().val_accuracy;
  r.final_loss = res.log.back().loss;
  r.seed = tc.seed;
  r.epochs = tc.epochs;
  r.student_param_count = param_count(res.model);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (log_out) *log_out = std::move(res.log);
  return r;
}

inline SweepResult run_sweep(const SweepConfig& cfg, const Model& teacher, const Dataset& data) {
  cfg.validate(teacher.config);
  const auto start = std::chrono::steady_clock::now();
  SweepResult result;
  result.teacher_accuracy = evaluate(teacher, data.val);

  const bool persist = !cfg.output_dir.empty();
  const fs::path dir = cfg.output_dir;
  std::map<std::size_t, SweepRecord> done;
  std::map<std::size_t, double> timing;
  if (persist) {
    fs::create_directories(dir / "metrics");
    done = read_sweep_records(dir / "sweep.jsonl");
    timing = read_sweep_timing(dir / "sweep_timing.jsonl");
    for (auto& [rank, rec] : done) rec.wall_ms = timing.count(rank) ? timing[rank] : 0.0;
    // Drop records for ranks no longer on the grid.
    std::erase_if(done, [&](const auto& kv) {
      return std::find(cfg.rank_grid.begin(), cfg.rank_grid.end(), kv.first) == cfg.rank_grid.end();
    });
  }

  std::vector<std::size_t> todo;
  for (auto r : cfg.rank_grid)
    if (!done.count(r)) todo.push_back(r);

  std::mutex mu;
  std::ofstream rec_out, time_out;
  if (persist) {
    // Rewrite the existing valid records first so a torn trailing line is discarded.
    std::string body;
    for (const auto& [rank, rec] : done) body += to_json(rec).dump() + "\n";
    write_file_atomic(dir / "sweep.jsonl", body);
    rec_out.open(dir / "sweep.jsonl", std::ios::app);
    time_out.open(dir / "sweep_timing.jsonl", std::ios::app);
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    const Model local_teacher = teacher.clone();
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const std::size_t rank = todo[i];
      std::vector<EpochMetrics> log;
      try {
        SweepRecord rec = run_rank(local_teacher, data, cfg, rank, &log);
        std::lock_guard lock(mu);
        done[rank] = rec;
        result.trained_ranks.push_back(rank);
        if (persist) {
          std::ofstream mlog(dir / "metrics" / ("rank_" + std::to_string(rank) + ".jsonl"), std::ios::trunc);
          write_metric_log(mlog, log);
          rec_out << to_json(rec).dump() << '\n' << std::flush;
          time_out << nlohmann::ordered_json{{"rank", rank}, {"wall_ms", rec.wall_ms}}.dump() << '\n' << std::flush;
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        result.failures.push_back({rank, e.what()});
      }
    }
  };
  const std::size_t n_workers = std::min(cfg.parallelism, std::max<std::size_t>(todo.size(), 1));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::sort(result.trained_ranks.begin(), result.trained_ranks.end());
  std::sort(result.failures.begin(), result.failures.end(),
            [](const auto& a, const auto& b) { return a.rank < b.rank; });
  for (const auto& [rank, rec] : done) result.records.push_back(rec);
  result.total_wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  if (persist) {
    rec_out.close();
    time_out.close();
    std::string body, tbody;
    for (const auto& r : result.records) {
      body += to_json(r).dump() + "\n";
      tbody += nlohmann::ordered_json{{"rank", r.rank}, {"wall_ms", r.wall_ms}}.dump() + "\n";
    }
    write_file_atomic(dir / "sweep.jsonl", body);
    write_file_atomic(dir / "sweep_timing.jsonl", tbody);
    nlohmann::ordered_json meta;
    meta["schema"] = "rankscope.sweep_meta/1";
    meta["toolkit_version"] = RANKSCOPE_VERSION;
    meta["teacher_accuracy"] = result.teacher_accuracy;
    meta["config"] = to_json(cfg);
    meta["architecture"] = to_json(teacher.config);
    meta["failures"] = nlohmann::ordered_json::array();
    for (const auto& f : result.failures) meta["failures"].push_back({{"rank", f.rank}, {"error", f.error}});
    write_file_atomic(dir / "sweep_meta.json", meta.dump(2) + "\n");
  }
  return result;
}

/// Loads the teacher named in cfg.teacher_checkpoint and runs the sweep.
inline SweepResult run_sweep(const SweepConfig& cfg, const Dataset& data) {
  return run_sweep(cfg, load_checkpoint(cfg.teacher_checkpoint), data);
}

inline std::vector<Knot> knots_from_records(const std::vector<SweepRecord>& records) {
  std::vector<Knot> k;
  for (const auto& r : records) k.push_back({static_cast<double>(r.rank), r.final_val_accuracy});
  return k;
}

}  // namespace rankscope
