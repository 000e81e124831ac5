#pragma once

// Command-line front end. `run` is the whole program minus process setup, so
// tests drive it in-process with their own streams.
//
// Exit codes: 0 success (an analysis without a region is still a success),
// 1 numeric or training failure, 2 usage or configuration error.
//
// Each command records itself in <out>/manifest.json under its own name; a
// rerun replaces its entry. Wall-clock timestamps go to manifest_times.json so
// the manifest itself is reproducible.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rankscope/checkpoint.hpp"
#include "rankscope/config.hpp"
#include "rankscope/curve_io.hpp"
#include "rankscope/plot.hpp"
#include "rankscope/svd.hpp"
#include "rankscope/sweep.hpp"
#include "rankscope/train.hpp"

namespace rankscope::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Options shared by the config-driven commands.
struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

inline std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("RANKSCOPE_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  const std::string s(v);
  std::uint64_t seed = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
  if (ec != std::errc{} || end != s.data() + s.size())
    throw ConfigError("RANKSCOPE_SEED='" + s + "' is not a non-negative integer");
  return seed;
}

inline RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (auto s = env_seed()) cfg.seed = *s;
  for (const auto& kv : o.overrides) apply_override(cfg, kv);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Manifest

struct RunRecord {
  std::string name;  // subcommand
  std::vector<std::string> argv;
  nlohmann::ordered_json config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> outputs;  // relative to the output directory
  std::string started;
  std::string finished;
};

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

inline nlohmann::ordered_json read_json_or(const fs::path& p, nlohmann::ordered_json fallback) {
  std::ifstream is(p);
  if (!is) return fallback;
  try {
    return nlohmann::ordered_json::parse(is);
  } catch (const nlohmann::json::exception&) {
    return fallback;
  }
}

// Merges `entry` under runs[name], keeping a fixed command order.
inline nlohmann::ordered_json merge_run(const nlohmann::ordered_json& runs, const std::string& name,
                                        const nlohmann::ordered_json& entry) {
  static const std::vector<std::string> order{"train-teacher", "sweep", "analyze", "ablate", "erank"};
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& key : order) {
    if (key == name) out[key] = entry;
    else if (runs.is_object() && runs.contains(key)) out[key] = runs.at(key);
  }
  return out;
}

}  // namespace detail

inline void record_run(const fs::path& dir, const RunRecord& r) {
  for (const auto& o : r.outputs)
    if (!fs::exists(dir / o)) throw std::logic_error("manifest lists missing output '" + o + "'");
  nlohmann::ordered_json entry;
  entry["command"] = r.argv;
  entry["seed"] = r.seed ? nlohmann::ordered_json(*r.seed) : nlohmann::ordered_json(nullptr);
  entry["config"] = r.config;
  entry["outputs"] = r.outputs;

  auto manifest = detail::read_json_or(dir / "manifest.json", nlohmann::ordered_json::object());
  nlohmann::ordered_json m;
  m["schema"] = "rankscope.manifest/1";
  m["toolkit_version"] = RANKSCOPE_VERSION;
  m["runs"] = detail::merge_run(manifest.value("runs", nlohmann::ordered_json::object()), r.name, entry);
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");

  auto times = detail::read_json_or(dir / "manifest_times.json", nlohmann::ordered_json::object());
  nlohmann::ordered_json t;
  t["schema"] = "rankscope.manifest_times/1";
  t["runs"] = detail::merge_run(times.value("runs", nlohmann::ordered_json::object()), r.name,
                                {{"started", r.started}, {"finished", r.finished}});
  write_file_atomic(dir / "manifest_times.json", t.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Formatting helpers

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Display width of a UTF-8 string (code points).
inline std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    w[c] = display_width(header[c]);
    for (const auto& r : rows) w[c] = std::max(w[c], display_width(r[c]));
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      const std::string pad(w[c] - display_width(r[c]), ' ');
      // first column left-aligned, numbers right-aligned
      if (c == 0) os << r[c] << pad;
      else os << "  " << pad << r[c];
    }
    os << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return os.str();
}

inline void save_checkpoint_atomic(const fs::path& path, const Model& m) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, m);
  write_file_atomic(path, os.str());
}

inline Model load_teacher(const std::string& path, const EncoderConfig& expected) {
  if (!fs::exists(path))
    throw UsageError("teacher checkpoint '" + path + "' not found (run train-teacher first or pass --teacher)");
  Model m = load_checkpoint(path);
  if (m.rank) throw ConfigError("'" + path + "' holds a factorized student, not a teacher");
  if (!(m.config == expected))
    throw ConfigError("teacher checkpoint '" + path + "' was trained with a different model section than the config");
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Steps. Each returns the outputs it wrote, relative to the output directory.

inline std::vector<std::string> write_analysis(const fs::path& dir, const RankCurveAnalysis& a) {
  write_file_atomic(dir / "analysis.json", to_json(a).dump(2) + "\n");
  std::ostringstream svg;
  write_rank_plot(svg, a);
  write_file_atomic(dir / "plot.svg", svg.str());
  return {"analysis.json", "plot.svg"};
}

inline void report_analysis(std::ostream& out, std::ostream& err, const RankCurveAnalysis& a) {
  using detail::fixed;
  out << "teacher accuracy: " << fixed(a.teacher_accuracy, 4) << '\n';
  switch (a.region.status) {
    case RegionStatus::Found:
      out << "effective region: [" << fixed(a.region.lo, 2) << ", " << fixed(a.region.hi, 2) << "]\n";
      break;
    case RegionStatus::RightOpen:
      out << "effective region: [" << fixed(a.region.lo, 2) << ", " << fixed(a.region.hi, 2) << ") right-open\n";
      err << "warning: the curve never reaches " << fixed(100 * a.thresholds.hi, 1)
          << "% of teacher accuracy; the region is open at the largest rank\n";
      break;
    case RegionStatus::NoRegion:
      out << "effective region: none\n";
      err << "warning: the curve never reaches " << fixed(100 * a.thresholds.lo, 1)
          << "% of teacher accuracy; no effective region\n";
      break;
  }
  if (a.knee.found()) {
    out << "knee: " << fixed(a.knee.rank, 2) << '\n';
  } else {
    out << "knee: none\n";
    err << "warning: the curve is flat; no knee\n";
  }
}

inline std::vector<std::string> step_train_teacher(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const Dataset ds = generate(cfg.dataset_config());
  TrainResult res = train_teacher(build_teacher(cfg.model, cfg.seed), ds, cfg.teacher_train_config());
  detail::save_checkpoint_atomic(dir / "teacher.ckpt", res.model);
  std::ostringstream log;
  write_metric_log(log, res.log);
  write_file_atomic(dir / "teacher_metrics.jsonl", log.str());
  out << "teacher: " << param_count(res.model) << " parameters, train accuracy "
      << detail::fixed(evaluate(res.model, ds.train), 4) << ", val accuracy "
      << detail::fixed(res.log.back().val_accuracy, 4) << '\n';
  return {"teacher.ckpt", "teacher_metrics.jsonl"};
}

struct SweepStepResult {
  std::vector<std::string> outputs;
  bool failed = false;
};

inline SweepStepResult step_sweep(const RunConfig& cfg, const std::string& teacher_path, std::ostream& out,
                                  std::ostream& err) {
  const fs::path dir = cfg.output_dir;
  const Model teacher = detail::load_teacher(teacher_path, cfg.model);
  const Dataset ds = generate(cfg.dataset_config());
  const SweepResult res = run_sweep(cfg.sweep_config(teacher_path), teacher, ds);

  SweepStepResult step;
  step.outputs = {"sweep.jsonl", "sweep_timing.jsonl", "sweep_meta.json"};
  for (const auto& r : res.records) {
    const bool trained = std::count(res.trained_ranks.begin(), res.trained_ranks.end(), r.rank) > 0;
    out << "rank " << r.rank << ": val accuracy " << detail::fixed(r.final_val_accuracy, 4)
        << (trained ? "" : " (kept from previous run)") << '\n';
    const std::string mlog = "metrics/rank_" + std::to_string(r.rank) + ".jsonl";
    if (fs::exists(dir / mlog)) step.outputs.push_back(mlog);
  }
  for (const auto& f : res.failures) err << "error: rank " << f.rank << " failed: " << f.error << '\n';
  step.failed = !res.failures.empty();
  if (res.records.size() < 2) {
    if (step.failed) throw TrainingError("fewer than 2 ranks completed; cannot analyze the curve");
    throw ConfigError("the rank grid needs at least 2 ranks to analyze the curve");
  }
  if (!(res.teacher_accuracy > 0.0)) throw TrainingError("teacher accuracy is 0; cannot normalize the curve");

  // Same path as `analyze <dir>/sweep.jsonl`.
  const CurveData curve = load_curve((dir / "sweep.jsonl").string());
  const auto analysis = analyze(curve.knots, *curve.teacher_accuracy, cfg.analyze_options());
  for (auto& o : write_analysis(dir, analysis)) step.outputs.push_back(o);
  report_analysis(out, err, analysis);
  return step;
}

inline std::vector<std::string> step_ablate(const RunConfig& cfg, const std::string& teacher_path, std::ostream& out) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir / "metrics");
  const Model teacher = detail::load_teacher(teacher_path, cfg.model);
  const Dataset ds = generate(cfg.dataset_config());
  const double teacher_acc = evaluate(teacher, ds.val);
  const std::size_t rank = cfg.ablation_rank;
  const std::uint64_t seed = rank_seed(cfg.seed, rank);

  std::vector<std::string> outputs;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::vector<std::vector<std::string>> table;
  for (const LossMode& mode : ablation_modes()) {
    TrainConfig tc = cfg.student_train;
    tc.loss = mode;
    tc.seed = seed;
    TrainResult res = train_student(teacher, factorize_student(teacher, rank, cfg.init, seed), ds, tc);
    std::string tag = mode.tag();
    std::replace(tag.begin(), tag.end(), ':', '_');
    const std::string mlog = "metrics/ablation_" + tag + ".jsonl";
    std::ostringstream log;
    write_metric_log(log, res.log);
    write_file_atomic(dir / mlog, log.str());
    outputs.push_back(mlog);

    const auto& first = res.log.front();
    const auto& last = res.log.back();
    rows.push_back({{"mode", mode.label()},
                    {"tag", mode.tag()},
                    {"initial_loss", first.loss},
                    {"final_loss", last.loss},
                    {"initial_val_accuracy", first.val_accuracy},
                    {"final_val_accuracy", last.val_accuracy},
                    {"relative_to_teacher", last.val_accuracy / teacher_acc}});
    table.push_back({mode.label(), detail::fixed(first.loss, 6), detail::fixed(last.loss, 6),
                     detail::fixed(last.val_accuracy, 4), detail::fixed(last.val_accuracy / teacher_acc, 4)});
  }
  nlohmann::ordered_json doc;
  doc["schema"] = "rankscope.ablation/1";
  doc["rank"] = rank;
  doc["epochs"] = cfg.student_train.epochs;
  doc["seed"] = seed;
  doc["teacher_accuracy"] = teacher_acc;
  doc["rows"] = rows;
  write_file_atomic(dir / "ablation.json", doc.dump(2) + "\n");

  const std::string text =
      "rank " + std::to_string(rank) + ", " + std::to_string(cfg.student_train.epochs) + " epochs, teacher accuracy " +
      detail::fixed(teacher_acc, 4) + "\n" +
      detail::format_table({"mode", "initial_loss", "final_loss", "val_accuracy", "vs_teacher"}, table);
  write_file_atomic(dir / "ablation.txt", text);
  out << text;
  outputs.insert(outputs.begin(), {"ablation.json", "ablation.txt"});
  return outputs;
}

// ---------------------------------------------------------------------------
// erank report

struct ErankRow {
  std::string layer;
  std::size_t d_out = 0, d_in = 0;
  std::optional<std::size_t> stored_rank;
  double erank = 0.0;
  std::size_t numerical_rank = 0;
};

inline std::vector<ErankRow> erank_report(const Model& m, const std::vector<std::string>& filters) {
  std::vector<ErankRow> rows;
  for (const auto& [name, layer] : m.linear_layers()) {
    if (!filters.empty() &&
        std::none_of(filters.begin(), filters.end(), [&](const auto& f) { return name.find(f) != std::string::npos; }))
      continue;
    ErankRow r;
    r.layer = name;
    r.d_out = layer->d_out();
    r.d_in = layer->d_in();
    if (layer->factorized()) r.stored_rank = layer->factors().rank();
    const auto svd = svd_small(layer->effective_weight());
    const double smax = svd.sigma.empty() ? 0.0 : svd.sigma.front();
    const double tol = smax * static_cast<double>(std::max(r.d_out, r.d_in)) * 2.220446049250313e-16;
    for (double s : svd.sigma) r.numerical_rank += s > tol;
    r.erank = smax > 0.0 ? entropy_erank(svd.sigma) : 0.0;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Entry point

namespace detail {

inline void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON config file (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set sweep.parallelism=2 (repeatable)")
      ->type_name("KEY=VALUE");
  cmd->add_option("--seed", o.seed, "Global seed; overrides the config and RANKSCOPE_SEED");
  cmd->add_option("-o,--out", o.out_dir, "Output directory; overrides output_dir from the config");
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Estimate the intrinsic rank of a network by distilling rank-factorized students.", "rankscope"};
  app.set_version_flag("--version", std::string(RANKSCOPE_VERSION));
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 training or numeric failure, 2 usage or config error.");

  CommonOptions teacher_opts, sweep_opts, ablate_opts, repro_opts;
  std::string sweep_teacher, ablate_teacher;
  std::optional<std::size_t> sweep_jobs, ablate_rank;

  auto* c_teacher = app.add_subcommand("train-teacher", "Train the full-rank teacher and save teacher.ckpt");
  detail::add_common(c_teacher, teacher_opts);

  auto* c_sweep = app.add_subcommand("sweep", "Distill one factorized student per rank, then analyze the curve");
  detail::add_common(c_sweep, sweep_opts);
  c_sweep->add_option("--teacher", sweep_teacher, "Teacher checkpoint (default: <out>/teacher.ckpt)");
  c_sweep->add_option("-j,--jobs", sweep_jobs, "Ranks trained concurrently; overrides sweep.parallelism")
      ->check(CLI::PositiveNumber);

  std::string curve_path, analyze_out;
  std::optional<double> teacher_acc;
  double lo = Thresholds{}.lo, hi = Thresholds{}.hi;
  bool isotonic = false;
  auto* c_analyze = app.add_subcommand("analyze", "Fit and read out an accuracy-vs-rank curve (.csv or .jsonl)");
  c_analyze->add_option("curve", curve_path, "Curve file: CSV with rank,accuracy columns or sweep.jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  c_analyze->add_option("--teacher-acc", teacher_acc,
                        "Teacher accuracy in (0, 1]; required unless sweep_meta.json sits next to the curve");
  c_analyze->add_option("--lo", lo, "Lower threshold as a fraction of teacher accuracy")->capture_default_str();
  c_analyze->add_option("--hi", hi, "Upper threshold as a fraction of teacher accuracy")->capture_default_str();
  c_analyze->add_flag("--isotonic", isotonic, "Pool adjacent violators before fitting");
  c_analyze->add_option("-o,--out", analyze_out, "Output directory (default: the curve's directory)");

  auto* c_ablate = app.add_subcommand("ablate", "Compare the five distillation objectives at one rank");
  detail::add_common(c_ablate, ablate_opts);
  c_ablate->add_option("--teacher", ablate_teacher, "Teacher checkpoint (default: <out>/teacher.ckpt)");
  c_ablate->add_option("--rank", ablate_rank, "Student rank; overrides ablation.rank")->check(CLI::PositiveNumber);

  std::string erank_ckpt, erank_out;
  std::vector<std::string> erank_layers;
  auto* c_erank = app.add_subcommand("erank", "Entropy effective rank of every linear layer in a checkpoint");
  c_erank->add_option("checkpoint", erank_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_erank->add_option("--layer", erank_layers, "Keep layers whose name contains this text (repeatable)");
  c_erank->add_option("-o,--out", erank_out, "Also write erank.json into this directory");

  auto* c_repro = app.add_subcommand("reproduce", "Run train-teacher, sweep, analyze and ablate in one go");
  detail::add_common(c_repro, repro_opts);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const auto started = utc_timestamp();
  auto record = [&](const fs::path& dir, const std::string& name, const nlohmann::ordered_json& config,
                    std::optional<std::uint64_t> seed, std::vector<std::string> outputs) {
    record_run(dir, {name, args, config, seed, std::move(outputs), started, utc_timestamp()});
  };

  try {
    if (c_teacher->parsed()) {
      const RunConfig cfg = resolve_config(teacher_opts);
      auto outputs = step_train_teacher(cfg, out);
      record(cfg.output_dir, "train-teacher", to_json(cfg), cfg.seed, outputs);
      return kExitOk;
    }
    if (c_sweep->parsed()) {
      RunConfig cfg = resolve_config(sweep_opts);
      if (sweep_jobs) cfg.parallelism = *sweep_jobs;
      const std::string teacher =
          sweep_teacher.empty() ? (fs::path(cfg.output_dir) / "teacher.ckpt").string() : sweep_teacher;
      auto step = step_sweep(cfg, teacher, out, err);
      record(cfg.output_dir, "sweep", to_json(cfg), cfg.seed, step.outputs);
      return step.failed ? kExitFailure : kExitOk;
    }
    if (c_analyze->parsed()) {
      if (!(lo > 0.0 && lo <= hi)) throw UsageError("thresholds must satisfy 0 < --lo <= --hi");
      const CurveData curve = load_curve(curve_path, teacher_acc);
      for (const auto& w : curve.warnings) err << "warning: " << w << '\n';
      if (!curve.teacher_accuracy)
        throw UsageError("teacher accuracy unknown for '" + curve_path +
                         "': pass --teacher-acc or keep sweep_meta.json next to the curve");
      const auto a = analyze(curve.knots, *curve.teacher_accuracy, {{lo, hi}, isotonic});
      fs::path dir = analyze_out.empty() ? fs::path(curve_path).parent_path() : fs::path(analyze_out);
      if (dir.empty()) dir = ".";
      fs::create_directories(dir);
      auto outputs = write_analysis(dir, a);
      report_analysis(out, err, a);
      nlohmann::ordered_json config{{"curve", curve_path},
                                    {"teacher_accuracy", *curve.teacher_accuracy},
                                    {"thresholds", {lo, hi}},
                                    {"isotonic", isotonic}};
      record(dir, "analyze", config, std::nullopt, outputs);
      return kExitOk;
    }
    if (c_ablate->parsed()) {
      RunConfig cfg = resolve_config(ablate_opts);
      if (ablate_rank) cfg.ablation_rank = *ablate_rank;
      cfg.validate();
      const std::string teacher =
          ablate_teacher.empty() ? (fs::path(cfg.output_dir) / "teacher.ckpt").string() : ablate_teacher;
      auto outputs = step_ablate(cfg, teacher, out);
      record(cfg.output_dir, "ablate", to_json(cfg), cfg.seed, outputs);
      return kExitOk;
    }
    if (c_erank->parsed()) {
      const Model m = load_checkpoint(erank_ckpt);
      const auto rows = erank_report(m, erank_layers);
      if (rows.empty()) throw UsageError("no linear layer matches the --layer filter");
      std::vector<std::vector<std::string>> table;
      nlohmann::ordered_json layers = nlohmann::ordered_json::array();
      for (const auto& r : rows) {
        const std::string stored = r.stored_rank ? std::to_string(*r.stored_rank) : "full";
        table.push_back({r.layer, std::to_string(r.d_out) + "x" + std::to_string(r.d_in), stored,
                         std::to_string(r.numerical_rank), detail::fixed(r.erank, 4)});
        layers.push_back({{"layer", r.layer},
                          {"shape", {r.d_out, r.d_in}},
                          {"stored_rank", r.stored_rank ? nlohmann::ordered_json(*r.stored_rank)
                                                        : nlohmann::ordered_json(nullptr)},
                          {"numerical_rank", r.numerical_rank},
                          {"erank", r.erank}});
      }
      out << detail::format_table({"layer", "shape", "stored_rank", "numerical_rank", "erank"}, table);
      if (!erank_out.empty()) {
        fs::create_directories(erank_out);
        nlohmann::ordered_json doc{{"schema", "rankscope.erank/1"}, {"checkpoint", erank_ckpt}, {"layers", layers}};
        write_file_atomic(fs::path(erank_out) / "erank.json", doc.dump(2) + "\n");
        record(erank_out, "erank", {{"checkpoint", erank_ckpt}, {"layers", erank_layers}}, std::nullopt,
               {"erank.json"});
      }
      return kExitOk;
    }
    if (c_repro->parsed()) {
      const RunConfig cfg = resolve_config(repro_opts);
      const std::string teacher = (fs::path(cfg.output_dir) / "teacher.ckpt").string();
      out << "== train-teacher\n";
      record(cfg.output_dir, "train-teacher", to_json(cfg), cfg.seed, step_train_teacher(cfg, out));
      out << "== sweep\n";
      auto step = step_sweep(cfg, teacher, out, err);
      record(cfg.output_dir, "sweep", to_json(cfg), cfg.seed, step.outputs);
      out << "== ablate\n";
      record(cfg.output_dir, "ablate", to_json(cfg), cfg.seed, step_ablate(cfg, teacher, out));
      return step.failed ? kExitFailure : kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingError& e) {
    err << "error: training failed: " << e.what() << '\n';
    return kExitFailure;
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace rankscope::cli
