#pragma once

// Reading accuracy-vs-rank curves and writing analysis results.
//
// Accepted curve files:
//   *.csv    header "rank,accuracy", one knot per line
//   *.jsonl  native sweep records ({"rank", "final_val_accuracy", ...}); the
//            teacher accuracy is taken from sweep_meta.json next to it.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankscope/checkpoint.hpp"
#include "rankscope/curve.hpp"

namespace rankscope {

struct CurveData {
  std::vector<Knot> knots;  // sorted by rank, deduplicated
  std::optional<double> teacher_accuracy;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_number(const std::string& field, const std::string& path, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw FormatError(path + ":" + std::to_string(line_no) + ": malformed number '" + field + "'");
  }
}

}  // namespace detail

/// Sorts by rank, keeps the last occurrence of a repeated rank, validates.
inline CurveData finalize_curve(std::vector<std::pair<Knot, std::size_t>> rows, const std::string& path,
                                std::optional<double> teacher) {
  CurveData out;
  out.teacher_accuracy = teacher;
  std::map<double, Knot> by_rank;
  for (const auto& [k, line] : rows) {
    if (!(k.y >= 0.0 && k.y <= 1.0))
      throw FormatError(path + ":" + std::to_string(line) + ": accuracy " + std::to_string(k.y) + " outside [0, 1]");
    if (!(k.x > 0.0)) throw FormatError(path + ":" + std::to_string(line) + ": rank must be positive");
    if (by_rank.count(k.x)) {
      std::ostringstream os;
      os << path << ":" << line << ": duplicate rank " << k.x << ", keeping the last value";
      out.warnings.push_back(os.str());
    }
    by_rank[k.x] = k;
  }
  for (const auto& [x, k] : by_rank) out.knots.push_back(k);
  if (out.knots.size() < 2)
    throw FormatError(path + ": need at least 2 distinct ranks, found " + std::to_string(out.knots.size()));
  if (teacher && !(*teacher > 0.0 && *teacher <= 1.0))
    throw FormatError(path + ": teacher accuracy must lie in (0, 1]");
  return out;
}

inline CurveData parse_curve_csv(std::istream& is, const std::string& path) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::pair<Knot, std::size_t>> rows;
  bool header_seen = false;
  int rank_col = -1, acc_col = -1;
  while (std::getline(is, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(detail::trim(f));
    if (!header_seen) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] == "rank") rank_col = static_cast<int>(i);
        if (fields[i] == "accuracy") acc_col = static_cast<int>(i);
      }
      if (rank_col < 0 || acc_col < 0)
        throw FormatError(path + ":" + std::to_string(line_no) + ": expected header 'rank,accuracy'");
      header_seen = true;
      continue;
    }
    if (fields.size() <= static_cast<std::size_t>(std::max(rank_col, acc_col)))
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(std::max(rank_col, acc_col) + 1) + " fields");
    rows.push_back({{detail::parse_number(fields[rank_col], path, line_no),
                     detail::parse_number(fields[acc_col], path, line_no)},
                    line_no});
  }
  if (!header_seen) throw FormatError(path + ": empty curve file");
  return finalize_curve(std::move(rows), path, std::nullopt);
}

inline CurveData parse_curve_jsonl(std::istream& is, const std::string& path, std::optional<double> teacher) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::pair<Knot, std::size_t>> rows;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const double rank = j.at("rank").get<double>();
      const double acc = j.contains("final_val_accuracy") ? j.at("final_val_accuracy").get<double>()
                                                          : j.at("accuracy").get<double>();
      rows.push_back({{rank, acc}, line_no});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": malformed record (" + e.what() + ")");
    }
  }
  return finalize_curve(std::move(rows), path, teacher);
}

/// Loads a curve; `teacher_override` takes precedence over a sidecar value.
inline CurveData load_curve(const std::string& path, std::optional<double> teacher_override = std::nullopt) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open curve file '" + path + "'");
  const auto ext = std::filesystem::path(path).extension().string();
  CurveData c;
  if (ext == ".csv") {
    c = parse_curve_csv(is, path);
  } else {
    std::optional<double> teacher;
    const auto meta = std::filesystem::path(path).parent_path() / "sweep_meta.json";
    if (std::ifstream ms(meta); ms) {
      try {
        teacher = nlohmann::json::parse(ms).at("teacher_accuracy").get<double>();
      } catch (const nlohmann::json::exception&) {
        throw FormatError(meta.string() + ": missing or malformed teacher_accuracy");
      }
    }
    c = parse_curve_jsonl(is, path, teacher);
  }
  if (teacher_override) {
    if (!(*teacher_override > 0.0 && *teacher_override <= 1.0))
      throw FormatError("teacher accuracy must lie in (0, 1]");
    c.teacher_accuracy = teacher_override;
  }
  return c;
}

inline std::string to_string(RegionStatus s) {
  switch (s) {
    case RegionStatus::Found: return "found";
    case RegionStatus::RightOpen: return "right_open";
    case RegionStatus::NoRegion: return "none";
  }
  return "";
}

/// analysis.json document.
inline nlohmann::ordered_json to_json(const RankCurveAnalysis& a) {
  nlohmann::ordered_json j;
  j["schema"] = "rankscope.analysis/1";
  j["region"] = a.region.found() ? nlohmann::ordered_json::array({a.region.lo, a.region.hi})
                                 : nlohmann::ordered_json(nullptr);
  j["region_status"] = to_string(a.region.status);
  j["knee"] = a.knee.found() ? nlohmann::ordered_json(a.knee.rank) : nlohmann::ordered_json(nullptr);
  j["teacher_accuracy"] = a.teacher_accuracy;
  j["thresholds"] = {a.thresholds.lo, a.thresholds.hi};
  j["knots"] = nlohmann::ordered_json::array();
  for (const auto& k : a.knots) j["knots"].push_back({k.x, k.y});
  j["dense_curve"] = nlohmann::ordered_json::array();
  for (const auto& [r, g] : a.normalized_curve) j["dense_curve"].push_back({r, g});
  return j;
}

}  // namespace rankscope
