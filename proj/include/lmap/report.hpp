#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "lmap/error.hpp"
#include "lmap/pipeline.hpp"
#include "lmap/synth.hpp"

namespace lmap {

using nlohmann::json;

struct MeanStd {
  double mean {0.0};
  double std {0.0};
  std::size_t count {0};
};

/// Sample standard deviation (zero for fewer than two values).
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  m.count = xs.size();
  if (xs.empty()) {
    return m;
  }
  double sum = 0.0;
  for (double x : xs) {
    sum += x;
  }
  m.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) {
      ss += (x - m.mean) * (x - m.mean);
    }
    m.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

inline double least_squares_slope(const std::vector<double>& ys) {
  const auto n = static_cast<double>(ys.size());
  if (ys.size() < 2) {
    return 0.0;
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const auto x = static_cast<double>(i);
    sx += x;
    sy += ys[i];
    sxx += x * x;
    sxy += x * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace detail {

inline json mean_std_json(const MeanStd& m) { return json{{"mean_ms", m.mean}, {"std_ms", m.std}, {"count", m.count}}; }

inline MeanStd mean_std_from_json(const json& j) {
  return {j.at("mean_ms").get<double>(), j.at("std_ms").get<double>(), j.at("count").get<std::size_t>()};
}

}  // namespace detail

// Stage statistics run over the keyframes on which the stage executed.
inline json run_report(const Sequence& seq, const std::vector<RunResult>& runs) {
  require(!runs.empty(), ErrorCode::kInvalidArgument, "report needs at least one run");
  const PipelineConfig& cfg = runs.front().config;

  std::array<std::vector<double>, kStageCount> per_stage;
  std::vector<double> totals;
  for (const RunResult& r : runs) {
    for (const StageTimings& t : r.timings) {
      for (std::size_t s = 0; s < kStageCount; ++s) {
        const bool skipped = (s == static_cast<std::size_t>(Stage::kLba) && !t.lba_ran) ||
                             (s == static_cast<std::size_t>(Stage::kKfCull) && !t.culling_ran);
        if (!skipped) {
          per_stage[s].push_back(t.stage_ms[s]);
        }
      }
      totals.push_back(t.total_ms);
    }
  }
  json stages = json::object();
  for (std::size_t s = 0; s < kStageCount; ++s) {
    stages[std::string(kStageNames[s])] = detail::mean_std_json(mean_std(per_stage[s]));
  }
  stages["total"] = detail::mean_std_json(mean_std(totals));

  json per_run = json::array();
  std::vector<double> ates;
  double lba_skips = 0.0, culling_skips = 0.0, dropped = 0.0;
  for (const RunResult& r : runs) {
    std::optional<double> a;
    if (!seq.ground_truth.empty() && r.trajectory.size() >= 3) {
      a = run_ate(seq, r);
      ates.push_back(*a);
    }
    std::vector<double> totals_trace;
    for (const StageTimings& t : r.timings) {
      totals_trace.push_back(t.total_ms);
    }
    const double slope = least_squares_slope(totals_trace);
    const TransferLedger& l = r.ledger;
    std::uint64_t small = 0;
    for (const SmallTransfer& s : l.per_stage_small_transfers) {
      small += s.bytes;
    }
    per_run.push_back(json{
        {"processed", r.processed},
        {"ate_rmse", a ? json(*a) : json(nullptr)},
        {"lba_skips", r.skips.lba_skips},
        {"culling_skips", r.skips.culling_skips},
        {"forced_lba_skips", r.skips.forced_lba_skips},
        {"dropped", r.skips.dropped},
        {"queue_depth_trace", r.skips.queue_depth_trace},
        {"stress_period_ms", r.stress_period_ms},
        {"map_digest", r.map_digest},
        {"audit_violations", r.audit_violations},
        {"errors", r.errors.size()},
        {"ledger",
         {{"persistent_bytes_up", l.persistent_bytes_up},
          {"naive_bytes_up", l.naive_bytes_up},
          {"small_transfer_bytes", small},
          {"evictions", l.evictions}}},
        {"counters",
         {{"intake_associations", r.counters.intake_associations},
          {"points_created", r.counters.points_created},
          {"recent_removed", r.counters.recent_removed},
          {"fusion_merged", r.counters.fusion_merged},
          {"fusion_observations_added", r.counters.fusion_observations_added},
          {"lba_runs", r.counters.lba_runs},
          {"lba_iterations", r.counters.lba_iterations},
          {"keyframes_culled", r.counters.keyframes_culled}}},
        {"total_ms_trace", totals_trace},
        {"total_ms_slope", slope}});
    lba_skips += r.skips.lba_skips;
    culling_skips += r.skips.culling_skips;
    dropped += r.skips.dropped;
  }
  const double nr = static_cast<double>(runs.size());
  const MeanStd ate_stats = mean_std(ates);
  return json{{"mode", std::string(to_string(cfg.mode))},
              {"workers", cfg.effective_workers()},
              {"stress", cfg.stress},
              {"force_skip_lba", cfg.force_skip_lba},
              {"repeat", runs.size()},
              {"sequence", {{"config", detail::world_config_to_json(seq.config)}, {"keyframes", seq.keyframes.size()}}},
              {"stages", std::move(stages)},
              {"ate_rmse", ates.empty() ? json(nullptr) : json(ate_stats.mean)},
              {"lba_skips", lba_skips / nr},
              {"culling_skips", culling_skips / nr},
              {"dropped", dropped / nr},
              {"runs", std::move(per_run)}};
}

// ----------------------------------------------------------------------------
// Tables
// ----------------------------------------------------------------------------

namespace detail {

inline std::string fmt_ms(const json& st) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f +- %.3f", st.at("mean_ms").get<double>(), st.at("std_ms").get<double>());
  return buf;
}

inline std::string fmt_num(const json& v, const char* f) {
  if (v.is_null()) {
    return "-";
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v.get<double>());
  return buf;
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) {
    s.append(w - s.size(), ' ');
  }
  return s;
}

inline std::vector<std::string> table_rows() {
  std::vector<std::string> rows;
  for (auto n : kStageNames) {
    rows.emplace_back(n);
  }
  rows.emplace_back("total");
  return rows;
}

}  // namespace detail

/// Single run: stage time column only.
inline std::string run_table(const json& report) {
  using detail::pad;
  std::string out = pad("Stage", 18) + "Time (ms)\n";
  for (const std::string& row : detail::table_rows()) {
    out += pad(row, 18) + detail::fmt_ms(report.at("stages").at(row)) + "\n";
  }
  out += pad("ATE RMSE (m)", 18) + detail::fmt_num(report.at("ate_rmse"), "%.4f") + "\n";
  out += pad("LBA skips", 18) + detail::fmt_num(report.at("lba_skips"), "%.1f") + "\n";
  return out;
}

/// Paired baseline/optimized runs: per-stage and total speedups.
inline json compare_reports(const json& baseline, const json& optimized) {
  require(baseline.at("mode") == "baseline" && optimized.at("mode") == "optimized", ErrorCode::kInvalidArgument,
          "compare expects a baseline report and an optimized report");
  require(baseline.at("sequence") == optimized.at("sequence"), ErrorCode::kInvalidArgument,
          "reports come from different sequences");
  require(baseline.at("stress") == optimized.at("stress"), ErrorCode::kInvalidArgument,
          "reports differ in stress setting");
  json stages = json::object();
  for (const std::string& row : detail::table_rows()) {
    const MeanStd b = detail::mean_std_from_json(baseline.at("stages").at(row));
    const MeanStd o = detail::mean_std_from_json(optimized.at("stages").at(row));
    stages[row] = json{{"baseline", baseline.at("stages").at(row)},
                       {"optimized", optimized.at("stages").at(row)},
                       {"speedup", o.mean > 0.0 ? json(b.mean / o.mean) : json(nullptr)}};
  }
  return json{{"sequence", baseline.at("sequence")},
              {"stages", std::move(stages)},
              {"ate_rmse", {{"baseline", baseline.at("ate_rmse")}, {"optimized", optimized.at("ate_rmse")}}},
              {"lba_skips", {{"baseline", baseline.at("lba_skips")}, {"optimized", optimized.at("lba_skips")}}},
              {"dropped", {{"baseline", baseline.at("dropped")}, {"optimized", optimized.at("dropped")}}},
              {"workers", optimized.at("workers")}};
}

inline std::string compare_table(const json& cmp) {
  using detail::pad;
  std::string out = pad("Stage", 18) + pad("Baseline (ms)", 22) + pad("Optimized (ms)", 22) + "Speed-up\n";
  for (const std::string& row : detail::table_rows()) {
    const json& st = cmp.at("stages").at(row);
    out += pad(row, 18) + pad(detail::fmt_ms(st.at("baseline")), 22) + pad(detail::fmt_ms(st.at("optimized")), 22) +
           detail::fmt_num(st.at("speedup"), "%.2fx") + "\n";
  }
  out += pad("ATE RMSE (m)", 18) + pad(detail::fmt_num(cmp.at("ate_rmse").at("baseline"), "%.4f"), 22) +
         pad(detail::fmt_num(cmp.at("ate_rmse").at("optimized"), "%.4f"), 22) + "\n";
  out += pad("LBA skips", 18) + pad(detail::fmt_num(cmp.at("lba_skips").at("baseline"), "%.1f"), 22) +
         pad(detail::fmt_num(cmp.at("lba_skips").at("optimized"), "%.1f"), 22) + "\n";
  return out;
}

}  // namespace lmap
