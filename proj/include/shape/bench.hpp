#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shape/baselines.hpp"
#include "shape/metrics.hpp"
#include "shape/parallel.hpp"
#include "shape/policies.hpp"
#include "shape/training.hpp"

namespace shape {

// Run configuration document: structured text with [task], [oracle],
// [methods], [budget] and [train] sections. Environment variables prefixed
// SHAPE_ override entries, e.g. SHAPE_BUDGET_TOTAL=1000.
struct BenchConfig {
  // [task]
  Family family = Family::Ackley;
  int dim = 2;
  int task_count = 8;
  uint64_t seed = 1;
  TaskOptions task_options;

  // [oracle]
  OracleParams oracle;

  // [methods]
  std::vector<std::string> methods = {"shape", "gd", "momentum", "nag", "adam", "rmsprop"};
  std::string checkpoint;  // policy source for the learned method

  // [budget]
  int64_t budget = 500;
  int particles = 1;  // rollouts per task (paired across methods)

  // [train] - used when the learned method runs without a checkpoint
  int train_epochs = -1;  // -1: schedule default
  uint64_t train_seed = 0;
  bool use_memory = true;
  bool train_controller = true;
};

BenchConfig parse_config(const std::string& text);
BenchConfig load_config(const std::string& path);
std::string render_config(const BenchConfig& cfg);

// Aggregate over (family, dim, method).
struct AggregateRow {
  std::string family;
  int dim = 0;
  std::string method;
  int runs = 0;
  double mean_final_gap = 0, std_final_gap = 0, median_final_gap = 0;
  double mean_best_gap = 0, std_best_gap = 0, median_best_gap = 0;
  double mean_final_dist = 0, mean_auc_gap = 0;
  double hit_rate = 0;
  double mean_calls = 0;
  bool best_method = false;  // lowest mean best gap in its block
};

struct BenchReport {
  std::vector<MetricsRow> rows;
  std::vector<AggregateRow> aggregates;
  // per-method mean best-so-far gap at each call index (plot series)
  std::map<std::string, std::vector<double>> best_gap_curves;
};

// Every method sees identical task instances, initial points, paired noise
// streams and total budget. Pass the learned policies when the method list
// includes "shape".
BenchReport run_benchmark(const BenchConfig& cfg, const PolicyPair* policies, ExecMode exec);

// CSV schema: fixed column order matching MetricsRow (extra_calls last),
// 17 significant digits.
std::string rows_to_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> rows_from_csv(const std::string& text);

std::string report_to_text(const BenchReport& report);

// best-so-far gap vs oracle calls, log-y, one line per method
std::string render_best_gap_svg(const BenchReport& report, const std::string& title);
// bar chart of mean best gaps per method, rebuilt from rows alone
std::string render_rows_svg(const std::vector<MetricsRow>& rows, const std::string& title);

// Recompute aggregates from rows (consistency check for the report).
std::vector<AggregateRow> aggregate_rows(const std::vector<MetricsRow>& rows);

}  // namespace shape
