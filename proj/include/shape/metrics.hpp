#pragma once

#include <cstdint>
#include <string>

#include "shape/shape_loop.hpp"
#include "shape/tasks.hpp"

namespace shape {

struct MetricsRow {
  std::string task_id;
  std::string family;
  int dim = 0;
  uint64_t seed = 0;
  std::string method;
  std::string oracle;
  double final_dist = 0.0;
  double final_gap = 0.0;
  double best_gap = 0.0;
  double auc_gap = 0.0;
  double auc_dist = 0.0;
  double auc_best_gap = 0.0;
  int hit = 0;
  int64_t oracle_calls = 0;
  int64_t minima_visited = -1;  // -1: metric unsupported for the family
  double wall_ms = 0.0;
  int64_t extra_calls = 0;  // itemized surcharge (SAM inner step, curvature probes)
};

struct HitTolerance {
  double gap = 0.5;
  double dist = -1.0;  // < 0: no distance requirement
};

// Family-specific hit tolerances; control is relative to the initial gap.
HitTolerance hit_tolerance(const TaskSpec& task, double initial_gap);

MetricsRow compute_metrics(const RolloutTrace& trace, const TaskSpec& task, const std::string& method,
                           const std::string& oracle_tag, double wall_ms);

// Distinct finest-resolution cells containing a stall-like visit (gradient
// below threshold); defined for dims with a grid-hashable domain (d <= 2).
int64_t count_minima(const RolloutTrace& trace, const TaskSpec& task);

}  // namespace shape
