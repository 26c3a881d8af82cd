#include "shape/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "shape/error.hpp"

namespace shape {

HitTolerance hit_tolerance(const TaskSpec& task, double initial_gap) {
  switch (task.family) {
    case Family::Multiwell: return {0.1, -1.0};
    case Family::Ackley:
    case Family::Levy:
    case Family::Rastrigin: return {0.5, 0.3};
    case Family::LennardJones: return {0.05 * task.lj_eps, -1.0};
    case Family::PhaseRetrieval: return {1e-2, -1.0};
    case Family::Control: return {0.05 * std::max(initial_gap, 0.0), -1.0};
  }
  return {0.5, -1.0};
}

MetricsRow compute_metrics(const RolloutTrace& trace, const TaskSpec& task, const std::string& method,
                           const std::string& oracle_tag, double wall_ms) {
  if (trace.rows.empty()) throw Error("metrics on an empty trace");
  const Reference ref = reference_optimum(task);
  const double fstar = ref.f_star;

  MetricsRow row;
  row.task_id = task.id;
  row.family = family_name(task.family);
  row.dim = task.dim;
  row.seed = task.seed;
  row.method = method;
  row.oracle = oracle_tag;

  const auto& rows = trace.rows;
  row.final_gap = rows.back().f - fstar;
  double best_f = rows.front().f;
  Tensor best_q = Tensor::vector(rows.front().q);
  double auc_gap = 0.0, auc_dist = 0.0, auc_best = 0.0;
  for (size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].f < best_f) {
      best_f = rows[k].f;
      best_q = Tensor::vector(rows[k].q);
    }
    auc_gap += rows[k].f - fstar;
    auc_best += rows[k].best_f - fstar;
    auc_dist += reference_distance(task, Tensor::vector(rows[k].q));
  }
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  row.best_gap = best_f - fstar;
  row.auc_gap = auc_gap * inv_n;
  row.auc_best_gap = auc_best * inv_n;
  row.auc_dist = auc_dist * inv_n;
  row.final_dist = reference_distance(task, Tensor::vector(rows.back().q));

  const double initial_gap = rows.front().f - fstar;
  const HitTolerance tol = hit_tolerance(task, initial_gap);
  bool hit = row.best_gap <= tol.gap;
  if (tol.dist >= 0.0) hit = hit && reference_distance(task, best_q) <= tol.dist;
  row.hit = hit ? 1 : 0;

  row.oracle_calls = trace.calls_used;
  row.extra_calls = trace.extra_calls;
  row.wall_ms = wall_ms;
  row.minima_visited = count_minima(trace, task);
  return row;
}

int64_t count_minima(const RolloutTrace& trace, const TaskSpec& task) {
  if (task.dim > 2) return -1;  // unsupported-metric marker
  const double hw = task.domain_halfwidth;
  const int bins = 32;  // finest memory resolution
  const double w = 2.0 * hw / bins;
  std::set<int64_t> cells;
  for (const auto& row : trace.rows) {
    if (row.gnorm >= 1e-3 * (1.0 + std::abs(row.f))) continue;
    int64_t key = 0;
    for (double qv : row.q) {
      const double x = std::clamp(qv, -hw, hw - 1e-12);
      const int bin = std::clamp(static_cast<int>((x + hw) / w), 0, bins - 1);
      key = key * (bins + 1) + bin + 1;
    }
    cells.insert(key);
  }
  return static_cast<int64_t>(cells.size());
}

}  // namespace shape
