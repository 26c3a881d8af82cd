#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shape/ph_dynamics.hpp"
#include "shape/shape_loop.hpp"
#include "shape/tasks.hpp"

namespace shape {

// Random symmetric positive-definite quadratic 0.5 q^T A q with eigenvalues
// in [lambda_min, lambda_max].
struct QuadraticSpec {
  int dim = 4;
  uint64_t seed = 0;
  double lambda_min = 0.5;
  double lambda_max = 3.0;
};

PotentialFn make_quadratic(const QuadraticSpec& spec);

struct ContractionFit {
  double h = 0.0;
  double rate = 0.0;       // fitted c in V(t) <= V(0) exp(-c t)
  double r_squared = 0.0;
  bool conservative = false;  // no damping present: rate ~ 0 expected
  bool pass = false;
};

struct ContractionResult {
  std::vector<ContractionFit> fits;
  bool pass = false;
};

// Frozen-stage decay study: simulate with D = I, ports off, fit the decay
// rate of the modified Lyapunov value after a transient; pass when c > 0
// with R^2 >= 0.99. steps < 0 sizes the run to cover ~30 time units so the
// fit window spans many decades.
ContractionResult contraction_suite(const QuadraticSpec& spec, const std::vector<double>& h_list,
                                    int steps = -1, double eps_cross = 0.05);

// Undamped variant (D = 0, skew off): reports "conservative" and passes
// when the fitted rate is negligible.
ContractionResult conservative_suite(const QuadraticSpec& spec, double h = 0.01, int steps = 800,
                                     double eps_cross = 0.05);

struct DefectLedger {
  double truncation = 0.0;  // C1 h / c channel
  double port_work = 0.0;
  double projection = 0.0;  // clipping defects (positive part)
  double fitted_rate = 0.0;
  double terminal_value = 0.0;
  double predicted_terminal = 0.0;
  bool pass = false;  // terminal <= predicted + 2 * defects
};

// Discrete defect accounting along one frozen stage with an exact oracle.
DefectLedger defect_suite(const QuadraticSpec& spec, double h, int steps, double p_clip = 1e9,
                          double eps_cross = 0.05);

struct StochasticFloorPoint {
  double sigma = 0.0;
  double mean_lyapunov = 0.0;
};

struct StochasticFloorResult {
  std::vector<StochasticFloorPoint> points;
  double slope_vs_sigma2 = 0.0;
  double r_squared = 0.0;
  bool pass = false;  // positive slope with R^2 >= 0.9
};

// Long-run Lyapunov floor under gradient noise grows affinely in sigma^2.
StochasticFloorResult stochastic_floor_suite(const QuadraticSpec& spec, const std::vector<double>& sigmas,
                                             double h = 0.01, int steps = 4000, int replicas = 16);

// Exact monotone-acceptance check over any trace (zero tolerance).
bool monotone_acceptance_ok(const RolloutTrace& trace);

std::string diagnostics_table(const ContractionResult& contraction, const DefectLedger& defects,
                              const StochasticFloorResult& floor);

}  // namespace shape
