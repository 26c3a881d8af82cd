#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "shape/oracles.hpp"
#include "shape/ph_dynamics.hpp"
#include "shape/policies.hpp"

namespace shape {

struct RunConfig {
  OracleParams oracle;
  int64_t budget = 500;
  int event_horizon = 6;   // fixed slow clock H_evt
  double step_size = 0.05;
  std::optional<ClipBounds> clips;  // defaults from the task domain
  uint64_t seed = 0;

  // stall predicate thresholds
  double stall_grad_tol = 1e-3;
  double stall_p_tol = 1e-3;
  double stall_improve_tol = 1e-6;
};

enum TraceFlag : uint8_t {
  kFlagStageStart = 1,
  kFlagStall = 2,
  kFlagDivergenceReset = 4,
  kFlagMemoryWrite = 8,
};

struct TraceRow {
  int64_t step = 0;
  int stage = 0;
  std::vector<double> q;
  std::vector<double> p;
  double f = 0.0;
  double gnorm = 0.0;
  int64_t calls_used = 0;
  double best_f = 0.0;
  StageMode mode = StageMode::Settle;
  uint8_t flags = 0;
  double hamiltonian = 0.0;
};

struct RolloutTrace {
  std::vector<TraceRow> rows;
  Tensor best_q;
  double best_f = 0.0;
  Tensor final_q;
  int64_t calls_used = 0;
  int64_t budget_total = 0;
  int64_t extra_calls = 0;  // surcharge column (baseline methods with declared extras)
  int stages = 0;
  bool early_terminated = false;
  int64_t divergence_resets = 0;
};

// Conjunction of low gradient norm, low momentum norm, and no recent
// best-so-far progress over the stage window.
bool stall_detect(const std::vector<TraceRow>& stage_window, const RunConfig& cfg);

// argmin over {current best} + candidates; ties keep the earlier entry.
// Returns the index into candidates or -1 when the current best stands.
int accept_best(double current_best_f, const std::vector<double>& candidate_f);

// Two-timescale rollout: plan a frozen stage, run at most H_evt clipped
// semi-implicit steps with one charged oracle query per step, trigger on
// stall/horizon/budget, write memory, replan. Terminates exactly at budget
// exhaustion or after the convergence criterion (two consecutive settle
// stalls).
RolloutTrace run_shape(const TaskSpec& task, const RunConfig& cfg, const PolicyPair& policies);

}  // namespace shape
