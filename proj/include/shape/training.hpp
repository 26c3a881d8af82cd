#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shape/oracles.hpp"
#include "shape/parallel.hpp"
#include "shape/policies.hpp"
#include "shape/shape_loop.hpp"

namespace shape {

struct ProbeConfig {
  int k_probe = 8;
  std::vector<double> radii = {0.25, 0.5, 1.0};  // cycled over candidates
  double lambda_nov = 0.1;
  double lambda_risk = 0.05;
  double improve_frac = 0.05;      // refine when Improve > frac * (1 + |f|)
  double novelty_threshold = 0.9;  // escape arm of the label rule
};

struct LossWeights {
  double term = 1.0;
  double best = 0.5;
  double prog = 0.10;
  double ce = 0.40;
  double sg = 0.25;
  double ctrl = 1e-3;
  double jr = 5e-4;
  double port = 5e-4;
};

struct TrainSchedule {
  int epochs = 500;
  int pretrain_steps = 100;
  int controller_updates = 2;
  int planner_updates = 2;
  int batch = 64;
  int hidden = 32;
  int train_rollout = 128;
  int eval_rollout = 500;
  int bptt_window = 32;
  double meta_lr = 1e-3;
};

// Rows of the published schedule table, keyed by dimension.
TrainSchedule schedule_for_dim(int dim);

// Oracle calls consumed by training-only machinery, kept apart from any
// evaluation budget.
struct TrainLedger {
  int64_t teacher_calls = 0;
  int64_t rollout_calls = 0;
};

struct TeacherLabel {
  Tensor anchor;
  StageMode mode = StageMode::Settle;
  Tensor escape_direction;  // unit vector toward the most novel probe, or zeros
  double best_score = 0.0;
  double improve = 0.0;
};

// Probe-based stage teacher: candidate set from gradient, momentum,
// memory-novel and random directions; scored by improvement over the
// accepted best-so-far value, novelty and excursion risk. Escape labels
// anchor at the most novel candidate so a climb out of an exhausted basin
// stays labelled escape until a genuinely better basin appears.
TeacherLabel probe_teacher(const TaskSpec& task, const PhasePoint& x, double f_at_q, double best_f_so_far,
                           const Tensor& g_at_q, const Memory& memory, const ProbeConfig& probe,
                           bool stalled, Rng& rng, TrainLedger& ledger);

struct TrainJob {
  Family family = Family::Multiwell;
  int dim = 1;
  TaskOptions task_options;
  TrainSchedule schedule;
  OracleParams oracle;  // exact first-order by default
  ProbeConfig probe;
  LossWeights weights;
  double step_size = 0.05;
  int event_horizon = 6;
  uint64_t seed = 0;
  bool use_memory = true;
  bool train_controller = true;  // false: planner-only ablation
  ExecMode exec = ExecMode::Serial;
};

struct LossCurveRow {
  int epoch = 0;
  std::string phase;
  double total = 0.0;
  double term = 0.0, best = 0.0, prog = 0.0, plan_ce = 0.0, plan_sg = 0.0, ctrl = 0.0, jr = 0.0, port = 0.0;
};

struct TrainResult {
  PolicyPair policies;
  std::vector<LossCurveRow> curve;
  TrainLedger ledger;
};

// Phase I: with planner outputs forced to the probe teacher, regress the
// first-step momentum change onto the teacher force. One meta step on psi.
double phase1_local_pretrain(PolicyPair& policies, MetaAdam& opt, const TrainJob& job, uint64_t batch_seed,
                             TrainLedger& ledger);

// Phase II: supervised planner loss (mode cross-entropy + anchor Huber) on
// teacher-labelled contexts. One meta step on phi.
double phase2_planner(PolicyPair& policies, MetaAdam& opt, const TrainJob& job, uint64_t batch_seed,
                      TrainLedger& ledger);

// Phase III: joint rollout update with the full weighted objective.
LossCurveRow phase3_rollout_update(PolicyPair& policies, MetaAdam& opt, const TrainJob& job,
                                   uint64_t batch_seed, TrainLedger& ledger);

TrainResult train(const TrainJob& job);

// Global-norm gradient clipping used by every meta update.
void clip_gradients_global_norm(std::vector<Tensor>& grads, double max_norm);

}  // namespace shape
