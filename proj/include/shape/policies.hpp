#pragma once

#include <string>
#include <vector>

#include "shape/memory.hpp"
#include "shape/nets.hpp"
#include "shape/oracles.hpp"
#include "shape/ph_dynamics.hpp"
#include "shape/tensor.hpp"

namespace shape {

// Skew/damping factor rank: low-rank heads stay cheap in high dimension.
inline int default_rank(int dim) { return dim <= 20 ? 4 : 8; }

inline Tensor reshape(Tensor t, std::vector<int> shp) {
  int64_t n = 1;
  for (int d : shp) n *= d;
  if (n != t.numel()) throw ShapeMismatchError("reshape");
  t.shape = std::move(shp);
  return t;  // node preserved: gradients are stored flat
}

struct ControllerConfig {
  int dim = 2;
  int hidden = 32;
  int rank = 4;
  int mem_readout = 12;
  double mass_floor = 0.1;  // m_min
  double u_max = 5.0;
  double halfwidth = 5.0;
};

struct LocalControllerParams {
  ControllerConfig config;
  MlpParams trunk;  // observation+action -> hidden, tanh
  MlpParams head_mass, head_kappa, head_ushp, head_kd;
  MlpParams head_skew_u, head_skew_v, head_damp_b, head_damp_d;
};

struct PlannerConfig {
  int dim = 2;
  int hidden = 32;
  int mem_readout = 12;
  double trust_radius = 1.0;
  double halfwidth = 5.0;
};

struct PlannerParams {
  PlannerConfig config;
  MlpParams trunk;
  MlpParams head_mode;    // 3 logits
  MlpParams head_anchor;  // d offset squashed into the trust region
  MlpParams head_alpha_j, head_alpha_r, head_kappa;
  MlpParams head_horizon;  // present but overridden by the fixed event clock
};

// Concatenated controller feature vector (Observation): normalized q, p,
// g, f, |g|, the task descriptor, and the memory readout. Oracle values
// enter as constants; q and p stay differentiable.
Tensor build_observation(const PhasePoint& x, const OracleSample& sample, const TaskSpec& task,
                         const Memory& memory, double halfwidth);

int observation_length(int dim, int mem_readout);
int controller_input_length(int dim, int mem_readout);
int planner_context_length(int dim, int mem_readout);

LocalControllerParams make_local_controller(const ControllerConfig& config, Rng& rng);
PlannerParams make_planner(const PlannerConfig& config, Rng& rng);

// Head squashes guarantee every StructureOps invariant by construction:
// mass through a softplus floor, damping diagonals through softplus, the
// port input through a bounded tanh, factor heads linear with 1/sqrt(d)
// scale.
StructureOps controller_forward(const LocalControllerParams& psi, const Tensor& observation,
                                const StageContext& ctx, const PhasePoint& x);

// Raw planner output; mode resolution and clipping live here, the fixed
// event clock overrides the horizon head downstream.
struct StageAction {
  Tensor mode_logits;  // length 3
  StageMode mode = StageMode::Settle;
  Tensor anchor;
  Tensor alpha_j, alpha_r, kappa_goal;  // scalars
  Tensor horizon_logit;
};

// The context carries the history summaries the slow policy needs: the
// gap between the current value and the accepted best, the stall flag of
// the ending stage, and the novelty of the current cell.
Tensor build_planner_context(const PhasePoint& x, const OracleSample& sample, const TaskSpec& task,
                             const Memory& memory, double halfwidth, double best_f_so_far,
                             bool last_stage_stalled);

StageAction planner_forward(const PlannerParams& phi, const Tensor& context, const Tensor& q_start,
                            double feasible_halfwidth);

// Ties resolve settle < refine < escape.
StageMode argmax_mode(const Tensor& logits);

// (alpha_j, alpha_r) scaled by the fixed mode weight table.
std::pair<double, double> mode_scale(double alpha_j_bar, double alpha_r_bar, StageMode mode);

// Parameter plumbing shared by training, checkpointing and the CLI.
void visit_params(LocalControllerParams& psi, const ParamVisitor& visit);
void visit_params(PlannerParams& phi, const ParamVisitor& visit);

struct PolicyPair {
  LocalControllerParams psi;
  PlannerParams phi;
};

PolicyPair make_policies(int dim, int hidden, int mem_readout, double halfwidth, uint64_t seed);
Checkpoint policies_to_checkpoint(const PolicyPair& policies);
PolicyPair policies_from_checkpoint(const Checkpoint& ck);

}  // namespace shape
