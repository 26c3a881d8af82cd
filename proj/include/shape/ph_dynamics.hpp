#pragma once

#include <utility>
#include <vector>

#include "shape/memory.hpp"
#include "shape/tasks.hpp"
#include "shape/tensor.hpp"

namespace shape {

// Augmented optimizer state (q, p).
struct PhasePoint {
  Tensor q;
  Tensor p;

  bool all_finite() const { return q.all_finite() && p.all_finite(); }
};

// Frozen slow-planner output plus the memory snapshot the stage runs under.
struct StageContext {
  Tensor anchor;
  StageMode mode = StageMode::Settle;
  double alpha_j = 0.5;     // skew modulation, in (0,1)
  double alpha_r = 0.5;     // dissipation modulation, in (0,1)
  double kappa_goal = 0.1;  // stagewise anchor gain, > 0
  int horizon = 6;
  Memory memory;  // frozen m_s^0

  // Recorded copies of the gains, set during rollout training so the
  // controller's conditioning features stay differentiable w.r.t. the
  // planner. Empty in frozen evaluation.
  Tensor alpha_j_t, alpha_r_t, kappa_goal_t;
  bool has_taped_gains() const {
    return alpha_j_t.numel() == 1 && alpha_r_t.numel() == 1 && kappa_goal_t.numel() == 1;
  }
};

// Fast-head outputs. Tensors may carry tape nodes during training; every
// structural guarantee (skew, PSD, positive mass) holds by construction.
struct StructureOps {
  Tensor mass_diag;     // M diag, > 0
  Tensor skew_u;        // U^Omega, {d, r}
  Tensor skew_v;        // V^Omega, {d, r}
  Tensor damp_factor;   // B^D, {d, r}
  Tensor damp_diag;     // d^D, >= 0
  Tensor port_shaping;  // u_shp
  Tensor damp_inject;   // K_d diag, >= 0
  Tensor kappa_local;   // scalar, >= 0

  static StructureOps inert(int dim, int rank);
};

// Mode weights (beta_J, beta_R): settle damps transport, escape sheds
// damping.
std::pair<double, double> mode_weights(StageMode mode);

// low-rank commutator U (V^T v) - V (U^T v); skew by construction
Tensor skew_apply(const Tensor& u, const Tensor& v_factor, const Tensor& vec);

// B (B^T v) + d .* v; PSD by construction
Tensor psd_apply(const Tensor& b, const Tensor& diag, const Tensor& vec);

// y = M^-1 p, u_port = u_shp - K_d .* y
std::pair<Tensor, Tensor> port_output(const Tensor& p, const Tensor& mass_diag, const Tensor& damp_inject,
                                      const Tensor& port_shaping);

// Stage-shaped potential f(q) + kappa/2 |q - anchor|^2 + U_mem + V_bar with
// its exact analytic gradient. kappa = ctx.kappa_goal + kappa_local.
std::pair<double, Tensor> shaped_potential(const Tensor& q, const PotentialFn& task, const StageContext& ctx,
                                           double kappa_local);

// Gradient of the non-task shaping terms only (anchor + memory + barrier).
Tensor shaping_gradient(const Tensor& q, const StageContext& ctx, double kappa_local);

struct ClipBounds {
  double q_max = 6.0;
  double p_max = 10.0;
};

ClipBounds default_clips(const TaskSpec& task);

// One clipped semi-implicit step: momentum first, then position (the order
// is normative). g_force is the oracle estimate at x.q and enters the
// effort as a constant; the anchor term stays differentiable through ops
// and ctx so training gradients reach the policy heads.
PhasePoint step_semi_implicit(const PhasePoint& x, const StageContext& ctx, const StructureOps& ops,
                              const Tensor& g_force, double h, const ClipBounds& clips, double alpha_j,
                              double alpha_r);

// Taped variant: the stage gains enter as scalar tensors so rollout
// training can differentiate through them. ctx.anchor is used as given
// (detach it for frozen evaluation).
PhasePoint step_semi_implicit(const PhasePoint& x, const StageContext& ctx, const StructureOps& ops,
                              const Tensor& g_force, double h, const ClipBounds& clips,
                              const Tensor& alpha_j, const Tensor& alpha_r, const Tensor& kappa_goal);

// Per-step record used by the energy diagnostics.
struct FrozenStageStep {
  PhasePoint x;
  StructureOps ops;
  Tensor g;  // exact gradient at x.q
  double alpha_j = 0.0;
  double alpha_r = 0.0;
};

// residual_n = dH/h - [-(e^p)^T aR D e^p - y^T Kd y + y^T u_shp]; needs
// states.size() == steps + 1 samples of one frozen stage.
std::vector<double> energy_balance_residual(const std::vector<FrozenStageStep>& window,
                                            const PotentialFn& task, const StageContext& ctx, double h);

// U_shaped(q) - U_shaped(q_star) + p^T M^-1 p / 2 + eps (q - q_star)^T p
double lyapunov_value(const PhasePoint& x, const PotentialFn& task, const StageContext& ctx,
                      const Tensor& mass_diag, double eps_cross, const Tensor& q_star,
                      double kappa_local = 0.0);

}  // namespace shape
