#include "shape/ph_dynamics.hpp"

#include <cmath>

#include "shape/error.hpp"

namespace shape {

StructureOps StructureOps::inert(int dim, int rank) {
  StructureOps s;
  s.mass_diag = Tensor::full({dim}, 1.0);
  s.skew_u = Tensor::zeros({dim, rank});
  s.skew_v = Tensor::zeros({dim, rank});
  s.damp_factor = Tensor::zeros({dim, rank});
  s.damp_diag = Tensor::zeros({dim});
  s.port_shaping = Tensor::zeros({dim});
  s.damp_inject = Tensor::zeros({dim});
  s.kappa_local = Tensor::scalar(0.0);
  return s;
}

std::pair<double, double> mode_weights(StageMode mode) {
  switch (mode) {
    case StageMode::Settle: return {0.5, 1.0};
    case StageMode::Refine: return {1.0, 1.0};
    case StageMode::Escape: return {1.0, 0.25};
  }
  return {1.0, 1.0};
}

Tensor skew_apply(const Tensor& u, const Tensor& v_factor, const Tensor& vec) {
  Tensor vt_v = ops::matvec(ops::transpose(v_factor), vec);
  Tensor ut_v = ops::matvec(ops::transpose(u), vec);
  return ops::sub(ops::matvec(u, vt_v), ops::matvec(v_factor, ut_v));
}

Tensor psd_apply(const Tensor& b, const Tensor& diag, const Tensor& vec) {
  Tensor bt_v = ops::matvec(ops::transpose(b), vec);
  return ops::add(ops::matvec(b, bt_v), ops::hadamard(diag, vec));
}

std::pair<Tensor, Tensor> port_output(const Tensor& p, const Tensor& mass_diag, const Tensor& damp_inject,
                                      const Tensor& port_shaping) {
  for (double m : mass_diag.values)
    if (!(m > 0.0)) throw Error("nonpositive mass entry");
  Tensor y = ops::hadamard(ops::reciprocal(mass_diag), p);
  Tensor u_port = ops::sub(port_shaping, ops::hadamard(damp_inject, y));
  return {y, u_port};
}

std::pair<double, Tensor> shaped_potential(const Tensor& q, const PotentialFn& task, const StageContext& ctx,
                                           double kappa_local) {
  Tensor grad;
  double value = task(q, &grad);
  const double kappa = ctx.kappa_goal + kappa_local;
  if (ctx.anchor.numel() == q.numel() && kappa != 0.0) {
    double dist2 = 0.0;
    for (size_t i = 0; i < q.values.size(); ++i) {
      const double diff = q.values[i] - ctx.anchor.values[i];
      dist2 += diff * diff;
      grad.values[i] += kappa * diff;
    }
    value += 0.5 * kappa * dist2;
  }
  Memory::PotentialEval mem = ctx.memory.potential(q, ctx.mode);
  value += mem.u_mem + mem.v_bar;
  for (size_t i = 0; i < q.values.size(); ++i)
    grad.values[i] += mem.u_mem_grad.values[i] + mem.v_bar_grad.values[i];
  return {value, grad};
}

Tensor shaping_gradient(const Tensor& q, const StageContext& ctx, double kappa_local) {
  Tensor grad = Tensor::zeros(q.shape);
  const double kappa = ctx.kappa_goal + kappa_local;
  if (ctx.anchor.numel() == q.numel() && kappa != 0.0)
    for (size_t i = 0; i < q.values.size(); ++i) grad.values[i] += kappa * (q.values[i] - ctx.anchor.values[i]);
  Memory::PotentialEval mem = ctx.memory.potential(q, ctx.mode);
  for (size_t i = 0; i < q.values.size(); ++i)
    grad.values[i] += mem.u_mem_grad.values[i] + mem.v_bar_grad.values[i];
  return grad;
}

ClipBounds default_clips(const TaskSpec& task) {
  return ClipBounds{1.2 * task.domain_halfwidth, 10.0};
}

PhasePoint step_semi_implicit(const PhasePoint& x, const StageContext& ctx, const StructureOps& sops,
                              const Tensor& g_force, double h, const ClipBounds& clips, double alpha_j,
                              double alpha_r) {
  return step_semi_implicit(x, ctx, sops, g_force, h, clips, Tensor::scalar(alpha_j),
                            Tensor::scalar(alpha_r), Tensor::scalar(ctx.kappa_goal));
}

PhasePoint step_semi_implicit(const PhasePoint& x, const StageContext& ctx, const StructureOps& sops,
                              const Tensor& g_force, double h, const ClipBounds& clips,
                              const Tensor& alpha_j, const Tensor& alpha_r, const Tensor& kappa_goal) {
  if (h <= 0.0) throw Error("step size must be positive");
  const Tensor inv_mass = ops::reciprocal(sops.mass_diag);
  const Tensor v = ops::hadamard(inv_mass, x.p);

  // e^q = g_oracle + grad of the shaping terms. The oracle force and the
  // memory-induced gradients are constants on the tape; the anchor term is
  // built from recorded tensors so policy gradients flow through it.
  Tensor anchor_dir = ops::sub(x.q, ctx.anchor);
  Tensor kappa_total = ops::add(kappa_goal, sops.kappa_local);
  Tensor e_q = ops::add(detach(g_force), ops::smul(anchor_dir, kappa_total));
  Memory::PotentialEval mem = ctx.memory.potential(x.q, ctx.mode);
  Tensor mem_grad = mem.u_mem_grad;
  for (size_t i = 0; i < mem_grad.values.size(); ++i) mem_grad.values[i] += mem.v_bar_grad.values[i];
  e_q = ops::add(e_q, detach(mem_grad));

  Tensor skew_term = skew_apply(sops.skew_u, sops.skew_v, v);
  Tensor damp_term = psd_apply(sops.damp_factor, sops.damp_diag, v);
  auto [y, u_port] = port_output(x.p, sops.mass_diag, sops.damp_inject, sops.port_shaping);

  Tensor force = ops::scale(e_q, -1.0);
  force = ops::add(force, ops::smul(skew_term, alpha_j));
  force = ops::sub(force, ops::smul(damp_term, alpha_r));
  force = ops::add(force, u_port);

  PhasePoint next;
  next.p = ops::clip(ops::add(x.p, ops::scale(force, h)), -clips.p_max, clips.p_max);
  next.q = ops::clip(ops::add(x.q, ops::scale(ops::hadamard(inv_mass, next.p), h)), -clips.q_max, clips.q_max);
  if (!next.all_finite()) throw IntegrationDivergedError("semi-implicit step");
  return next;
}

std::vector<double> energy_balance_residual(const std::vector<FrozenStageStep>& window,
                                            const PotentialFn& task, const StageContext& ctx, double h) {
  if (window.size() < 2) return {};
  std::vector<double> hams(window.size());
  for (size_t n = 0; n < window.size(); ++n) {
    const auto& s = window[n];
    const double kl = s.ops.kappa_local.numel() == 1 ? s.ops.kappa_local.values[0] : 0.0;
    auto [u_val, u_grad] = shaped_potential(s.x.q, task, ctx, kl);
    double kinetic = 0.0;
    for (size_t i = 0; i < s.x.p.values.size(); ++i)
      kinetic += 0.5 * s.x.p.values[i] * s.x.p.values[i] / s.ops.mass_diag.values[i];
    hams[n] = u_val + kinetic;
  }
  std::vector<double> residuals(window.size() - 1);
  for (size_t n = 0; n + 1 < window.size(); ++n) {
    const auto& s = window[n];
    Tensor e_p = ops::hadamard(ops::reciprocal(s.ops.mass_diag), s.x.p);
    Tensor d_ep = psd_apply(s.ops.damp_factor, s.ops.damp_diag, e_p);
    const double dissip = s.alpha_r * ops::dot(e_p, d_ep).scalar_value();
    const double inject_damp = ops::dot(e_p, ops::hadamard(s.ops.damp_inject, e_p)).scalar_value();
    const double port_power = ops::dot(e_p, s.ops.port_shaping).scalar_value();
    const double balance = -dissip - inject_damp + port_power;
    residuals[n] = (hams[n + 1] - hams[n]) / h - balance;
  }
  return residuals;
}

double lyapunov_value(const PhasePoint& x, const PotentialFn& task, const StageContext& ctx,
                      const Tensor& mass_diag, double eps_cross, const Tensor& q_star, double kappa_local) {
  auto [u_q, g_q] = shaped_potential(x.q, task, ctx, kappa_local);
  auto [u_star, g_star] = shaped_potential(q_star, task, ctx, kappa_local);
  double kinetic = 0.0, cross = 0.0;
  for (size_t i = 0; i < x.p.values.size(); ++i) {
    kinetic += 0.5 * x.p.values[i] * x.p.values[i] / mass_diag.values[i];
    cross += (x.q.values[i] - q_star.values[i]) * x.p.values[i];
  }
  return u_q - u_star + kinetic + eps_cross * cross;
}

}  // namespace shape
