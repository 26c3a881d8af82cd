#include "shape/policies.hpp"

#include <cmath>

#include "shape/error.hpp"

namespace shape {

namespace {

Tensor mode_one_hot(StageMode m) {
  Tensor t = Tensor::zeros({3});
  t.values[static_cast<size_t>(m)] = 1.0;
  return t;
}

MlpParams make_head(int in, int out, Rng& rng) { return make_mlp({in, out}, rng); }

// Memory readout carries raw running statistics; squash the value channels
// so every network input stays O(1).
Tensor bounded_memory_features(const std::vector<double>& raw) {
  std::vector<double> out(raw);
  for (size_t i = 0; i + 3 < out.size(); i += 4) {
    out[i + 1] = out[i + 1] / (1.0 + std::abs(out[i + 1]));  // mean f
    out[i + 2] = std::log1p(std::max(out[i + 2], 0.0)) / 3.0;  // mean |g|
    out[i + 3] = out[i + 3] / (1.0 + std::abs(out[i + 3]));  // best f
  }
  return Tensor::vector(std::move(out));
}

}  // namespace

int observation_length(int dim, int mem_readout) { return 3 * dim + 2 + 4 + mem_readout; }
int controller_input_length(int dim, int mem_readout) {
  return observation_length(dim, mem_readout) + dim + 3 + 3;
}
int planner_context_length(int dim, int mem_readout) { return 3 * dim + 4 + 4 + mem_readout; }

Tensor build_observation(const PhasePoint& x, const OracleSample& sample, const TaskSpec& task,
                         const Memory& memory, double halfwidth) {
  const double gnorm = ops::norm2(detach(sample.g)).scalar_value();
  Tensor g_feat = ops::scale(detach(sample.g), 1.0 / (1.0 + gnorm));
  std::vector<double> scalars = {sample.f / (1.0 + std::abs(sample.f)), std::log1p(gnorm)};
  std::vector<Tensor> parts = {ops::scale(x.q, 1.0 / halfwidth), ops::scale(x.p, 0.1), g_feat,
                               Tensor::vector(scalars), Tensor::vector(task_descriptor(task))};
  const std::vector<double> mem = memory.read(x.q);
  if (!mem.empty()) parts.push_back(bounded_memory_features(mem));
  return ops::concat(parts);
}

Tensor build_planner_context(const PhasePoint& x, const OracleSample& sample, const TaskSpec& task,
                             const Memory& memory, double halfwidth, double best_f_so_far,
                             bool last_stage_stalled) {
  const double gnorm = ops::norm2(detach(sample.g)).scalar_value();
  Tensor g_feat = ops::scale(detach(sample.g), 1.0 / (1.0 + gnorm));
  const double gap = sample.f - best_f_so_far;
  std::vector<double> scalars = {sample.f / (1.0 + std::abs(sample.f)), gap / (1.0 + std::abs(gap)),
                                 last_stage_stalled ? 1.0 : 0.0, memory.novelty(x.q)};
  std::vector<Tensor> parts = {ops::scale(x.q, 1.0 / halfwidth), ops::scale(x.p, 0.1), g_feat,
                               Tensor::vector(scalars), Tensor::vector(task_descriptor(task))};
  const std::vector<double> mem = memory.read(x.q);
  if (!mem.empty()) parts.push_back(bounded_memory_features(mem));
  return ops::concat(parts);
}

LocalControllerParams make_local_controller(const ControllerConfig& config, Rng& rng) {
  LocalControllerParams psi;
  psi.config = config;
  const int in = controller_input_length(config.dim, config.mem_readout);
  const int d = config.dim, r = config.rank, h = config.hidden;
  psi.trunk = make_mlp({in, h}, rng);
  psi.head_mass = make_head(h, d, rng);
  psi.head_kappa = make_head(h, 1, rng);
  psi.head_ushp = make_head(h, d, rng);
  psi.head_kd = make_head(h, d, rng);
  psi.head_skew_u = make_head(h, d * r, rng);
  psi.head_skew_v = make_head(h, d * r, rng);
  psi.head_damp_b = make_head(h, d * r, rng);
  psi.head_damp_d = make_head(h, d, rng);
  return psi;
}

PlannerParams make_planner(const PlannerConfig& config, Rng& rng) {
  PlannerParams phi;
  phi.config = config;
  const int in = planner_context_length(config.dim, config.mem_readout);
  const int h = config.hidden;
  phi.trunk = make_mlp({in, h}, rng);
  phi.head_mode = make_head(h, 3, rng);
  phi.head_anchor = make_head(h, config.dim, rng);
  phi.head_alpha_j = make_head(h, 1, rng);
  phi.head_alpha_r = make_head(h, 1, rng);
  phi.head_kappa = make_head(h, 1, rng);
  phi.head_horizon = make_head(h, 1, rng);
  return phi;
}

StructureOps controller_forward(const LocalControllerParams& psi, const Tensor& observation,
                                const StageContext& ctx, const PhasePoint& x) {
  const auto& cfg = psi.config;
  Tensor anchor_rel = ops::scale(ops::sub(ctx.anchor, x.q), 1.0 / cfg.halfwidth);
  Tensor gains = ctx.has_taped_gains()
                     ? ops::concat({ctx.alpha_j_t, ctx.alpha_r_t, ctx.kappa_goal_t})
                     : Tensor::vector({ctx.alpha_j, ctx.alpha_r, ctx.kappa_goal});
  Tensor action = ops::concat({anchor_rel, mode_one_hot(ctx.mode), gains});
  Tensor input = ops::concat({observation, action});
  if (input.numel() != psi.trunk.input_dim()) throw ShapeMismatchError("controller observation length");
  Tensor h = ops::tanh(mlp_forward(psi.trunk, input));

  const double fscale = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  StructureOps out;
  out.mass_diag = ops::add(Tensor::full({cfg.dim}, cfg.mass_floor), ops::softplus(mlp_forward(psi.head_mass, h)));
  out.kappa_local = ops::softplus(mlp_forward(psi.head_kappa, h));
  out.port_shaping = ops::scale(ops::tanh(mlp_forward(psi.head_ushp, h)), cfg.u_max);
  out.damp_inject = ops::softplus(mlp_forward(psi.head_kd, h));
  out.skew_u = reshape(ops::scale(mlp_forward(psi.head_skew_u, h), fscale), {cfg.dim, cfg.rank});
  out.skew_v = reshape(ops::scale(mlp_forward(psi.head_skew_v, h), fscale), {cfg.dim, cfg.rank});
  out.damp_factor = reshape(ops::scale(mlp_forward(psi.head_damp_b, h), fscale), {cfg.dim, cfg.rank});
  out.damp_diag = ops::softplus(mlp_forward(psi.head_damp_d, h));
  return out;
}

StageMode argmax_mode(const Tensor& logits) {
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (logits.values[static_cast<size_t>(i)] > logits.values[static_cast<size_t>(best)]) best = i;
  return static_cast<StageMode>(best);
}

StageAction planner_forward(const PlannerParams& phi, const Tensor& context, const Tensor& q_start,
                            double feasible_halfwidth) {
  if (context.numel() != phi.trunk.input_dim()) throw ShapeMismatchError("planner context length");
  Tensor h = ops::tanh(mlp_forward(phi.trunk, context));
  StageAction a;
  a.mode_logits = mlp_forward(phi.head_mode, h);
  a.mode = argmax_mode(a.mode_logits);
  Tensor offset = ops::scale(ops::tanh(mlp_forward(phi.head_anchor, h)), phi.config.trust_radius);
  a.anchor = ops::clip(ops::add(q_start, offset), -feasible_halfwidth, feasible_halfwidth);
  a.alpha_j = ops::sigmoid(mlp_forward(phi.head_alpha_j, h));
  a.alpha_r = ops::sigmoid(mlp_forward(phi.head_alpha_r, h));
  a.kappa_goal = ops::add(ops::softplus(mlp_forward(phi.head_kappa, h)), Tensor::scalar(0.1));
  a.horizon_logit = mlp_forward(phi.head_horizon, h);
  return a;
}

std::pair<double, double> mode_scale(double alpha_j_bar, double alpha_r_bar, StageMode mode) {
  const auto [bj, br] = mode_weights(mode);
  return {alpha_j_bar * bj, alpha_r_bar * br};
}

void visit_params(LocalControllerParams& psi, const ParamVisitor& visit) {
  visit_mlp(psi.trunk, "psi.trunk", visit);
  visit_mlp(psi.head_mass, "psi.head_mass", visit);
  visit_mlp(psi.head_kappa, "psi.head_kappa", visit);
  visit_mlp(psi.head_ushp, "psi.head_ushp", visit);
  visit_mlp(psi.head_kd, "psi.head_kd", visit);
  visit_mlp(psi.head_skew_u, "psi.head_skew_u", visit);
  visit_mlp(psi.head_skew_v, "psi.head_skew_v", visit);
  visit_mlp(psi.head_damp_b, "psi.head_damp_b", visit);
  visit_mlp(psi.head_damp_d, "psi.head_damp_d", visit);
}

void visit_params(PlannerParams& phi, const ParamVisitor& visit) {
  visit_mlp(phi.trunk, "phi.trunk", visit);
  visit_mlp(phi.head_mode, "phi.head_mode", visit);
  visit_mlp(phi.head_anchor, "phi.head_anchor", visit);
  visit_mlp(phi.head_alpha_j, "phi.head_alpha_j", visit);
  visit_mlp(phi.head_alpha_r, "phi.head_alpha_r", visit);
  visit_mlp(phi.head_kappa, "phi.head_kappa", visit);
  visit_mlp(phi.head_horizon, "phi.head_horizon", visit);
}

PolicyPair make_policies(int dim, int hidden, int mem_readout, double halfwidth, uint64_t seed) {
  Rng rng(derive_seed(seed, 0x90110));
  ControllerConfig cc;
  cc.dim = dim;
  cc.hidden = hidden;
  cc.rank = default_rank(dim);
  cc.mem_readout = mem_readout;
  cc.halfwidth = halfwidth;
  PlannerConfig pc;
  pc.dim = dim;
  pc.hidden = hidden;
  pc.mem_readout = mem_readout;
  pc.halfwidth = halfwidth;
  PolicyPair pp{make_local_controller(cc, rng), make_planner(pc, rng)};
  return pp;
}

Checkpoint policies_to_checkpoint(const PolicyPair& policies) {
  Checkpoint ck;
  PolicyPair copy = policies;
  visit_params(copy.psi, [&](const std::string& name, Tensor& t) { ck.tensors[name] = t; });
  visit_params(copy.phi, [&](const std::string& name, Tensor& t) { ck.tensors[name] = t; });
  const auto& cc = policies.psi.config;
  ck.tensors["psi.config"] = Tensor::vector({static_cast<double>(cc.dim), static_cast<double>(cc.hidden),
                                             static_cast<double>(cc.rank), static_cast<double>(cc.mem_readout),
                                             cc.mass_floor, cc.u_max, cc.halfwidth});
  const auto& pc = policies.phi.config;
  ck.tensors["phi.config"] = Tensor::vector({static_cast<double>(pc.dim), static_cast<double>(pc.hidden),
                                             static_cast<double>(pc.mem_readout), pc.trust_radius, pc.halfwidth});
  return ck;
}

PolicyPair policies_from_checkpoint(const Checkpoint& ck) {
  const auto& psi_cfg = ck.tensors.at("psi.config").values;
  const auto& phi_cfg = ck.tensors.at("phi.config").values;
  ControllerConfig cc;
  cc.dim = static_cast<int>(psi_cfg[0]);
  cc.hidden = static_cast<int>(psi_cfg[1]);
  cc.rank = static_cast<int>(psi_cfg[2]);
  cc.mem_readout = static_cast<int>(psi_cfg[3]);
  cc.mass_floor = psi_cfg[4];
  cc.u_max = psi_cfg[5];
  cc.halfwidth = psi_cfg[6];
  PlannerConfig pc;
  pc.dim = static_cast<int>(phi_cfg[0]);
  pc.hidden = static_cast<int>(phi_cfg[1]);
  pc.mem_readout = static_cast<int>(phi_cfg[2]);
  pc.trust_radius = phi_cfg[3];
  pc.halfwidth = phi_cfg[4];

  Rng rng(0);
  PolicyPair pp{make_local_controller(cc, rng), make_planner(pc, rng)};
  visit_params(pp.psi, [&](const std::string& name, Tensor& t) { t = ck.tensors.at(name); });
  visit_params(pp.phi, [&](const std::string& name, Tensor& t) { t = ck.tensors.at(name); });
  return pp;
}

}  // namespace shape
