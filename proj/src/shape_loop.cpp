#include "shape/shape_loop.hpp"

#include <cmath>

#include "shape/error.hpp"

namespace shape {

bool stall_detect(const std::vector<TraceRow>& stage_window, const RunConfig& cfg) {
  if (stage_window.size() < 2) return false;
  const TraceRow& last = stage_window.back();
  const int dim = static_cast<int>(last.q.size());

  // Under a noisy oracle the raw thresholds sit below the noise floor, so
  // the predicate averages over the stage window and allows for the
  // stationary fluctuation scale of the force estimate and the momentum.
  double grad_floor = 0.0, p_floor = 0.0;
  if (cfg.oracle.kind == OracleKind::Stochastic && cfg.oracle.sigma_g > 0.0) {
    grad_floor = 1.5 * cfg.oracle.sigma_g * std::sqrt(static_cast<double>(dim));
    p_floor = 2.0 * cfg.oracle.sigma_g * std::sqrt(static_cast<double>(dim) * cfg.step_size);
  }

  double mean_gnorm = 0.0, mean_pnorm = 0.0;
  for (const TraceRow& row : stage_window) {
    mean_gnorm += row.gnorm;
    double p2 = 0.0;
    for (double v : row.p) p2 += v * v;
    mean_pnorm += std::sqrt(p2);
  }
  mean_gnorm /= static_cast<double>(stage_window.size());
  mean_pnorm /= static_cast<double>(stage_window.size());

  if (mean_gnorm >= cfg.stall_grad_tol * (1.0 + std::abs(last.f)) + grad_floor) return false;
  if (mean_pnorm >= cfg.stall_p_tol + p_floor) return false;
  const double improvement = stage_window.front().best_f - last.best_f;
  return improvement < cfg.stall_improve_tol;
}

int accept_best(double current_best_f, const std::vector<double>& candidate_f) {
  int pick = -1;
  double best = current_best_f;
  for (size_t i = 0; i < candidate_f.size(); ++i) {
    if (candidate_f[i] < best) {  // strict: ties keep the earlier iterate
      best = candidate_f[i];
      pick = static_cast<int>(i);
    }
  }
  return pick;
}

namespace {

double stage_hamiltonian(const PhasePoint& x, double f, const StageContext& ctx, const StructureOps& sops) {
  const double kl = sops.kappa_local.numel() == 1 ? sops.kappa_local.values[0] : 0.0;
  const double kappa = ctx.kappa_goal + kl;
  double pot = f;
  if (ctx.anchor.numel() == x.q.numel()) {
    double dist2 = 0.0;
    for (size_t i = 0; i < x.q.values.size(); ++i) {
      const double diff = x.q.values[i] - ctx.anchor.values[i];
      dist2 += diff * diff;
    }
    pot += 0.5 * kappa * dist2;
  }
  const Memory::PotentialEval mem = ctx.memory.potential(x.q, ctx.mode);
  pot += mem.u_mem + mem.v_bar;
  double kinetic = 0.0;
  for (size_t i = 0; i < x.p.values.size(); ++i)
    kinetic += 0.5 * x.p.values[i] * x.p.values[i] / sops.mass_diag.values[i];
  return pot + kinetic;
}

OracleSample guarded_query(const Oracle& oracle, const Tensor& q, Budget& budget, bool* singular) {
  try {
    return oracle.query(q, budget);
  } catch (const SingularConfigError&) {
    // the call was made and charged; report a wall of value so the best-so-
    // far rule ignores the point and recovery kicks in
    *singular = true;
    OracleSample s;
    s.f = 1e30;
    s.g = Tensor::zeros(q.shape);
    s.calls_consumed = oracle.min_cost();
    return s;
  }
}

}  // namespace

RolloutTrace run_shape(const TaskSpec& task, const RunConfig& cfg, const PolicyPair& policies) {
  if (cfg.budget < 1) throw ConfigError("budget must be at least 1");
  if (cfg.step_size <= 0.0) throw ConfigError("step size must be positive");

  const ClipBounds clips = cfg.clips.value_or(default_clips(task));
  const double hw = task.domain_halfwidth;
  const Oracle oracle(task, cfg.oracle, derive_seed(cfg.seed, 0x0153));
  Budget budget{cfg.budget, 0};

  Rng init_rng(derive_seed(cfg.seed, 0x1217));
  PhasePoint x{sample_initial_point(task, init_rng), Tensor::zeros({task.dim})};

  MemoryConfig mem_cfg;
  mem_cfg.enabled = policies.psi.config.mem_readout > 0;
  mem_cfg.dim = task.dim;
  mem_cfg.halfwidth = hw;
  Memory memory(mem_cfg);

  RolloutTrace trace;
  trace.budget_total = cfg.budget;

  if (budget.remaining() < oracle.min_cost())
    throw ConfigError("budget smaller than a single oracle query");

  bool singular = false;
  OracleSample sample = guarded_query(oracle, x.q, budget, &singular);
  trace.best_q = x.q;
  trace.best_f = sample.f;

  StructureOps inert = StructureOps::inert(task.dim, policies.psi.config.rank);
  StageContext boot_ctx;
  boot_ctx.anchor = x.q;
  boot_ctx.memory = memory;
  trace.rows.push_back(TraceRow{0, 0, x.q.values, x.p.values, sample.f,
                                ops::norm2(sample.g).scalar_value(), budget.used, trace.best_f,
                                StageMode::Settle, kFlagStageStart,
                                stage_hamiltonian(x, sample.f, boot_ctx, inert)});

  int64_t step_index = 1;
  int stage = 0;
  int consecutive_settle_stalls = 0;
  bool force_settle = false;
  bool last_stage_stalled = false;

  while (budget.remaining() >= oracle.min_cost()) {
    // plan the stage from the already-charged sample at the stage start
    Tensor context = build_planner_context(x, sample, task, memory, hw, trace.best_f, last_stage_stalled);
    StageAction action = planner_forward(policies.phi, context, x.q, clips.q_max);

    StageContext ctx;
    ctx.anchor = detach(action.anchor);
    ctx.mode = force_settle ? StageMode::Settle : action.mode;
    ctx.alpha_j = action.alpha_j.scalar_value();
    ctx.alpha_r = action.alpha_r.scalar_value();
    ctx.kappa_goal = action.kappa_goal.scalar_value();
    ctx.horizon = cfg.event_horizon;  // fixed event clock overrides the head
    ctx.memory = memory;              // frozen snapshot m_s^0
    force_settle = false;

    const auto [alpha_j, alpha_r] = mode_scale(ctx.alpha_j, ctx.alpha_r, ctx.mode);

    std::vector<TraceRow> stage_rows;
    stage_rows.push_back(trace.rows.back());
    bool stalled = false;
    bool diverged = false;

    for (int j = 0; j < ctx.horizon && budget.remaining() >= oracle.min_cost(); ++j) {
      Tensor obs = build_observation(x, sample, task, ctx.memory, hw);
      StructureOps sops = controller_forward(policies.psi, obs, ctx, x);

      PhasePoint next;
      try {
        next = step_semi_implicit(x, ctx, sops, sample.g, cfg.step_size, clips, alpha_j, alpha_r);
      } catch (const IntegrationDivergedError&) {
        diverged = true;
      }
      if (!diverged) {
        singular = false;
        OracleSample next_sample = guarded_query(oracle, next.q, budget, &singular);
        if (singular) diverged = true;
        if (!diverged) {
          x = next;
          sample = next_sample;
          if (sample.f < trace.best_f) {
            trace.best_f = sample.f;
            trace.best_q = x.q;
          }
          TraceRow row{step_index++, stage, x.q.values, x.p.values, sample.f,
                       ops::norm2(sample.g).scalar_value(), budget.used, trace.best_f, ctx.mode, 0,
                       stage_hamiltonian(x, sample.f, ctx, sops)};
          if (j == 0) row.flags |= kFlagStageStart;
          trace.rows.push_back(row);
          stage_rows.push_back(row);
          if (stall_detect(stage_rows, cfg)) {
            stalled = true;
            trace.rows.back().flags |= kFlagStall;
            break;
          }
          continue;
        }
      }
      // divergence recovery: restore the accepted iterate at rest and force
      // one settle stage; budget accounting is untouched
      x = PhasePoint{trace.best_q, Tensor::zeros({task.dim})};
      trace.divergence_resets += 1;
      force_settle = true;
      if (!trace.rows.empty()) trace.rows.back().flags |= kFlagDivergenceReset;
      if (budget.remaining() >= oracle.min_cost()) {
        singular = false;
        sample = guarded_query(oracle, x.q, budget, &singular);
        TraceRow row{step_index++, stage, x.q.values, x.p.values, sample.f,
                     ops::norm2(sample.g).scalar_value(), budget.used, trace.best_f, ctx.mode,
                     kFlagDivergenceReset, 0.0};
        trace.rows.push_back(row);
      }
      break;
    }

    // event interface: memory write on escape or stall, then replan
    const bool trigger = (ctx.mode == StageMode::Escape) || stalled;
    if (trigger) {
      EventSummary summary{x.q, x.p, sample.f, sample.g, ctx.mode};
      memory.write(summary, true);
      if (!trace.rows.empty()) trace.rows.back().flags |= kFlagMemoryWrite;
    }

    if (stalled && ctx.mode == StageMode::Settle)
      consecutive_settle_stalls += 1;
    else
      consecutive_settle_stalls = 0;
    last_stage_stalled = stalled;
    stage += 1;

    if (consecutive_settle_stalls >= 2) {
      trace.early_terminated = true;
      break;
    }
  }

  trace.final_q = x.q;
  trace.calls_used = budget.used;
  trace.stages = stage;
  return trace;
}

}  // namespace shape
