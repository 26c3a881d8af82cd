#include "shape/training.hpp"

#include <algorithm>
#include <cmath>

#include "shape/error.hpp"

namespace shape {

TrainSchedule schedule_for_dim(int dim) {
  TrainSchedule s;
  if (dim <= 2) {
    s.epochs = 500;
    s.hidden = 32;
  } else if (dim <= 20) {
    s.epochs = 800;
    s.hidden = 64;
  } else {
    s.epochs = 1000;
    s.hidden = 128;
  }
  return s;  // pretrain 100, 2+2 updates, batch 64, rollouts 128/500 everywhere
}

namespace {

constexpr double kTeacherForceGoalGain = 1.0;  // c_g
constexpr double kTeacherForceDamping = 0.5;   // c_p
constexpr double kEscapeForceScale = 0.5;
constexpr double kGradClipNorm = 10.0;

std::vector<double> normalized_or(const std::vector<double>& v, Rng& rng) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n < 1e-10) return rng.unit_vector(static_cast<int>(v.size()));
  std::vector<double> out(v);
  for (auto& x : out) x /= n;
  return out;
}

struct NamedParams {
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;
};

NamedParams collect_params(PolicyPair& pp, bool with_psi, bool with_phi) {
  NamedParams np;
  auto push = [&](const std::string& name, Tensor& t) {
    np.names.push_back(name);
    np.tensors.push_back(&t);
  };
  if (with_psi) visit_params(pp.psi, push);
  if (with_phi) visit_params(pp.phi, push);
  return np;
}

// cross-entropy of 3-way logits against a hard label, built from tape ops
Tensor mode_cross_entropy(const Tensor& logits, StageMode label) {
  double zmax = logits.values[0];
  for (double z : logits.values) zmax = std::max(zmax, z);
  Tensor shifted = ops::sub(logits, Tensor::full({3}, zmax));
  Tensor lse = ops::log(ops::sum(ops::exp(shifted)));
  Tensor zl = ops::slice(shifted, static_cast<int64_t>(label), 1);
  return ops::sub(lse, zl);
}

// elementwise Huber with delta = 1, summed: c.r - c^2/2 with c = clip(r,-1,1)
Tensor huber_sum(const Tensor& residual) {
  Tensor c = ops::clip(residual, -1.0, 1.0);
  return ops::sub(ops::dot(c, residual), ops::scale(ops::dot(c, c), 0.5));
}

MemoryConfig memory_config_for(const TaskSpec& task, bool enabled) {
  MemoryConfig mc;
  mc.enabled = enabled;
  mc.dim = task.dim;
  mc.halfwidth = task.domain_halfwidth;
  return mc;
}

double batch_mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// Evaluation spends most of its budget parked near recorded minima, a
// regime plain random starts almost never sample. Half of the training
// states are therefore warm-started: a cheap damped descent into a basin,
// optionally with memory writes there, so escape-labelled contexts are
// abundant. Phase I skips the writes: its teacher force has no memory
// term, so the regression must see a shaping-free stage.
void warm_start_state(const TaskSpec& task, Rng& rng, Memory& memory, PhasePoint& x, TrainLedger& ledger,
                      bool with_writes = true) {
  Tensor q = x.q;
  Tensor p = Tensor::zeros(q.shape);
  Tensor g;
  for (int k = 0; k < 60; ++k) {
    try {
      g = eval_grad(task, q);
    } catch (const SingularConfigError&) {
      return;
    }
    ledger.rollout_calls += 1;
    for (size_t i = 0; i < q.values.size(); ++i) {
      p.values[i] = 0.8 * p.values[i] - 0.2 * g.values[i];
      q.values[i] += 0.25 * p.values[i];
      q.values[i] = std::clamp(q.values[i], -task.domain_halfwidth, task.domain_halfwidth);
    }
  }
  double f;
  try {
    f = eval_f(task, q);
    g = eval_grad(task, q);
  } catch (const SingularConfigError&) {
    return;
  }
  ledger.rollout_calls += 2;
  x.q = q;
  x.p = Tensor::zeros(q.shape);
  if (!with_writes) return;
  // occupation depth varies from a single visit to a long stuck episode
  const int writes = 1 + static_cast<int>(rng.index(12));
  for (int w = 0; w < writes; ++w)
    memory.write(EventSummary{q, x.p, f, g, StageMode::Settle}, true);
  // sprinkle a few visits around the basin so readouts resemble a past
  // exploration trail
  const int extras = static_cast<int>(rng.index(3));
  for (int e = 0; e < extras; ++e) {
    Tensor nearby = q;
    for (auto& v : nearby.values)
      v = std::clamp(v + rng.uniform(-1.5, 1.5), -task.domain_halfwidth, task.domain_halfwidth);
    double fn;
    Tensor gn;
    try {
      fn = eval_f(task, nearby);
      gn = eval_grad(task, nearby);
    } catch (const SingularConfigError&) {
      continue;
    }
    ledger.rollout_calls += 2;
    const int visits = 1 + static_cast<int>(rng.index(4));
    for (int w = 0; w < visits; ++w)
      memory.write(EventSummary{nearby, Tensor::zeros(q.shape), fn, gn, StageMode::Escape}, true);
  }
}

void reduce_apply(PolicyPair& policies, MetaAdam& opt, const NamedParams& host,
                  const std::vector<std::vector<Tensor>>& grads, int batch) {
  std::vector<Tensor> total(host.tensors.size());
  for (size_t i = 0; i < host.tensors.size(); ++i) total[i] = Tensor::zeros(host.tensors[i]->shape);
  for (const auto& slot : grads)
    for (size_t i = 0; i < slot.size(); ++i)
      for (size_t k = 0; k < slot[i].values.size(); ++k)
        total[i].values[k] += slot[i].values[k] / static_cast<double>(batch);
  clip_gradients_global_norm(total, kGradClipNorm);
  for (size_t i = 0; i < host.tensors.size(); ++i) opt.apply(host.names[i], *host.tensors[i], total[i]);
  (void)policies;
}

void merge_ledgers(TrainLedger& into, const std::vector<TrainLedger>& parts) {
  for (const auto& l : parts) {
    into.teacher_calls += l.teacher_calls;
    into.rollout_calls += l.rollout_calls;
  }
}

}  // namespace

void clip_gradients_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double norm2 = 0.0;
  for (const auto& g : grads)
    for (double v : g.values) norm2 += v * v;
  const double norm = std::sqrt(norm2);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& g : grads)
    for (auto& v : g.values) v *= scale;
}

TeacherLabel probe_teacher(const TaskSpec& task, const PhasePoint& x, double f_at_q, double best_f_so_far,
                           const Tensor& g_at_q, const Memory& memory, const ProbeConfig& probe,
                           bool stalled, Rng& rng, TrainLedger& ledger) {
  if (probe.k_probe < 4) throw ConfigError("probe teacher needs at least 4 candidates");
  const int d = task.dim;

  std::vector<std::vector<double>> directions;
  directions.push_back(normalized_or(ops::scale(detach(g_at_q), -1.0).values, rng));  // descent
  directions.push_back(normalized_or(x.p.values, rng));                               // momentum
  {
    // memory-novel: the most novel of a few random unit probes
    std::vector<double> best_dir = rng.unit_vector(d);
    double best_nov = -1.0;
    for (int i = 0; i < 8; ++i) {
      auto u = rng.unit_vector(d);
      Tensor c = detach(x.q);
      for (int j = 0; j < d; ++j) c.values[static_cast<size_t>(j)] += u[static_cast<size_t>(j)];
      const double nov = memory.novelty(c);
      if (nov > best_nov) {
        best_nov = nov;
        best_dir = u;
      }
    }
    directions.push_back(best_dir);
  }
  while (static_cast<int>(directions.size()) < probe.k_probe) directions.push_back(rng.unit_vector(d));

  TeacherLabel label;
  label.escape_direction = Tensor::vector(directions[2]);
  label.best_score = -1e300;
  int best_index = -1;
  double best_novelty_score = -1e300;
  Tensor most_novel_candidate;
  for (int j = 0; j < probe.k_probe; ++j) {
    const double radius = probe.radii[static_cast<size_t>(j) % probe.radii.size()];
    Tensor c = detach(x.q);
    for (int i = 0; i < d; ++i)
      c.values[static_cast<size_t>(i)] += radius * directions[static_cast<size_t>(j)][static_cast<size_t>(i)];
    double fc;
    try {
      fc = eval_f(task, c);
      ledger.teacher_calls += 1;
    } catch (const SingularConfigError&) {
      continue;
    }
    // improvement is measured against the accepted best-so-far value, not
    // the local f: a candidate back inside an exhausted basin cannot beat
    // the recorded bottom, which keeps escape labels alive during a climb
    const double improve = best_f_so_far - fc;
    const double score = improve + probe.lambda_nov * memory.novelty(c) - probe.lambda_risk * radius;
    if (score > label.best_score) {  // strict: ties keep the lowest index
      label.best_score = score;
      label.improve = improve;
      label.anchor = c;
      best_index = j;
    }
    const double novelty_score = memory.novelty(c) + 0.1 * radius;
    if (novelty_score > best_novelty_score) {
      best_novelty_score = novelty_score;
      most_novel_candidate = c;
    }
  }
  if (best_index < 0) {
    label.anchor = detach(x.q);
    label.improve = 0.0;
  }

  // refine on clear improvement over best-so-far; escape when progress has
  // dried up while stalled, revisiting recorded cells, or sitting on fresh
  // dead-flat ground; settle otherwise so local descent can finish the job
  const double novelty_here = memory.novelty(x.q);
  const bool revisiting = novelty_here <= 0.5;
  const bool fresh = novelty_here > probe.novelty_threshold;
  const double scale = 1.0 + std::abs(f_at_q);
  if (label.improve > probe.improve_frac * scale)
    label.mode = StageMode::Refine;
  else if (stalled || revisiting || (fresh && label.improve <= 0.0))
    label.mode = StageMode::Escape;
  else
    label.mode = StageMode::Settle;

  if (label.mode == StageMode::Escape && most_novel_candidate.numel() == d)
    label.anchor = most_novel_candidate;
  return label;
}

// ---------------------------------------------------------------------------
// Phase I

double phase1_local_pretrain(PolicyPair& policies, MetaAdam& opt, const TrainJob& job, uint64_t batch_seed,
                             TrainLedger& ledger) {
  const int batch = job.schedule.batch;
  NamedParams host = collect_params(policies, true, false);
  std::vector<std::vector<Tensor>> grads(static_cast<size_t>(batch));
  std::vector<double> losses(static_cast<size_t>(batch), 0.0);
  std::vector<TrainLedger> ledgers(static_cast<size_t>(batch));

  parallel_for(batch, job.exec, [&](int64_t b) {
    Rng rng(derive_seed(batch_seed, 0xF1000 + static_cast<uint64_t>(b)));
    TaskSpec task = make_task(job.family, job.dim, rng.next_u64(), job.task_options);
    const ClipBounds clips = default_clips(task);

    PhasePoint x{sample_initial_point(task, rng), Tensor::zeros({job.dim})};
    for (auto& v : x.p.values) v = 0.3 * rng.normal();

    Memory memory(memory_config_for(task, job.use_memory));
    if (rng.uniform() < 0.5) warm_start_state(task, rng, memory, x, ledgers[static_cast<size_t>(b)], false);
    OracleSample sample;
    sample.f = eval_f(task, x.q);
    sample.g = eval_grad(task, x.q);
    ledgers[static_cast<size_t>(b)].rollout_calls += 1;

    TeacherLabel teacher = probe_teacher(task, x, sample.f, sample.f, sample.g, memory, job.probe, false, rng,
                                         ledgers[static_cast<size_t>(b)]);

    // teacher force F^T = -grad f - c_g (q - anchor^T) - c_p p + F_escape
    Tensor force_t = ops::scale(sample.g, -1.0);
    for (int i = 0; i < job.dim; ++i) {
      force_t.values[static_cast<size_t>(i)] -= kTeacherForceGoalGain * (x.q.values[static_cast<size_t>(i)] -
                                                                         teacher.anchor.values[static_cast<size_t>(i)]);
      force_t.values[static_cast<size_t>(i)] -= kTeacherForceDamping * x.p.values[static_cast<size_t>(i)];
      if (teacher.mode == StageMode::Escape)
        force_t.values[static_cast<size_t>(i)] +=
            kEscapeForceScale * teacher.escape_direction.values[static_cast<size_t>(i)];
    }

    Tape tape;
    TapeScope scope(tape);
    PolicyPair taped = policies;
    NamedParams leaves = collect_params(taped, true, false);
    for (Tensor* t : leaves.tensors) *t = tape.leaf(*t);

    StageContext ctx;
    ctx.anchor = teacher.anchor;
    ctx.mode = teacher.mode;
    ctx.alpha_j = 0.5;
    ctx.alpha_r = 0.5;
    ctx.kappa_goal = kTeacherForceGoalGain;
    ctx.memory = memory;
    const auto [aj, ar] = mode_scale(ctx.alpha_j, ctx.alpha_r, ctx.mode);

    Tensor obs = build_observation(x, sample, task, memory, task.domain_halfwidth);
    StructureOps sops = controller_forward(taped.psi, obs, ctx, x);
    PhasePoint next = step_semi_implicit(x, ctx, sops, sample.g, job.step_size, clips, aj, ar);

    Tensor realized = ops::scale(ops::sub(next.p, x.p), 1.0 / job.step_size);
    Tensor resid = ops::sub(realized, force_t);
    Tensor loss = ops::dot(resid, resid);

    Tensor v0 = ops::hadamard(ops::reciprocal(sops.mass_diag), x.p);
    Tensor reg = ops::add(ops::norm2(skew_apply(sops.skew_u, sops.skew_v, v0)),
                          ops::norm2(psd_apply(sops.damp_factor, sops.damp_diag, v0)));
    loss = ops::add(loss, ops::scale(reg, job.weights.jr));

    if (!std::isfinite(loss.scalar_value())) throw NonFiniteError("phase1 loss");
    losses[static_cast<size_t>(b)] = loss.scalar_value();
    GradMap gm = tape.backward(loss);
    auto& slot = grads[static_cast<size_t>(b)];
    slot.reserve(leaves.tensors.size());
    for (Tensor* t : leaves.tensors) slot.push_back(gm.grad(*t));
  });

  reduce_apply(policies, opt, host, grads, batch);
  merge_ledgers(ledger, ledgers);
  return batch_mean(losses);
}

// ---------------------------------------------------------------------------
// Phase II

double phase2_planner(PolicyPair& policies, MetaAdam& opt, const TrainJob& job, uint64_t batch_seed,
                      TrainLedger& ledger) {
  const int batch = job.schedule.batch;
  NamedParams host = collect_params(policies, false, true);
  std::vector<std::vector<Tensor>> grads(static_cast<size_t>(batch));
  std::vector<double> losses(static_cast<size_t>(batch), 0.0);
  std::vector<TrainLedger> ledgers(static_cast<size_t>(batch));

  parallel_for(batch, job.exec, [&](int64_t b) {
    Rng rng(derive_seed(batch_seed, 0xF2000 + static_cast<uint64_t>(b)));
    TaskSpec task = make_task(job.family, job.dim, rng.next_u64(), job.task_options);

    PhasePoint x{sample_initial_point(task, rng), Tensor::zeros({job.dim})};
    for (auto& v : x.p.values) v = 0.3 * rng.normal();
    Memory memory(memory_config_for(task, job.use_memory));
    if (rng.uniform() < 0.5) warm_start_state(task, rng, memory, x, ledgers[static_cast<size_t>(b)]);
    OracleSample sample;
    sample.f = eval_f(task, x.q);
    sample.g = eval_grad(task, x.q);
    ledgers[static_cast<size_t>(b)].rollout_calls += 1;

    TeacherLabel teacher = probe_teacher(task, x, sample.f, sample.f, sample.g, memory, job.probe, false, rng,
                                         ledgers[static_cast<size_t>(b)]);

    Tape tape;
    TapeScope scope(tape);
    PolicyPair taped = policies;
    NamedParams leaves = collect_params(taped, false, true);
    for (Tensor* t : leaves.tensors) *t = tape.leaf(*t);

    Tensor context = build_planner_context(x, sample, task, memory, task.domain_halfwidth, sample.f, false);
    StageAction action = planner_forward(taped.phi, context, x.q, default_clips(task).q_max);

    Tensor ce = mode_cross_entropy(action.mode_logits, teacher.mode);
    Tensor hub = huber_sum(ops::sub(action.anchor, teacher.anchor));
    Tensor loss = ops::add(ops::scale(ce, job.weights.ce), ops::scale(hub, job.weights.sg));

    losses[static_cast<size_t>(b)] = loss.scalar_value();
    GradMap gm = tape.backward(loss);
    auto& slot = grads[static_cast<size_t>(b)];
    for (Tensor* t : leaves.tensors) slot.push_back(gm.grad(*t));
  });

  reduce_apply(policies, opt, host, grads, batch);
  merge_ledgers(ledger, ledgers);
  return batch_mean(losses);
}

// ---------------------------------------------------------------------------
// Phase III

namespace {

struct RolloutLossAcc {
  Tensor total = Tensor::scalar(0.0);
  double term = 0, best = 0, prog = 0, plan_ce = 0, plan_sg = 0, ctrl = 0, jr = 0, port = 0;
};

RolloutLossAcc train_rollout(PolicyPair& taped, const TaskSpec& task, const TrainJob& job,
                             TrainLedger& ledger, Rng& rng) {
  const int horizon = job.event_horizon;
  const int steps = job.schedule.train_rollout;
  const ClipBounds clips = default_clips(task);
  const double hw = task.domain_halfwidth;
  const LossWeights& w = job.weights;

  Memory memory(memory_config_for(task, job.use_memory));
  PhasePoint x{sample_initial_point(task, rng), Tensor::zeros({task.dim})};
  const bool warm = rng.uniform() < 0.5;
  if (warm) warm_start_state(task, rng, memory, x, ledger);
  // some warm episodes pretend an earlier stage already found a better
  // basin, which is the context regime that dominates long evaluations
  const double baseline_offset = (warm && rng.uniform() < 0.5) ? rng.uniform(0.3, 3.0) : 0.0;

  // rollouts train under the deployment oracle so the policies see the
  // same force statistics they will be evaluated with
  const Oracle oracle(task, job.oracle, rng.next_u64());
  Budget train_budget{1LL << 60, 0};
  auto query = [&](const Tensor& q, OracleSample* out) {
    try {
      *out = oracle.query(q, train_budget);
    } catch (const SingularConfigError&) {
      return false;
    }
    ledger.rollout_calls += out->calls_consumed;
    return true;
  };

  OracleSample sample;
  if (!query(x.q, &sample)) {
    sample.f = 1e30;
    sample.g = Tensor::zeros({task.dim});
  }
  const double norm_f0 = 1.0 / (std::abs(sample.f) + 1.0);

  Tensor prog_sum = Tensor::scalar(0.0);
  Tensor ctrl_sum = Tensor::scalar(0.0);
  Tensor jr_sum = Tensor::scalar(0.0);
  Tensor port_sum = Tensor::scalar(0.0);
  Tensor plan_sum = Tensor::scalar(0.0);
  double plan_ce_val = 0.0, plan_sg_val = 0.0;
  int events = 0;

  Tensor best_q = x.q;
  double best_f = sample.f;
  Tensor best_g = sample.g;

  StageContext ctx;
  ctx.memory = memory;
  Tensor alpha_j_t = Tensor::scalar(0.5), alpha_r_t = Tensor::scalar(0.5);
  Tensor kappa_t = Tensor::scalar(0.1);
  Tensor anchor_t = x.q;
  double stage_best_entry = sample.f;
  bool stalled = false;

  // same noise-aware stall predicate as the evaluation loop
  double grad_floor = 0.0, p_floor = 0.0;
  if (job.oracle.kind == OracleKind::Stochastic && job.oracle.sigma_g > 0.0) {
    grad_floor = 1.5 * job.oracle.sigma_g * std::sqrt(static_cast<double>(task.dim));
    p_floor = 2.0 * job.oracle.sigma_g * std::sqrt(static_cast<double>(task.dim) * job.step_size);
  }
  double stage_gnorm_sum = 0.0, stage_pnorm_sum = 0.0;
  int stage_samples = 0;

  for (int t = 0; t < steps; ++t) {
    // truncated backprop: cut the state every bptt_window steps
    if (t % job.schedule.bptt_window == 0 && t > 0) {
      x.q = detach(x.q);
      x.p = detach(x.p);
    }
    if (t % horizon == 0) {
      if (t > 0) {
        const bool trigger = (ctx.mode == StageMode::Escape) || stalled;
        if (trigger)
          memory.write(EventSummary{detach(x.q), detach(x.p), sample.f, detach(sample.g), ctx.mode}, true);
      }
      TeacherLabel teacher =
          probe_teacher(task, x, sample.f, std::min(best_f, best_f - baseline_offset), sample.g, memory,
                        job.probe, stalled, rng, ledger);
      Tensor context =
          build_planner_context(x, sample, task, memory, hw, best_f - baseline_offset, stalled);
      StageAction action = planner_forward(taped.phi, context, x.q, clips.q_max);

      Tensor ce = mode_cross_entropy(action.mode_logits, teacher.mode);
      Tensor hub = huber_sum(ops::sub(action.anchor, teacher.anchor));
      plan_sum = ops::add(plan_sum, ops::add(ops::scale(ce, w.ce), ops::scale(hub, w.sg)));
      plan_ce_val += ce.scalar_value();
      plan_sg_val += hub.scalar_value();
      events += 1;

      ctx.anchor = action.anchor;  // taped: the anchor force trains the planner
      ctx.mode = action.mode;
      ctx.alpha_j = action.alpha_j.scalar_value();
      ctx.alpha_r = action.alpha_r.scalar_value();
      ctx.kappa_goal = action.kappa_goal.scalar_value();
      ctx.alpha_j_t = action.alpha_j;
      ctx.alpha_r_t = action.alpha_r;
      ctx.kappa_goal_t = action.kappa_goal;
      ctx.memory = memory;  // frozen snapshot for the stage
      anchor_t = action.anchor;
      const auto [bj, br] = mode_weights(ctx.mode);
      alpha_j_t = ops::scale(action.alpha_j, bj);
      alpha_r_t = ops::scale(action.alpha_r, br);
      kappa_t = action.kappa_goal;
      stage_best_entry = best_f;
      stalled = false;
      stage_gnorm_sum = 0.0;
      stage_pnorm_sum = 0.0;
      stage_samples = 0;
    }

    Tensor obs = build_observation(x, sample, task, ctx.memory, hw);
    StructureOps sops = controller_forward(taped.psi, obs, ctx, x);

    PhasePoint next;
    bool diverged = false;
    try {
      next = step_semi_implicit(x, ctx, sops, sample.g, job.step_size, clips, alpha_j_t, alpha_r_t, kappa_t);
    } catch (const IntegrationDivergedError&) {
      diverged = true;
    }
    if (diverged) {
      x = PhasePoint{detach(best_q), Tensor::zeros({task.dim})};
      sample.f = best_f;
      sample.g = best_g;
      continue;
    }

    // structure-preserving penalties at the executed step
    Tensor v = ops::hadamard(ops::reciprocal(sops.mass_diag), x.p);
    Tensor u_port = ops::sub(sops.port_shaping, ops::hadamard(sops.damp_inject, v));
    ctrl_sum = ops::add(ctrl_sum, ops::dot(u_port, u_port));
    Tensor jr_step = ops::add(ops::norm2(skew_apply(sops.skew_u, sops.skew_v, v)),
                              ops::norm2(psd_apply(sops.damp_factor, sops.damp_diag, v)));
    jr_step = ops::add(jr_step, ops::scale(ops::norm2(u_port), 0.25));
    jr_sum = ops::add(jr_sum, jr_step);
    Tensor port_power = ops::relu(ops::dot(v, u_port));
    port_sum = ops::add(port_sum, ops::hadamard(port_power, port_power));

    x = next;
    OracleSample next_sample;
    if (!query(x.q, &next_sample)) {
      x = PhasePoint{detach(best_q), Tensor::zeros({task.dim})};
      sample.f = best_f;
      sample.g = best_g;
      continue;
    }
    sample = next_sample;

    prog_sum = ops::add(prog_sum, ops::norm2(ops::sub(x.q, anchor_t)));

    if (sample.f < best_f) {
      best_f = sample.f;
      best_q = x.q;
      best_g = sample.g;
    }
    const double gnorm = ops::norm2(detach(sample.g)).scalar_value();
    double pnorm = 0.0;
    for (double pv : x.p.values) pnorm += pv * pv;
    pnorm = std::sqrt(pnorm);
    stage_gnorm_sum += gnorm;
    stage_pnorm_sum += pnorm;
    stage_samples += 1;
    const double mean_g = stage_gnorm_sum / stage_samples;
    const double mean_p = stage_pnorm_sum / stage_samples;
    stalled = mean_g < 1e-3 * (1.0 + std::abs(sample.f)) + grad_floor && mean_p < 1e-3 + p_floor &&
              (stage_best_entry - best_f) < 1e-6;
  }

  RolloutLossAcc acc;
  Tensor term_loss = ops::scale(ops::value_with_grad(x.q, sample.f, sample.g.values), norm_f0);
  Tensor best_loss = ops::scale(ops::value_with_grad(best_q, best_f, best_g.values), norm_f0);
  Tensor total = ops::scale(term_loss, w.term);
  total = ops::add(total, ops::scale(best_loss, w.best));
  total = ops::add(total, ops::scale(prog_sum, w.prog / steps));
  if (events > 0) total = ops::add(total, ops::scale(plan_sum, 1.0 / events));
  total = ops::add(total, ops::scale(ctrl_sum, w.ctrl / steps));
  total = ops::add(total, ops::scale(jr_sum, w.jr / steps));
  total = ops::add(total, ops::scale(port_sum, w.port / steps));
  acc.total = total;
  acc.term = term_loss.scalar_value();
  acc.best = best_loss.scalar_value();
  acc.prog = prog_sum.scalar_value() / steps;
  acc.plan_ce = events > 0 ? plan_ce_val / events : 0.0;
  acc.plan_sg = events > 0 ? plan_sg_val / events : 0.0;
  acc.ctrl = ctrl_sum.scalar_value() / steps;
  acc.jr = jr_sum.scalar_value() / steps;
  acc.port = port_sum.scalar_value() / steps;
  return acc;
}

}  // namespace

LossCurveRow phase3_rollout_update(PolicyPair& policies, MetaAdam& opt, const TrainJob& job,
                                   uint64_t batch_seed, TrainLedger& ledger) {
  const int batch = job.schedule.batch;
  NamedParams host = collect_params(policies, job.train_controller, true);
  std::vector<std::vector<Tensor>> grads(static_cast<size_t>(batch));
  std::vector<RolloutLossAcc> accs(static_cast<size_t>(batch));
  std::vector<TrainLedger> ledgers(static_cast<size_t>(batch));

  parallel_for(batch, job.exec, [&](int64_t b) {
    Rng rng(derive_seed(batch_seed, 0xF3000 + static_cast<uint64_t>(b)));
    TaskSpec task = make_task(job.family, job.dim, rng.next_u64(), job.task_options);

    Tape tape;
    TapeScope scope(tape);
    PolicyPair taped = policies;
    NamedParams leaves = collect_params(taped, job.train_controller, true);
    for (Tensor* t : leaves.tensors) *t = tape.leaf(*t);

    RolloutLossAcc acc = train_rollout(taped, task, job, ledgers[static_cast<size_t>(b)], rng);
    if (!std::isfinite(acc.total.scalar_value())) throw NonFiniteError("phase3 loss");
    GradMap gm = tape.backward(acc.total);
    auto& slot = grads[static_cast<size_t>(b)];
    for (Tensor* t : leaves.tensors) slot.push_back(gm.grad(*t));
    accs[static_cast<size_t>(b)] = std::move(acc);
  });

  reduce_apply(policies, opt, host, grads, batch);
  merge_ledgers(ledger, ledgers);

  LossCurveRow row;
  row.phase = "rollout";
  for (const auto& a : accs) {
    row.total += a.total.scalar_value();
    row.term += a.term;
    row.best += a.best;
    row.prog += a.prog;
    row.plan_ce += a.plan_ce;
    row.plan_sg += a.plan_sg;
    row.ctrl += a.ctrl;
    row.jr += a.jr;
    row.port += a.port;
  }
  const double inv = 1.0 / batch;
  row.total *= inv;
  row.term *= inv;
  row.best *= inv;
  row.prog *= inv;
  row.plan_ce *= inv;
  row.plan_sg *= inv;
  row.ctrl *= inv;
  row.jr *= inv;
  row.port *= inv;
  return row;
}

TrainResult train(const TrainJob& job) {
  TrainResult result;
  TaskSpec probe_task = make_task(job.family, job.dim, derive_seed(job.seed, 0xDEED), job.task_options);
  Memory probe_memory(memory_config_for(probe_task, job.use_memory));
  result.policies = make_policies(job.dim, job.schedule.hidden, probe_memory.readout_length(),
                                  probe_task.domain_halfwidth, job.seed);

  MetaAdam opt(job.schedule.meta_lr);
  uint64_t update = 0;

  for (int k = 0; k < job.schedule.pretrain_steps && job.train_controller; ++k) {
    const double loss =
        phase1_local_pretrain(result.policies, opt, job, derive_seed(job.seed, ++update), result.ledger);
    LossCurveRow row;
    row.epoch = -1;
    row.phase = "pretrain";
    row.total = loss;
    result.curve.push_back(row);
  }

  for (int epoch = 0; epoch < job.schedule.epochs; ++epoch) {
    if (job.train_controller) {
      for (int k = 0; k < job.schedule.controller_updates; ++k) {
        const double loss = phase1_local_pretrain(result.policies, opt, job,
                                                  derive_seed(job.seed, ++update), result.ledger);
        LossCurveRow row;
        row.epoch = epoch;
        row.phase = "controller";
        row.total = loss;
        result.curve.push_back(row);
      }
    }
    for (int k = 0; k < job.schedule.planner_updates; ++k) {
      LossCurveRow row =
          phase3_rollout_update(result.policies, opt, job, derive_seed(job.seed, ++update), result.ledger);
      row.epoch = epoch;
      result.curve.push_back(row);
    }
  }
  return result;
}

}  // namespace shape
