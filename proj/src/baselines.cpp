#include "shape/baselines.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "shape/error.hpp"

namespace shape {

std::string method_name(Method m) {
  switch (m) {
    case Method::Gd: return "gd";
    case Method::Momentum: return "momentum";
    case Method::Nag: return "nag";
    case Method::Adagrad: return "adagrad";
    case Method::Rmsprop: return "rmsprop";
    case Method::Adadelta: return "adadelta";
    case Method::Adam: return "adam";
    case Method::Adamw: return "adamw";
    case Method::Lookahead: return "lookahead";
    case Method::Sam: return "sam";
    case Method::Sghmc: return "sghmc";
    case Method::Shampoo: return "shampoo";
    case Method::Soap: return "soap";
    case Method::Sophia: return "sophia";
    case Method::Lionk: return "lionk";
    case Method::Muon: return "muon";
  }
  return "unknown";
}

Method method_from_name(const std::string& name) {
  for (Method m : all_methods())
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method: " + name);
}

std::vector<Method> all_methods() {
  return {Method::Gd,      Method::Momentum, Method::Nag,    Method::Adagrad, Method::Rmsprop,
          Method::Adadelta, Method::Adam,    Method::Adamw,  Method::Lookahead, Method::Sam,
          Method::Sghmc,   Method::Shampoo,  Method::Soap,   Method::Sophia,  Method::Lionk,
          Method::Muon};
}

std::string hparam_task_type(Family family) {
  switch (family) {
    case Family::Multiwell: return "multi_well_barrier";
    case Family::Ackley: return "ackley";
    case Family::Levy: return "levy";
    case Family::Rastrigin: return "rastrigin";
    case Family::LennardJones: return "lj_cluster";
    default: return "fallback";
  }
}

namespace {

struct TableRow {
  const char* type;
  double gd_lr;
  double mom_lr, mom_beta;
  double nag_lr, nag_beta;
  double rms_lr, rms_alpha;
  double adam_lr;
  double lion_lr;
  int lion_k;
  double lion_kick;
  double shampoo_lr;
  double soap_lr;
  double sophia_lr, sophia_rho;
};

// Default hyperparameters per task type. Adam uses (0.9, 0.999), LionK
// (0.9, 0.99), SOAP (0.95, 0.99), Sophia (0.965, 0.99) everywhere.
constexpr TableRow kTable[] = {
    {"ackley",             0.030, 0.028, 0.72, 0.026, 0.82, 0.020, 0.99, 0.025, 0.010, 5, 1.15, 0.020, 0.012, 0.030, 0.030},
    {"rastrigin",          0.012, 0.011, 0.65, 0.010, 0.78, 0.010, 0.99, 0.012, 0.006, 5, 1.10, 0.010, 0.008, 0.012, 0.025},
    {"levy",               0.018, 0.016, 0.68, 0.015, 0.80, 0.013, 0.99, 0.016, 0.008, 5, 1.10, 0.013, 0.010, 0.016, 0.030},
    {"multi_well_barrier", 0.014, 0.012, 0.72, 0.011, 0.80, 0.010, 0.99, 0.012, 0.006, 5, 1.10, 0.010, 0.008, 0.012, 0.025},
    {"lj_cluster",         0.0025, 0.0020, 0.65, 0.0018, 0.75, 0.0015, 0.99, 0.0020, 0.0015, 4, 1.05, 0.0015, 0.0018, 0.0020, 0.020},
    {"fallback",           0.020, 0.018, 0.75, 0.016, 0.82, 0.012, 0.99, 0.015, 0.008, 5, 1.10, 0.012, 0.010, 0.016, 0.030},
};

const TableRow& table_row(const std::string& task_type) {
  for (const auto& row : kTable)
    if (task_type == row.type) return row;
  return kTable[5];  // fallback
}

}  // namespace

BaselineHparams lookup_hparams(Method method, const std::string& task_type) {
  const TableRow& row = table_row(task_type);
  BaselineHparams hp;
  switch (method) {
    case Method::Gd: hp.lr = row.gd_lr; break;
    case Method::Momentum:
      hp.lr = row.mom_lr;
      hp.beta1 = row.mom_beta;
      break;
    case Method::Nag:
      hp.lr = row.nag_lr;
      hp.beta1 = row.nag_beta;
      break;
    case Method::Adagrad: hp.lr = row.gd_lr; break;
    case Method::Rmsprop:
      hp.lr = row.rms_lr;
      hp.alpha = row.rms_alpha;
      break;
    case Method::Adadelta:
      hp.lr = 1.0;
      hp.rho = 0.95;
      break;
    case Method::Adam:
      hp.lr = row.adam_lr;
      hp.beta1 = 0.9;
      hp.beta2 = 0.999;
      break;
    case Method::Adamw:
      hp.lr = row.adam_lr;
      hp.beta1 = 0.9;
      hp.beta2 = 0.999;
      hp.weight_decay = 0.01;
      break;
    case Method::Lookahead:
      hp.lr = row.adam_lr;
      hp.beta1 = 0.9;
      hp.beta2 = 0.999;
      hp.lookahead_k = 5;
      hp.lookahead_alpha = 0.5;
      break;
    case Method::Sam:
      hp.lr = row.gd_lr;
      hp.rho = 0.05;
      break;
    case Method::Sghmc:
      hp.lr = row.mom_lr;
      hp.beta1 = row.mom_beta;
      break;
    case Method::Shampoo: hp.lr = row.shampoo_lr; break;
    case Method::Soap:
      hp.lr = row.soap_lr;
      hp.beta1 = 0.95;
      hp.nu = 0.99;
      break;
    case Method::Sophia:
      hp.lr = row.sophia_lr;
      hp.beta1 = 0.965;
      hp.beta2 = 0.99;
      hp.rho = row.sophia_rho;
      break;
    case Method::Lionk:
      hp.lr = row.lion_lr;
      hp.beta1 = 0.9;
      hp.beta2 = 0.99;
      hp.kick_period = row.lion_k;
      hp.kick_scale = row.lion_kick;
      hp.weight_decay = 0.0;
      break;
    case Method::Muon:
      hp.lr = row.gd_lr;
      hp.mu = 0.95;
      break;
  }
  return hp;
}

namespace {

bool is_matrix_method(Method m) { return m == Method::Shampoo || m == Method::Soap || m == Method::Muon; }

void matrix_dims(int dim, int* rows, int* cols) {
  const int root = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dim))));
  if (root * root == dim && root > 1) {
    *rows = root;
    *cols = root;
  } else {
    *rows = 1;
    *cols = dim;
  }
}

Eigen::MatrixXd as_matrix(const Tensor& t, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = t.values[static_cast<size_t>(i) * cols + j];
  return m;
}

void from_matrix(const Eigen::MatrixXd& m, Tensor& t) {
  const int rows = static_cast<int>(m.rows()), cols = static_cast<int>(m.cols());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t.values[static_cast<size_t>(i) * cols + j] = m(i, j);
}

// Symmetric inverse fourth root with eps*I regularization against singular
// accumulators.
Eigen::MatrixXd inv_fourth_root(const Eigen::MatrixXd& a, double eps) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a + eps * Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  Eigen::VectorXd lam = eig.eigenvalues();
  for (int i = 0; i < lam.size(); ++i) lam(i) = std::pow(std::max(lam(i), eps), -0.25);
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::MatrixXd newton_schulz5(const Eigen::MatrixXd& b) {
  // quintic coefficients on the Frobenius-normalized input
  const double a = 3.4445, c2 = -4.7750, c3 = 2.0315;
  const double norm = b.norm();
  if (norm < 1e-12) return Eigen::MatrixXd::Zero(b.rows(), b.cols());
  Eigen::MatrixXd x = b / norm;
  const bool tall = x.rows() > x.cols();
  if (tall) x = x.transpose().eval();
  for (int i = 0; i < 5; ++i) {
    Eigen::MatrixXd gram = x * x.transpose();
    x = a * x + (c2 * gram + c3 * gram * gram) * x;
  }
  if (tall) x = x.transpose().eval();
  return x;
}

}  // namespace

BaselineState baseline_init(Method method, const Tensor& q0, uint64_t seed) {
  BaselineState st;
  st.method = method;
  st.q = q0;
  const int d = static_cast<int>(q0.numel());
  st.p = Tensor::zeros({d});
  st.m = Tensor::zeros({d});
  st.v = Tensor::zeros({d});
  st.aux = Tensor::zeros({d});
  st.curv = Tensor::zeros({d});
  st.slow_q = q0;
  st.rng.reseed(derive_seed(seed, 0xBA5E));
  if (is_matrix_method(method)) {
    matrix_dims(d, &st.rows, &st.cols);
    st.mat_l = Tensor::zeros({st.rows, st.rows});
    st.mat_r = Tensor::zeros({st.cols, st.cols});
    st.mat_v = Tensor::zeros({st.rows, st.cols});
    st.muon_buf = Tensor::zeros({st.rows, st.cols});
  }
  return st;
}

bool queries_at_lookahead(Method m) { return m == Method::Nag; }

Tensor baseline_query_point(const BaselineState& st, const BaselineHparams& hp) {
  if (st.method == Method::Nag) {
    Tensor t = st.q;
    for (size_t i = 0; i < t.values.size(); ++i) t.values[i] += hp.beta1 * st.p.values[i];
    return t;
  }
  return st.q;
}

void baseline_step(BaselineState& st, const Tensor& g, const BaselineHparams& hp,
                   const std::function<Tensor(const Tensor&)>& extra_grad) {
  if (!g.all_finite()) throw NonFiniteError("baseline gradient");
  const size_t d = st.q.values.size();
  st.step += 1;
  const int64_t k = st.step;

  switch (st.method) {
    case Method::Gd:
      for (size_t i = 0; i < d; ++i) st.q.values[i] -= hp.lr * g.values[i];
      break;

    case Method::Momentum:
      // p_{k+1} = (1 - gamma*eta) p_k - eta g ; q_{k+1} = q_k + eta p_{k+1}
      for (size_t i = 0; i < d; ++i) {
        st.p.values[i] = hp.beta1 * st.p.values[i] - hp.lr * g.values[i];
        st.q.values[i] += hp.lr * st.p.values[i];
      }
      break;

    case Method::Nag:
      // g was measured at q + beta p; q_{k+1} = q_k + p_{k+1}
      for (size_t i = 0; i < d; ++i) {
        st.p.values[i] = hp.beta1 * st.p.values[i] - hp.lr * g.values[i];
        st.q.values[i] += st.p.values[i];
      }
      break;

    case Method::Adagrad:
      for (size_t i = 0; i < d; ++i) {
        st.v.values[i] += g.values[i] * g.values[i];
        st.q.values[i] -= hp.lr * g.values[i] / (std::sqrt(st.v.values[i]) + hp.eps);
      }
      break;

    case Method::Rmsprop:
      for (size_t i = 0; i < d; ++i) {
        st.v.values[i] = hp.alpha * st.v.values[i] + (1.0 - hp.alpha) * g.values[i] * g.values[i];
        st.q.values[i] -= hp.lr * g.values[i] / (std::sqrt(st.v.values[i]) + hp.eps);
      }
      break;

    case Method::Adadelta:
      for (size_t i = 0; i < d; ++i) {
        st.v.values[i] = hp.rho * st.v.values[i] + (1.0 - hp.rho) * g.values[i] * g.values[i];
        const double delta =
            -std::sqrt(st.aux.values[i] + hp.eps) / (std::sqrt(st.v.values[i]) + hp.eps) * g.values[i];
        st.aux.values[i] = hp.rho * st.aux.values[i] + (1.0 - hp.rho) * delta * delta;
        st.q.values[i] += hp.lr * delta;
      }
      break;

    case Method::Adam:
    case Method::Adamw: {
      const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(k));
      const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(k));
      for (size_t i = 0; i < d; ++i) {
        st.m.values[i] = hp.beta1 * st.m.values[i] + (1.0 - hp.beta1) * g.values[i];
        st.v.values[i] = hp.beta2 * st.v.values[i] + (1.0 - hp.beta2) * g.values[i] * g.values[i];
        const double mhat = st.m.values[i] / bc1;
        const double vhat = st.v.values[i] / bc2;
        double next = st.q.values[i] - hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
        if (st.method == Method::Adamw) next -= hp.lr * hp.weight_decay * st.q.values[i];
        st.q.values[i] = next;
      }
      break;
    }

    case Method::Lookahead: {
      // Adam inner steps, slow-weight synchronization every K steps
      const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(k));
      const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(k));
      for (size_t i = 0; i < d; ++i) {
        st.m.values[i] = hp.beta1 * st.m.values[i] + (1.0 - hp.beta1) * g.values[i];
        st.v.values[i] = hp.beta2 * st.v.values[i] + (1.0 - hp.beta2) * g.values[i] * g.values[i];
        const double mhat = st.m.values[i] / bc1;
        const double vhat = st.v.values[i] / bc2;
        st.q.values[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
      }
      if (k % hp.lookahead_k == 0) {
        for (size_t i = 0; i < d; ++i) {
          st.slow_q.values[i] += hp.lookahead_alpha * (st.q.values[i] - st.slow_q.values[i]);
          st.q.values[i] = st.slow_q.values[i];
        }
      }
      break;
    }

    case Method::Sam: {
      if (!extra_grad) throw Error("sam needs the inner-maximization gradient hook");
      double gnorm = 0.0;
      for (size_t i = 0; i < d; ++i) gnorm += g.values[i] * g.values[i];
      gnorm = std::sqrt(gnorm);
      Tensor probe = st.q;
      for (size_t i = 0; i < d; ++i) probe.values[i] += hp.rho * g.values[i] / (gnorm + hp.eps);
      Tensor g2 = extra_grad(probe);
      for (size_t i = 0; i < d; ++i) st.q.values[i] -= hp.lr * g2.values[i];
      break;
    }

    case Method::Sghmc: {
      const double gamma_eta = 1.0 - hp.beta1;  // matches the momentum-table damping
      const double noise = std::sqrt(2.0 * gamma_eta);
      for (size_t i = 0; i < d; ++i) {
        st.p.values[i] = hp.beta1 * st.p.values[i] - hp.lr * g.values[i] + noise * st.rng.normal();
        st.q.values[i] += hp.lr * st.p.values[i];
      }
      break;
    }

    case Method::Shampoo: {
      Eigen::MatrixXd gm = as_matrix(g, st.rows, st.cols);
      Eigen::MatrixXd lm = as_matrix(st.mat_l, st.rows, st.rows) + gm * gm.transpose();
      Eigen::MatrixXd rm = as_matrix(st.mat_r, st.cols, st.cols) + gm.transpose() * gm;
      from_matrix(lm, st.mat_l);
      from_matrix(rm, st.mat_r);
      Eigen::MatrixXd pre = inv_fourth_root(lm, hp.eps) * gm * inv_fourth_root(rm, hp.eps);
      Eigen::MatrixXd qm = as_matrix(st.q, st.rows, st.cols) - hp.lr * pre;
      from_matrix(qm, st.q);
      break;
    }

    case Method::Soap: {
      Eigen::MatrixXd gm = as_matrix(g, st.rows, st.cols);
      Eigen::MatrixXd lm = hp.beta1 * as_matrix(st.mat_l, st.rows, st.rows) + (1.0 - hp.beta1) * gm * gm.transpose();
      Eigen::MatrixXd rm = hp.beta1 * as_matrix(st.mat_r, st.cols, st.cols) + (1.0 - hp.beta1) * gm.transpose() * gm;
      from_matrix(lm, st.mat_l);
      from_matrix(rm, st.mat_r);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> el(lm + hp.eps * Eigen::MatrixXd::Identity(st.rows, st.rows));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> er(rm + hp.eps * Eigen::MatrixXd::Identity(st.cols, st.cols));
      Eigen::MatrixXd ghat = el.eigenvectors().transpose() * gm * er.eigenvectors();
      Eigen::MatrixXd vm = as_matrix(st.mat_v, st.rows, st.cols);
      vm = hp.nu * vm + (1.0 - hp.nu) * ghat.cwiseProduct(ghat);
      from_matrix(vm, st.mat_v);
      Eigen::MatrixXd scaled = ghat.array() / (vm.array().sqrt() + hp.eps);
      Eigen::MatrixXd qm = as_matrix(st.q, st.rows, st.cols) -
                           hp.lr * el.eigenvectors() * scaled * er.eigenvectors().transpose();
      from_matrix(qm, st.q);
      break;
    }

    case Method::Sophia: {
      // Hutchinson diagonal refresh every 10 steps through one Rademacher
      // probe and a gradient finite-difference Hessian-vector product
      if ((k - 1) % 10 == 0 && extra_grad) {
        const double fd_eps = 1e-4;
        Tensor z = Tensor::zeros({static_cast<int>(d)});
        for (auto& zv : z.values) zv = st.rng.rademacher();
        Tensor probe = st.q;
        for (size_t i = 0; i < d; ++i) probe.values[i] += fd_eps * z.values[i];
        Tensor gp = extra_grad(probe);
        for (size_t i = 0; i < d; ++i)
          st.aux.values[i] = z.values[i] * (gp.values[i] - g.values[i]) / fd_eps;  // hhat estimate
      }
      for (size_t i = 0; i < d; ++i) {
        st.m.values[i] = hp.beta1 * st.m.values[i] + (1.0 - hp.beta1) * g.values[i];
        st.curv.values[i] = hp.beta2 * st.curv.values[i] + (1.0 - hp.beta2) * st.aux.values[i];
        const double ratio = st.m.values[i] / (st.curv.values[i] + hp.eps);
        st.q.values[i] -= hp.lr * std::clamp(ratio, -hp.rho, hp.rho);
      }
      break;
    }

    case Method::Lionk: {
      const double kick = (k % hp.kick_period == 0) ? hp.kick_scale : 1.0;
      for (size_t i = 0; i < d; ++i) {
        const double c = hp.beta1 * st.m.values[i] + (1.0 - hp.beta1) * g.values[i];
        const double sign = c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
        st.q.values[i] -= hp.lr * kick * (sign + hp.weight_decay * st.q.values[i]);
        st.m.values[i] = hp.beta2 * st.m.values[i] + (1.0 - hp.beta2) * g.values[i];
      }
      break;
    }

    case Method::Muon: {
      Eigen::MatrixXd gm = as_matrix(g, st.rows, st.cols);
      Eigen::MatrixXd bm = hp.mu * as_matrix(st.muon_buf, st.rows, st.cols) + gm;
      from_matrix(bm, st.muon_buf);
      Eigen::MatrixXd om = newton_schulz5(bm);
      Eigen::MatrixXd qm = as_matrix(st.q, st.rows, st.cols) - hp.lr * om;
      from_matrix(qm, st.q);
      break;
    }
  }
  if (!st.q.all_finite()) throw NonFiniteError("baseline state");
}

RolloutTrace run_baseline(const TaskSpec& task, const RunConfig& cfg, Method method) {
  if (cfg.budget < 1) throw ConfigError("budget must be at least 1");
  const Oracle oracle(task, cfg.oracle, derive_seed(cfg.seed, 0x0153));
  const Oracle extra_oracle(task, cfg.oracle, derive_seed(cfg.seed, 0xE117A));
  Budget budget{cfg.budget, 0};
  Budget extra_budget{1LL << 60, 0};

  Rng init_rng(derive_seed(cfg.seed, 0x1217));
  Tensor q0 = sample_initial_point(task, init_rng);
  const BaselineHparams hp = lookup_hparams(method, hparam_task_type(task.family));
  BaselineState st = baseline_init(method, q0, cfg.seed);

  RolloutTrace trace;
  trace.budget_total = cfg.budget;
  if (budget.remaining() < oracle.min_cost())
    throw ConfigError("budget smaller than a single oracle query");

  auto extra_grad = [&](const Tensor& point) {
    OracleSample s = extra_oracle.query(point, extra_budget);
    trace.extra_calls += s.calls_consumed;
    return s.g;
  };

  auto record = [&](const Tensor& point, const OracleSample& s, int64_t step) {
    if (s.f < trace.best_f) {
      trace.best_f = s.f;
      trace.best_q = point;
    }
    trace.rows.push_back(TraceRow{step, static_cast<int>(step), point.values, st.p.values, s.f,
                                  ops::norm2(s.g).scalar_value(), budget.used, trace.best_f,
                                  StageMode::Settle, 0, 0.0});
  };

  OracleSample sample;
  try {
    sample = oracle.query(q0, budget);
  } catch (const SingularConfigError&) {
    sample.f = 1e30;
    sample.g = Tensor::zeros(q0.shape);
  }
  trace.best_f = sample.f;
  trace.best_q = q0;
  trace.rows.push_back(TraceRow{0, 0, q0.values, st.p.values, sample.f,
                                ops::norm2(sample.g).scalar_value(), budget.used, sample.f,
                                StageMode::Settle, kFlagStageStart, 0.0});

  int64_t step_index = 1;
  while (budget.remaining() >= oracle.min_cost()) {
    try {
      if (queries_at_lookahead(method)) {
        const Tensor point = baseline_query_point(st, hp);
        OracleSample s = oracle.query(point, budget);
        record(point, s, step_index++);
        baseline_step(st, s.g, hp, extra_grad);
      } else {
        baseline_step(st, sample.g, hp, extra_grad);
        OracleSample s = oracle.query(st.q, budget);
        record(st.q, s, step_index++);
        sample = s;
      }
    } catch (const SingularConfigError&) {
      // LJ core blow-up: freeze further progress at the best iterate
      st.q = trace.best_q;
      st.p = Tensor::zeros(st.p.shape);
      sample.g = Tensor::zeros(st.q.shape);
      trace.divergence_resets += 1;
    } catch (const NonFiniteError&) {
      st.q = trace.best_q;
      st.p = Tensor::zeros(st.p.shape);
      trace.divergence_resets += 1;
    }
  }

  trace.final_q = trace.rows.back().q.empty() ? st.q : Tensor::vector(trace.rows.back().q);
  trace.calls_used = budget.used;
  trace.stages = static_cast<int>(trace.rows.size());
  return trace;
}

}  // namespace shape
