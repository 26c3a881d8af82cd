#include "shape/oracles.hpp"

#include <cmath>

#include "shape/error.hpp"

namespace shape {

std::string oracle_name(OracleKind k) {
  switch (k) {
    case OracleKind::Exact: return "exact";
    case OracleKind::Stochastic: return "stochastic";
    case OracleKind::ZerothOrder: return "zo";
    case OracleKind::Minibatch: return "minibatch";
  }
  return "unknown";
}

OracleKind oracle_from_name(const std::string& name) {
  if (name == "exact" || name == "first_order") return OracleKind::Exact;
  if (name == "stochastic" || name == "noisy") return OracleKind::Stochastic;
  if (name == "zo" || name == "zeroth_order") return OracleKind::ZerothOrder;
  if (name == "minibatch") return OracleKind::Minibatch;
  throw ConfigError("unknown oracle kind: " + name);
}

void Budget::charge(int64_t calls) {
  if (calls < 1) throw Error("oracle call must consume at least one evaluation");
  if (used + calls > total) throw BudgetExhaustedError("charge of " + std::to_string(calls));
  used += calls;
}

OracleSample query_exact(const TaskSpec& task, const Tensor& q, Budget& budget) {
  budget.charge(1);
  OracleSample s;
  s.kind = OracleKind::Exact;
  s.f = eval_f(task, q);
  s.g = eval_grad(task, q);
  s.calls_consumed = 1;
  return s;
}

OracleSample query_stochastic(const TaskSpec& task, const Tensor& q, double sigma_g,
                              const NoiseStream& noise, Budget& budget) {
  if (sigma_g < 0.0) throw ConfigError("sigma_g must be nonnegative");
  const uint64_t call_index = static_cast<uint64_t>(budget.used);
  budget.charge(1);
  OracleSample s;
  s.kind = OracleKind::Stochastic;
  s.f = eval_f(task, q);
  s.g = eval_grad(task, q);
  if (sigma_g > 0.0) {
    Rng rng = noise.at_call(call_index);
    for (auto& v : s.g.values) v += sigma_g * rng.normal();
  }
  s.calls_consumed = 1;
  return s;
}

OracleSample query_zeroth_order(const TaskSpec& task, const Tensor& q, double epsilon, int directions,
                                const NoiseStream& noise, Budget& budget) {
  if (epsilon <= 0.0) throw ConfigError("zo epsilon must be positive");
  if (directions < 1) throw ConfigError("zo needs at least one direction");
  const int64_t cost = 2 * static_cast<int64_t>(directions);
  if (budget.used + cost > budget.total) throw BudgetExhaustedError("zeroth-order estimate needs 2K calls");
  const uint64_t call_index = static_cast<uint64_t>(budget.used);
  budget.charge(cost);

  const int d = static_cast<int>(q.numel());
  Rng rng = noise.at_call(call_index);
  OracleSample s;
  s.kind = OracleKind::ZerothOrder;
  s.g = Tensor::zeros(q.shape);
  double fsum = 0.0;
  Tensor probe = q;
  for (int i = 0; i < directions; ++i) {
    const std::vector<double> u = rng.unit_vector(d);
    for (int j = 0; j < d; ++j)
      probe.values[static_cast<size_t>(j)] = q.values[static_cast<size_t>(j)] + epsilon * u[static_cast<size_t>(j)];
    const double fp = eval_f(task, probe);
    for (int j = 0; j < d; ++j)
      probe.values[static_cast<size_t>(j)] = q.values[static_cast<size_t>(j)] - epsilon * u[static_cast<size_t>(j)];
    const double fm = eval_f(task, probe);
    const double slope = (fp - fm) / (2.0 * epsilon);
    for (int j = 0; j < d; ++j) s.g.values[static_cast<size_t>(j)] += slope * u[static_cast<size_t>(j)];
    fsum += 0.5 * (fp + fm);
  }
  for (auto& v : s.g.values) v /= static_cast<double>(directions);
  // no central evaluation is charged; report the probe average, which is
  // f(q) + O(eps^2)
  s.f = fsum / static_cast<double>(directions);
  s.calls_consumed = cost;
  return s;
}

OracleSample query_minibatch(const TaskSpec& task, const Tensor& q, const std::vector<int>& batch,
                             Budget& budget) {
  if (task.family != Family::PhaseRetrieval) throw ConfigError("minibatch oracle is phase-retrieval only");
  if (batch.empty()) throw ConfigError("empty mini-batch");
  const int m = task.phase_sensing.shape[0], n = task.phase_sensing.shape[1];
  for (int i : batch)
    if (i < 0 || i >= m) throw ConfigError("mini-batch index out of range");
  budget.charge(1);

  OracleSample s;
  s.kind = OracleKind::Minibatch;
  s.g = Tensor::zeros(q.shape);
  double f = 0.0;
  for (int i : batch) {
    const double* row = task.phase_sensing.values.data() + static_cast<size_t>(i) * n;
    double ip = 0.0;
    for (int j = 0; j < n; ++j) ip += row[j] * q.values[static_cast<size_t>(j)];
    const double resid = ip * ip - task.phase_obs[i];
    f += resid * resid;
    const double c = 4.0 * resid * ip / static_cast<double>(batch.size());
    for (int j = 0; j < n; ++j) s.g.values[static_cast<size_t>(j)] += c * row[j];
  }
  f /= static_cast<double>(batch.size());
  double norm2 = 0.0;
  for (double v : q.values) norm2 += v * v;
  s.f = f + 0.5 * task.phase_lambda * norm2;
  for (int j = 0; j < n; ++j) s.g.values[static_cast<size_t>(j)] += task.phase_lambda * q.values[static_cast<size_t>(j)];
  s.calls_consumed = 1;
  return s;
}

OracleSample Oracle::query(const Tensor& q, Budget& budget) const {
  switch (params_.kind) {
    case OracleKind::Exact: return query_exact(*task_, q, budget);
    case OracleKind::Stochastic: return query_stochastic(*task_, q, params_.sigma_g, noise_, budget);
    case OracleKind::ZerothOrder:
      return query_zeroth_order(*task_, q, params_.zo_epsilon, params_.zo_directions, noise_, budget);
    case OracleKind::Minibatch: {
      // uniform without-replacement batch drawn from the call-indexed stream
      const int m = task_->phase_sensing.shape[0];
      const int b = std::min(params_.minibatch, m);
      Rng rng = noise_.at_call(static_cast<uint64_t>(budget.used));
      std::vector<int> all(static_cast<size_t>(m));
      for (int i = 0; i < m; ++i) all[static_cast<size_t>(i)] = i;
      for (int i = 0; i < b; ++i) {
        const int j = i + static_cast<int>(rng.index(static_cast<uint64_t>(m - i)));
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
      }
      all.resize(static_cast<size_t>(b));
      return query_minibatch(*task_, q, all, budget);
    }
  }
  throw Error("unreachable");
}

}  // namespace shape
