#include "shape/tasks.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "shape/error.hpp"
#include "shape/nets.hpp"

namespace shape {

namespace {

constexpr double kPi = std::numbers::pi;

// Ackley constants (standard parameters)
constexpr double kAckleyA = 20.0;
constexpr double kAckleyB = 0.2;
constexpr double kAckleyC = 2.0 * kPi;

// Boundary wall outside the multiwell domain: curvature 50.
constexpr double kWallCurvature = 50.0;

double family_halfwidth(Family f) {
  switch (f) {
    case Family::Multiwell: return 5.0;
    case Family::Ackley:
    case Family::Levy:
    case Family::Rastrigin: return 5.0;
    case Family::LennardJones: return 3.0;
    case Family::PhaseRetrieval: return 3.0;
    case Family::Control: return 5.0;
  }
  return 5.0;
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::Multiwell: return "multiwell";
    case Family::Ackley: return "ackley";
    case Family::Levy: return "levy";
    case Family::Rastrigin: return "rastrigin";
    case Family::LennardJones: return "lj";
    case Family::PhaseRetrieval: return "phase";
    case Family::Control: return "control";
  }
  return "unknown";
}

Family family_from_name(const std::string& name) {
  if (name == "multiwell") return Family::Multiwell;
  if (name == "ackley") return Family::Ackley;
  if (name == "levy") return Family::Levy;
  if (name == "rastrigin") return Family::Rastrigin;
  if (name == "lj" || name == "lj_cluster") return Family::LennardJones;
  if (name == "phase" || name == "phase_retrieval") return Family::PhaseRetrieval;
  if (name == "control" || name == "control_trajopt") return Family::Control;
  throw ConfigError("unknown task family: " + name);
}

// ---------------------------------------------------------------------------
// Multiwell construction

namespace {

MultiwellKnots sample_knots(int wells, double halfwidth, Rng& rng) {
  const int m = 2 * wells - 1;
  const double min_sep = 2.0 * halfwidth / (4.0 * wells);
  // m+1 gaps of at least min_sep spanning [-K, K]; the slack is spread
  // proportionally to uniform draws.
  std::vector<double> u(static_cast<size_t>(m) + 1);
  double usum = 0.0;
  for (auto& x : u) {
    x = rng.uniform(0.05, 1.0);
    usum += x;
  }
  const double slack = 2.0 * halfwidth - (m + 1) * min_sep;
  MultiwellKnots k;
  k.x.resize(static_cast<size_t>(m));
  double pos = -halfwidth;
  for (int i = 0; i < m; ++i) {
    pos += min_sep + slack * u[static_cast<size_t>(i)] / usum;
    k.x[static_cast<size_t>(i)] = pos;
  }
  k.v.resize(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i)
    k.v[static_cast<size_t>(i)] = (i % 2 == 0) ? rng.uniform(0.0, 2.0) : rng.uniform(3.0, 6.0);

  k.margin = 0.5;
  if (wells >= 2) {
    k.global_index = 2 * static_cast<int>(rng.index(static_cast<uint64_t>(wells)));
    double other_min = 1e300;
    for (int i = 0; i < m; i += 2)
      if (i != k.global_index) other_min = std::min(other_min, k.v[static_cast<size_t>(i)]);
    k.v[static_cast<size_t>(k.global_index)] = other_min - k.margin;
  } else {
    k.global_index = 0;
  }
  double vmax = 0.0;
  for (double v : k.v) vmax = std::max(vmax, v);
  k.wall_value = vmax + 2.0;
  return k;
}

// Hermite interpolation with zero slope at both ends of each interval.
// Knot list is extended by the boundary knots at +-K.
void multiwell_eval(const MultiwellKnots& k, double halfwidth, double x, double* f, double* df) {
  const int m = static_cast<int>(k.x.size());
  if (x <= -halfwidth || x >= halfwidth) {
    const double excess = std::abs(x) - halfwidth;
    if (f) *f = k.wall_value + 0.5 * kWallCurvature * excess * excess;
    if (df) *df = kWallCurvature * excess * (x > 0 ? 1.0 : -1.0);
    return;
  }
  // locate the interval in the augmented knot sequence -K, x_0..x_{m-1}, K
  double x0 = -halfwidth, v0 = k.wall_value;
  double x1 = halfwidth, v1 = k.wall_value;
  int lo = -1;
  for (int i = 0; i < m; ++i) {
    if (k.x[static_cast<size_t>(i)] <= x) lo = i;
    else break;
  }
  if (lo >= 0) {
    x0 = k.x[static_cast<size_t>(lo)];
    v0 = k.v[static_cast<size_t>(lo)];
  }
  if (lo + 1 < m) {
    x1 = k.x[static_cast<size_t>(lo + 1)];
    v1 = k.v[static_cast<size_t>(lo + 1)];
  }
  const double h = x1 - x0;
  const double t = (x - x0) / h;
  const double h00 = 2 * t * t * t - 3 * t * t + 1;
  const double h01 = -2 * t * t * t + 3 * t * t;
  if (f) *f = v0 * h00 + v1 * h01;
  if (df) {
    const double dh00 = 6 * t * t - 6 * t;
    const double dh01 = -6 * t * t + 6 * t;
    *df = (v0 * dh00 + v1 * dh01) / h;
  }
}

// ---------------------------------------------------------------------------
// Benchmark base functions on the unshifted coordinate x

double ackley_f(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0, c = 0.0;
  for (double xi : x) {
    s += xi * xi;
    c += std::cos(kAckleyC * xi);
  }
  return -kAckleyA * std::exp(-kAckleyB * std::sqrt(s / n)) - std::exp(c / n) + kAckleyA + std::exp(1.0);
}

void ackley_grad(const std::vector<double>& x, std::vector<double>& g) {
  const double n = static_cast<double>(x.size());
  double s = 0.0, c = 0.0;
  for (double xi : x) {
    s += xi * xi;
    c += std::cos(kAckleyC * xi);
  }
  const double r = std::sqrt(s / n);
  const double e1 = std::exp(-kAckleyB * r);
  const double e2 = std::exp(c / n);
  for (size_t i = 0; i < x.size(); ++i) {
    const double radial = (r > 1e-15) ? kAckleyA * kAckleyB * e1 * x[i] / (n * r) : 0.0;
    g[i] = radial + (kAckleyC / n) * e2 * std::sin(kAckleyC * x[i]);
  }
}

double rastrigin_f(const std::vector<double>& x) {
  double f = 10.0 * static_cast<double>(x.size());
  for (double xi : x) f += xi * xi - 10.0 * std::cos(2.0 * kPi * xi);
  return f;
}

void rastrigin_grad(const std::vector<double>& x, std::vector<double>& g) {
  for (size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * x[i] + 20.0 * kPi * std::sin(2.0 * kPi * x[i]);
}

// Shifted Levy convention: w_i = 1 + x_i/4 so the minimum sits at x = 0.
double levy_f(const std::vector<double>& x) {
  const size_t n = x.size();
  auto w = [&](size_t i) { return 1.0 + x[i] / 4.0; };
  double f = std::sin(kPi * w(0)) * std::sin(kPi * w(0));
  for (size_t i = 0; i + 1 < n; ++i) {
    const double wi = w(i), sw = std::sin(kPi * wi + 1.0);
    f += (wi - 1.0) * (wi - 1.0) * (1.0 + 10.0 * sw * sw);
  }
  const double wn = w(n - 1), swn = std::sin(2.0 * kPi * wn);
  f += (wn - 1.0) * (wn - 1.0) * (1.0 + swn * swn);
  return f;
}

void levy_grad(const std::vector<double>& x, std::vector<double>& g) {
  const size_t n = x.size();
  auto w = [&](size_t i) { return 1.0 + x[i] / 4.0; };
  std::fill(g.begin(), g.end(), 0.0);
  g[0] += kPi * std::sin(2.0 * kPi * w(0));
  for (size_t i = 0; i + 1 < n; ++i) {
    const double wi = w(i), sw = std::sin(kPi * wi + 1.0);
    g[i] += 2.0 * (wi - 1.0) * (1.0 + 10.0 * sw * sw) +
            10.0 * kPi * (wi - 1.0) * (wi - 1.0) * std::sin(2.0 * (kPi * wi + 1.0));
  }
  const double wn = w(n - 1), swn = std::sin(2.0 * kPi * wn);
  g[n - 1] += 2.0 * (wn - 1.0) * (1.0 + swn * swn) +
              2.0 * kPi * (wn - 1.0) * (wn - 1.0) * std::sin(4.0 * kPi * wn);
  for (auto& gi : g) gi *= 0.25;  // dw/dx
}

// ---------------------------------------------------------------------------
// Lennard-Jones

double lj_f(const TaskSpec& t, const std::vector<double>& q) {
  const int n = t.lj_particles;
  double f = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double diff = q[static_cast<size_t>(3 * i + a)] - q[static_cast<size_t>(3 * j + a)];
        d2 += diff * diff;
      }
      const double r = std::sqrt(d2);
      if (r < 1e-12) throw SingularConfigError("coincident particles");
      const double sr6 = std::pow(t.lj_sigma / r, 6.0);
      f += 4.0 * t.lj_eps * (sr6 * sr6 - sr6);
    }
  return f;
}

void lj_grad(const TaskSpec& t, const std::vector<double>& q, std::vector<double>& g) {
  const int n = t.lj_particles;
  std::fill(g.begin(), g.end(), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      double diff[3];
      for (int a = 0; a < 3; ++a) {
        diff[a] = q[static_cast<size_t>(3 * i + a)] - q[static_cast<size_t>(3 * j + a)];
        d2 += diff[a] * diff[a];
      }
      const double r = std::sqrt(d2);
      if (r < 1e-12) throw SingularConfigError("coincident particles");
      const double sr6 = std::pow(t.lj_sigma / r, 6.0);
      // dv/dr = 4 eps (-12 sr12 + 6 sr6) / r
      const double dvdr = 4.0 * t.lj_eps * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r;
      for (int a = 0; a < 3; ++a) {
        const double c = dvdr * diff[a] / r;
        g[static_cast<size_t>(3 * i + a)] += c;
        g[static_cast<size_t>(3 * j + a)] -= c;
      }
    }
}

// ---------------------------------------------------------------------------
// Phase retrieval

double phase_f(const TaskSpec& t, const std::vector<double>& x) {
  const int m = t.phase_sensing.shape[0], n = t.phase_sensing.shape[1];
  double f = 0.0;
  for (int i = 0; i < m; ++i) {
    double ip = 0.0;
    const double* row = t.phase_sensing.values.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ip += row[j] * x[static_cast<size_t>(j)];
    const double resid = ip * ip - t.phase_obs[i];
    f += resid * resid;
  }
  f /= static_cast<double>(m);
  double norm2 = 0.0;
  for (double xi : x) norm2 += xi * xi;
  return f + 0.5 * t.phase_lambda * norm2;
}

void phase_grad(const TaskSpec& t, const std::vector<double>& x, std::vector<double>& g) {
  const int m = t.phase_sensing.shape[0], n = t.phase_sensing.shape[1];
  std::fill(g.begin(), g.end(), 0.0);
  for (int i = 0; i < m; ++i) {
    double ip = 0.0;
    const double* row = t.phase_sensing.values.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ip += row[j] * x[static_cast<size_t>(j)];
    const double c = 4.0 * (ip * ip - t.phase_obs[i]) * ip / static_cast<double>(m);
    for (int j = 0; j < n; ++j) g[static_cast<size_t>(j)] += c * row[j];
  }
  for (int j = 0; j < n; ++j) g[static_cast<size_t>(j)] += t.phase_lambda * x[static_cast<size_t>(j)];
}

// ---------------------------------------------------------------------------
// Control trajectory optimization (explicit Euler, quadratic costs)

struct ControlCost {
  double qx_pos = 1.0;
  double qx_vel = 0.1;
  double qf = 10.0;
};

void control_dynamics_step(const ControlParams& c, const double* x, double u, double* xn) {
  switch (c.system) {
    case ControlSystem::DoubleIntegrator:
      xn[0] = x[0] + c.dt * x[1];
      xn[1] = x[1] + c.dt * u;
      break;
    case ControlSystem::Pendulum:
      xn[0] = x[0] + c.dt * x[1];
      xn[1] = x[1] + c.dt * (-10.0 * std::sin(x[0]) + u);
      break;
  }
}

double control_f(const TaskSpec& t, const std::vector<double>& q) {
  const ControlParams& c = t.control;
  const ControlCost cost;
  double x[2] = {c.x0[0], c.x0[1]};
  double f = 0.0;
  for (int k = 0; k < c.horizon; ++k) {
    const double e0 = x[0] - c.goal[0], e1 = x[1] - c.goal[1];
    f += 0.5 * c.dt * (cost.qx_pos * e0 * e0 + cost.qx_vel * e1 * e1);
    f += c.lambda_u * q[static_cast<size_t>(k)] * q[static_cast<size_t>(k)];
    double xn[2];
    control_dynamics_step(c, x, q[static_cast<size_t>(k)], xn);
    x[0] = xn[0];
    x[1] = xn[1];
  }
  const double e0 = x[0] - c.goal[0], e1 = x[1] - c.goal[1];
  f += 0.5 * cost.qf * (e0 * e0 + e1 * e1);
  return f;
}

// Reverse-mode differentiation through the rollout via the tape.
void control_grad(const TaskSpec& t, const std::vector<double>& qv, std::vector<double>& g) {
  const ControlParams& c = t.control;
  const ControlCost cost;
  Tape tape;
  TapeScope scope(tape);
  Tensor q = tape.leaf(Tensor::vector(qv));
  Tensor x = Tensor::vector({c.x0[0], c.x0[1]});
  Tensor total = Tensor::scalar(0.0);
  const Tensor goal = Tensor::vector({c.goal[0], c.goal[1]});
  for (int k = 0; k < c.horizon; ++k) {
    Tensor e = ops::sub(x, goal);
    Tensor we = ops::hadamard(e, Tensor::vector({cost.qx_pos, cost.qx_vel}));
    total = ops::add(total, ops::scale(ops::dot(e, we), 0.5 * c.dt));
    Tensor uk = ops::slice(q, k, 1);
    total = ops::add(total, ops::scale(ops::dot(uk, uk), c.lambda_u));
    Tensor pos = ops::slice(x, 0, 1), vel = ops::slice(x, 1, 1);
    Tensor npos = ops::add(pos, ops::scale(vel, c.dt));
    Tensor nvel;
    if (c.system == ControlSystem::DoubleIntegrator) {
      nvel = ops::add(vel, ops::scale(uk, c.dt));
    } else {
      // d/dpos of -10 sin(pos) handled through a value_with_grad node
      Tensor torque = ops::value_with_grad(pos, -10.0 * std::sin(pos.values[0]),
                                           {-10.0 * std::cos(pos.values[0])});
      Tensor accel = ops::add(ops::concat({torque}), uk);
      nvel = ops::add(vel, ops::scale(accel, c.dt));
    }
    x = ops::concat({npos, nvel});
  }
  Tensor e = ops::sub(x, goal);
  total = ops::add(total, ops::scale(ops::dot(e, e), 0.5 * cost.qf));
  GradMap grads = tape.backward(total);
  g = grads.grad(q).values;
}

Tensor random_rotation(int d, Rng& rng) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd qmat = qr.householderQ();
  Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (rmat(j, j) < 0) qmat.col(j) *= -1.0;
  Tensor rot = Tensor::zeros({d, d});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) rot.values[static_cast<size_t>(i) * d + j] = qmat(i, j);
  return rot;
}

// q -> R (q - s) for the benchmark families; identity transforms otherwise.
std::vector<double> to_base_coords(const TaskSpec& t, const Tensor& q) {
  std::vector<double> x(q.values);
  if (t.shift.numel() == q.numel())
    for (size_t i = 0; i < x.size(); ++i) x[i] -= t.shift.values[i];
  if (t.rotated) {
    std::vector<double> y(x.size(), 0.0);
    const int d = t.dim;
    for (int i = 0; i < d; ++i) {
      const double* row = t.rotation.values.data() + static_cast<size_t>(i) * d;
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += row[j] * x[static_cast<size_t>(j)];
      y[static_cast<size_t>(i)] = acc;
    }
    return y;
  }
  return x;
}

// chain rule back through the task transform: g_q = R^T g_x
void from_base_grad(const TaskSpec& t, std::vector<double>& g) {
  if (!t.rotated) return;
  const int d = t.dim;
  std::vector<double> out(g.size(), 0.0);
  for (int i = 0; i < d; ++i) {
    const double* row = t.rotation.values.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += row[j] * g[static_cast<size_t>(i)];
  }
  g = out;
}

Reference multistart_reference(const TaskSpec& t, int restarts, int steps);

}  // namespace

// ---------------------------------------------------------------------------

TaskSpec make_task(Family family, int dim, uint64_t seed, const TaskOptions& opts) {
  TaskSpec t;
  t.family = family;
  t.dim = dim;
  t.seed = seed;
  t.domain_halfwidth = family_halfwidth(family);
  Rng rng(derive_seed(seed, 0xA11CE));

  switch (family) {
    case Family::Multiwell: {
      if (dim != 1) throw ConfigError("multiwell tasks are one-dimensional");
      if (opts.wells < 2) throw ConfigError("multiwell needs at least 2 wells");
      t.knots = sample_knots(opts.wells, t.domain_halfwidth, rng);
      t.reference.q_star = Tensor::vector({t.knots.x[static_cast<size_t>(t.knots.global_index)]});
      t.reference.f_star = t.knots.v[static_cast<size_t>(t.knots.global_index)];
      break;
    }
    case Family::Ackley:
    case Family::Levy:
    case Family::Rastrigin: {
      if (dim < 1) throw ConfigError("benchmark dim must be positive");
      t.shift = Tensor::zeros({dim});
      for (auto& v : t.shift.values) v = rng.uniform(-t.domain_halfwidth, t.domain_halfwidth);
      t.rotated = opts.rotate;
      t.rotation = opts.rotate ? random_rotation(dim, rng) : Tensor::identity(dim);
      t.reference.q_star = t.shift;
      t.reference.f_star = 0.0;
      break;
    }
    case Family::LennardJones: {
      if (dim % 3 != 0 || dim < 6) throw ConfigError("lj dim must be 3*N with N >= 2");
      t.lj_particles = dim / 3;
      t.lj_eps = opts.lj_eps;
      t.lj_sigma = opts.lj_sigma;
      if (t.lj_particles == 2) {
        t.reference.f_star = -t.lj_eps;
        const double r = std::pow(2.0, 1.0 / 6.0) * t.lj_sigma;
        t.reference.q_star = Tensor::vector({-r / 2, 0, 0, r / 2, 0, 0});
      } else {
        t.reference = multistart_reference(t, 24, 600);
      }
      break;
    }
    case Family::PhaseRetrieval: {
      const int n = dim, m = 4 * dim;
      t.phase_lambda = 1e-3;
      t.phase_noise = opts.phase_noise;
      t.phase_sensing = Tensor::zeros({m, n});
      const double row_scale = 1.0 / std::sqrt(static_cast<double>(n));
      for (auto& v : t.phase_sensing.values) v = rng.normal() * row_scale;
      t.phase_signal = Tensor::zeros({n});
      for (auto& v : t.phase_signal.values) v = rng.normal();
      t.phase_obs = Tensor::zeros({m});
      for (int i = 0; i < m; ++i) {
        double ip = 0.0;
        for (int j = 0; j < n; ++j)
          ip += t.phase_sensing.values[static_cast<size_t>(i) * n + j] * t.phase_signal.values[static_cast<size_t>(j)];
        t.phase_obs.values[static_cast<size_t>(i)] = ip * ip + opts.phase_noise * rng.normal();
      }
      t.reference.q_star = t.phase_signal;
      t.reference.f_star = phase_f(t, t.phase_signal.values);  // noise-floor value
      break;
    }
    case Family::Control: {
      t.control.system = opts.control_system;
      t.control.horizon = dim;
      t.control.dt = 2.0 / static_cast<double>(dim);
      t.control.lambda_u = opts.lambda_u;
      if (opts.control_system == ControlSystem::DoubleIntegrator) {
        t.control.x0 = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
        t.control.goal = {0.0, 0.0};
      } else {
        t.control.x0 = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
        t.control.goal = {kPi, 0.0};
      }
      t.reference = multistart_reference(t, 12, 800);
      break;
    }
  }
  std::ostringstream id;
  id << family_name(family) << "-d" << dim << "-s" << seed;
  t.id = id.str();
  return t;
}

double eval_f(const TaskSpec& t, const Tensor& q) {
  if (q.numel() != t.dim) throw ShapeMismatchError("eval_f dimension");
  switch (t.family) {
    case Family::Multiwell: {
      double f = 0.0;
      multiwell_eval(t.knots, t.domain_halfwidth, q.values[0], &f, nullptr);
      return f;
    }
    case Family::Ackley: return ackley_f(to_base_coords(t, q));
    case Family::Levy: return levy_f(to_base_coords(t, q));
    case Family::Rastrigin: return rastrigin_f(to_base_coords(t, q));
    case Family::LennardJones: return lj_f(t, q.values);
    case Family::PhaseRetrieval: return phase_f(t, q.values);
    case Family::Control: return control_f(t, q.values);
  }
  throw Error("unreachable");
}

Tensor eval_grad(const TaskSpec& t, const Tensor& q) {
  if (q.numel() != t.dim) throw ShapeMismatchError("eval_grad dimension");
  std::vector<double> g(static_cast<size_t>(t.dim), 0.0);
  switch (t.family) {
    case Family::Multiwell: {
      double df = 0.0;
      multiwell_eval(t.knots, t.domain_halfwidth, q.values[0], nullptr, &df);
      g[0] = df;
      break;
    }
    case Family::Ackley: {
      auto x = to_base_coords(t, q);
      ackley_grad(x, g);
      from_base_grad(t, g);
      break;
    }
    case Family::Levy: {
      auto x = to_base_coords(t, q);
      levy_grad(x, g);
      from_base_grad(t, g);
      break;
    }
    case Family::Rastrigin: {
      auto x = to_base_coords(t, q);
      rastrigin_grad(x, g);
      from_base_grad(t, g);
      break;
    }
    case Family::LennardJones: lj_grad(t, q.values, g); break;
    case Family::PhaseRetrieval: phase_grad(t, q.values, g); break;
    case Family::Control: control_grad(t, q.values, g); break;
  }
  return Tensor::vector(std::move(g));
}

Reference reference_optimum(const TaskSpec& t) { return t.reference; }

Tensor sample_initial_point(const TaskSpec& t, Rng& rng) {
  const double hw = t.domain_halfwidth;
  Tensor q = Tensor::zeros({t.dim});
  switch (t.family) {
    case Family::LennardJones: {
      // redraw until no pair starts inside the steep core
      for (int attempt = 0; attempt < 256; ++attempt) {
        for (auto& v : q.values) v = rng.uniform(-hw / 2.0, hw / 2.0);
        double min_d = 1e300;
        for (int i = 0; i < t.lj_particles; ++i)
          for (int j = i + 1; j < t.lj_particles; ++j) {
            double d2 = 0.0;
            for (int a = 0; a < 3; ++a) {
              const double diff = q.values[static_cast<size_t>(3 * i + a)] - q.values[static_cast<size_t>(3 * j + a)];
              d2 += diff * diff;
            }
            min_d = std::min(min_d, std::sqrt(d2));
          }
        if (min_d > 0.8 * t.lj_sigma) break;
      }
      return q;
    }
    case Family::PhaseRetrieval:
      for (auto& v : q.values) v = rng.normal();
      return q;
    case Family::Control:
      for (auto& v : q.values) v = rng.uniform(-1.0, 1.0);
      return q;
    default:
      for (auto& v : q.values) v = rng.uniform(-hw, hw);
      return q;
  }
}

std::vector<double> control_terminal_state(const TaskSpec& t, const Tensor& q) {
  const ControlParams& c = t.control;
  double x[2] = {c.x0[0], c.x0[1]};
  for (int k = 0; k < c.horizon; ++k) {
    double xn[2];
    control_dynamics_step(c, x, q.values[static_cast<size_t>(k)], xn);
    x[0] = xn[0];
    x[1] = xn[1];
  }
  return {x[0], x[1]};
}

namespace {

// Rigid alignment distance for LJ configurations: remove centroids, match
// particles greedily, then Kabsch-align. Energy is the primary LJ metric;
// this distance is an auxiliary diagnostic, so the greedy relabeling is
// acceptable.
double lj_aligned_rmsd(const TaskSpec& t, const Tensor& qa, const Tensor& qb) {
  const int n = t.lj_particles;
  Eigen::MatrixXd a(3, n), b(3, n);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      a(c, i) = qa.values[static_cast<size_t>(3 * i + c)];
      b(c, i) = qb.values[static_cast<size_t>(3 * i + c)];
    }
  a.colwise() -= a.rowwise().mean().eval();
  b.colwise() -= b.rowwise().mean().eval();

  std::vector<int> perm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(3, 3);
  for (int round = 0; round < 3; ++round) {
    // greedy nearest-neighbor relabeling under the current rotation
    Eigen::MatrixXd ra = rot * a;
    std::vector<bool> used(static_cast<size_t>(n), false);
    for (int i = 0; i < n; ++i) {
      double best = 1e300;
      int pick = -1;
      for (int j = 0; j < n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double d = (ra.col(i) - b.col(j)).squaredNorm();
        if (d < best) {
          best = d;
          pick = j;
        }
      }
      perm[static_cast<size_t>(i)] = pick;
      used[static_cast<size_t>(pick)] = true;
    }
    Eigen::MatrixXd bp(3, n);
    for (int i = 0; i < n; ++i) bp.col(i) = b.col(perm[static_cast<size_t>(i)]);
    Eigen::Matrix3d h = a * bp.transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    double det = (svd.matrixV() * svd.matrixU().transpose()).determinant();
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = det > 0 ? 1.0 : -1.0;
    rot = svd.matrixV() * d * svd.matrixU().transpose();
  }
  Eigen::MatrixXd bp(3, n);
  for (int i = 0; i < n; ++i) bp.col(i) = b.col(perm[static_cast<size_t>(i)]);
  return std::sqrt((rot * a - bp).squaredNorm() / static_cast<double>(n));
}

}  // namespace

double reference_distance(const TaskSpec& t, const Tensor& q) {
  const Reference& ref = t.reference;
  switch (t.family) {
    case Family::PhaseRetrieval: {
      // sign-invariant reconstruction distance
      double dplus = 0.0, dminus = 0.0;
      for (size_t i = 0; i < q.values.size(); ++i) {
        const double r = ref.q_star.values[i];
        dplus += (q.values[i] - r) * (q.values[i] - r);
        dminus += (q.values[i] + r) * (q.values[i] + r);
      }
      return std::sqrt(std::min(dplus, dminus));
    }
    case Family::LennardJones:
      if (ref.q_star.numel() != q.numel()) return std::nan("");
      return lj_aligned_rmsd(t, q, ref.q_star);
    case Family::Control: {
      const auto xt = control_terminal_state(t, q);
      const double e0 = xt[0] - t.control.goal[0], e1 = xt[1] - t.control.goal[1];
      return std::sqrt(e0 * e0 + e1 * e1);
    }
    default: {
      if (ref.q_star.numel() != q.numel()) return std::nan("");
      double d = 0.0;
      for (size_t i = 0; i < q.values.size(); ++i) {
        const double diff = q.values[i] - ref.q_star.values[i];
        d += diff * diff;
      }
      return std::sqrt(d);
    }
  }
}

std::vector<double> task_descriptor(const TaskSpec& t) {
  return {static_cast<double>(static_cast<int>(t.family)) / 6.0,
          std::log(1.0 + static_cast<double>(t.dim)) / std::log(501.0),
          t.domain_halfwidth / 5.0, t.rotated ? 1.0 : 0.0};
}

PotentialFn as_potential(const TaskSpec& task) {
  return [task](const Tensor& q, Tensor* grad) {
    if (grad) *grad = eval_grad(task, q);
    return eval_f(task, q);
  };
}

namespace {

// Offline reference for families without a closed-form optimum: seeded
// multistart Adam descent, flagged as a proxy.
Reference multistart_reference(const TaskSpec& t, int restarts, int steps) {
  Rng rng(derive_seed(t.seed, 0x0FF1BEEF));
  Reference best;
  best.f_star = 1e300;
  best.proxy = true;
  for (int r = 0; r < restarts; ++r) {
    Tensor q = sample_initial_point(t, rng);
    if (t.family == Family::Control && r == 0)
      std::fill(q.values.begin(), q.values.end(), 0.0);  // zero controls are a strong start
    AdamState st;
    Tensor qq = q;
    const double lr = (t.family == Family::LennardJones) ? 0.01 : 0.02;
    bool ok = true;
    for (int k = 0; k < steps; ++k) {
      Tensor g;
      try {
        g = eval_grad(t, qq);
      } catch (const SingularConfigError&) {
        ok = false;
        break;
      }
      if (!g.all_finite()) {
        ok = false;
        break;
      }
      adam_param_update(qq, g, st, lr, 0.9, 0.999, 1e-8);
    }
    if (!ok) continue;
    double f = 0.0;
    try {
      f = eval_f(t, qq);
    } catch (const SingularConfigError&) {
      continue;
    }
    if (f < best.f_star) {
      best.f_star = f;
      best.q_star = qq;
    }
  }
  return best;
}

}  // namespace
}  // namespace shape
