#include "shape/diagnostics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "shape/error.hpp"
#include "shape/rng.hpp"

namespace shape {

PotentialFn make_quadratic(const QuadraticSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0x0ADB));
  const int d = spec.dim;
  Eigen::MatrixXd gauss(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) gauss(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd qmat = qr.householderQ();
  Eigen::VectorXd lam(d);
  for (int i = 0; i < d; ++i) lam(i) = rng.uniform(spec.lambda_min, spec.lambda_max);
  Eigen::MatrixXd a = qmat * lam.asDiagonal() * qmat.transpose();

  std::vector<double> a_flat(static_cast<size_t>(d) * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a_flat[static_cast<size_t>(i) * d + j] = a(i, j);

  return [a_flat, d](const Tensor& q, Tensor* grad) {
    double f = 0.0;
    if (grad) *grad = Tensor::zeros(q.shape);
    for (int i = 0; i < d; ++i) {
      double row = 0.0;
      for (int j = 0; j < d; ++j) row += a_flat[static_cast<size_t>(i) * d + j] * q.values[static_cast<size_t>(j)];
      f += 0.5 * q.values[static_cast<size_t>(i)] * row;
      if (grad) grad->values[static_cast<size_t>(i)] = row;
    }
    return f;
  };
}

namespace {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  LinearFit fit;
  const size_t n = x.size();
  if (n < 2) return fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) return fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / n;
  for (size_t i = 0; i < n; ++i) {
    const double pred = fit.intercept + fit.slope * x[i];
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  fit.r_squared = ss_tot < 1e-300 ? 1.0 : 1.0 - ss_res / ss_tot;
  return fit;
}

struct StageSim {
  std::vector<double> lyapunov;
  std::vector<bool> clipped;
  std::vector<PhasePoint> states;  // filled when keep_states is set
};

struct FrozenStageSetup {
  StageContext ctx;
  StructureOps sops;
  Tensor mass;
  Tensor qstar;
};

FrozenStageSetup frozen_setup(int dim, double damping) {
  FrozenStageSetup s;
  s.ctx.anchor = Tensor::zeros({dim});
  s.ctx.kappa_goal = 0.0;
  MemoryConfig mc;
  mc.dim = dim;
  mc.enabled = false;
  s.ctx.memory = Memory(mc);
  s.sops = StructureOps::inert(dim, 1);
  s.sops.damp_diag = Tensor::full({dim}, damping);
  s.mass = Tensor::full({dim}, 1.0);
  s.qstar = Tensor::zeros({dim});
  return s;
}

StageSim simulate_frozen_stage(const PotentialFn& pot, int dim, uint64_t seed, double h, int steps,
                               double damping, double sigma, double p_clip, double eps_cross,
                               bool keep_states = false) {
  FrozenStageSetup setup = frozen_setup(dim, damping);
  const ClipBounds clips{1e9, p_clip};

  Rng rng(derive_seed(seed, 0x51D));
  PhasePoint x{Tensor::zeros({dim}), Tensor::zeros({dim})};
  for (auto& v : x.q.values) v = rng.uniform(-1.0, 1.0);

  StageSim sim;
  sim.lyapunov.reserve(static_cast<size_t>(steps) + 1);
  for (int n = 0; n <= steps; ++n) {
    sim.lyapunov.push_back(lyapunov_value(x, pot, setup.ctx, setup.mass, eps_cross, setup.qstar));
    if (keep_states) sim.states.push_back(x);
    if (n == steps) break;
    Tensor g;
    pot(x.q, &g);
    if (sigma > 0.0)
      for (auto& v : g.values) v += sigma * rng.normal();
    PhasePoint next = step_semi_implicit(x, setup.ctx, setup.sops, g, h, clips, 0.0, 1.0);
    bool clip_hit = false;
    for (double pv : next.p.values)
      if (std::abs(std::abs(pv) - p_clip) < 1e-15) clip_hit = true;
    sim.clipped.push_back(clip_hit);
    x = next;
  }
  return sim;
}

PhasePoint advance(const FrozenStageSetup& setup, const PotentialFn& pot, PhasePoint x, double h,
                   int substeps, const ClipBounds& clips) {
  for (int i = 0; i < substeps; ++i) {
    Tensor g;
    pot(x.q, &g);
    x = step_semi_implicit(x, setup.ctx, setup.sops, g, h, clips, 0.0, 1.0);
  }
  return x;
}

}  // namespace

namespace {

// log-linear fit of the Lyapunov tail: drop the multi-rate transient by
// fitting only the second half of the samples that sit above the floor
LinearFit fit_decay(const std::vector<double>& lyapunov, double h) {
  std::vector<double> t, logv;
  const double v0 = std::max(lyapunov.front(), 1e-300);
  for (size_t n = 1; n < lyapunov.size(); ++n) {
    if (lyapunov[n] <= std::max(1e-12 * v0, 1e-290)) break;
    t.push_back(static_cast<double>(n) * h);
    logv.push_back(std::log(lyapunov[n]));
  }
  const size_t start = t.size() / 2;
  std::vector<double> t2(t.begin() + start, t.end());
  std::vector<double> l2(logv.begin() + start, logv.end());
  return fit_line(t2, l2);
}

}  // namespace

ContractionResult contraction_suite(const QuadraticSpec& spec, const std::vector<double>& h_list,
                                    int steps, double eps_cross) {
  PotentialFn pot = make_quadratic(spec);
  ContractionResult result;
  result.pass = true;
  for (double h : h_list) {
    const int n_steps = steps > 0 ? steps : static_cast<int>(std::lround(30.0 / h));
    StageSim sim = simulate_frozen_stage(pot, spec.dim, spec.seed, h, n_steps, 1.0, 0.0, 1e9, eps_cross);
    LinearFit fit = fit_decay(sim.lyapunov, h);
    ContractionFit cf;
    cf.h = h;
    cf.rate = -fit.slope;
    cf.r_squared = fit.r_squared;
    cf.pass = cf.rate > 0.0 && cf.r_squared >= 0.99;
    result.fits.push_back(cf);
    result.pass = result.pass && cf.pass;
  }
  return result;
}

ContractionResult conservative_suite(const QuadraticSpec& spec, double h, int steps, double eps_cross) {
  PotentialFn pot = make_quadratic(spec);
  StageSim sim = simulate_frozen_stage(pot, spec.dim, spec.seed, h, steps, 0.0, 0.0, 1e9, eps_cross);
  LinearFit fit = fit_decay(sim.lyapunov, h);
  ContractionResult result;
  ContractionFit cf;
  cf.h = h;
  cf.rate = -fit.slope;
  cf.r_squared = fit.r_squared;
  cf.conservative = true;
  cf.pass = std::abs(cf.rate) <= 0.05;  // no damping: no decay beyond drift
  result.fits.push_back(cf);
  result.pass = cf.pass;
  return result;
}

DefectLedger defect_suite(const QuadraticSpec& spec, double h, int steps, double p_clip, double eps_cross) {
  PotentialFn pot = make_quadratic(spec);
  StageSim sim =
      simulate_frozen_stage(pot, spec.dim, spec.seed, h, steps, 1.0, 0.0, p_clip, eps_cross, true);
  FrozenStageSetup setup = frozen_setup(spec.dim, 1.0);

  DefectLedger ledger;
  // rate fitted from a fine-step reference run of the same stage
  StageSim reference =
      simulate_frozen_stage(pot, spec.dim, spec.seed, h / 8.0, steps * 8, 1.0, 0.0, 1e9, eps_cross);
  ledger.fitted_rate = std::max(-fit_decay(reference.lyapunov, h / 8.0).slope, 1e-12);

  // channel decomposition per executed step:
  //  - truncation: coarse step vs eight fine substeps from the same state
  //  - projection: clipped step vs the unclipped step
  const ClipBounds clipped_bounds{1e9, p_clip};
  const ClipBounds open_bounds{1e9, 1e9};
  for (size_t n = 0; n + 1 < sim.states.size(); ++n) {
    const PhasePoint& z = sim.states[n];
    const PhasePoint fine = advance(setup, pot, z, h / 8.0, 8, open_bounds);
    const PhasePoint coarse_open = advance(setup, pot, z, h, 1, open_bounds);
    const PhasePoint coarse_clipped = advance(setup, pot, z, h, 1, clipped_bounds);
    const double v_fine = lyapunov_value(fine, pot, setup.ctx, setup.mass, eps_cross, setup.qstar);
    const double v_open = lyapunov_value(coarse_open, pot, setup.ctx, setup.mass, eps_cross, setup.qstar);
    const double v_clip =
        lyapunov_value(coarse_clipped, pot, setup.ctx, setup.mass, eps_cross, setup.qstar);
    ledger.truncation += std::max(v_open - v_fine, 0.0);
    ledger.projection += std::max(v_clip - v_open, 0.0);
  }
  ledger.port_work = 0.0;  // ports off in this suite

  // terminal bound against the fitted contraction plus twice the positive
  // one-step defects (the decomposition the discrete theorem tracks)
  const double contraction = 1.0 - ledger.fitted_rate * h;
  double defect_sum = 0.0;
  for (size_t n = 0; n + 1 < sim.lyapunov.size(); ++n)
    defect_sum += std::max(sim.lyapunov[n + 1] - contraction * sim.lyapunov[n], 0.0);
  ledger.terminal_value = sim.lyapunov.back();
  ledger.predicted_terminal = std::pow(contraction, static_cast<double>(steps)) * sim.lyapunov.front();
  ledger.pass = ledger.terminal_value <= ledger.predicted_terminal + 2.0 * defect_sum + 1e-12;
  return ledger;
}

StochasticFloorResult stochastic_floor_suite(const QuadraticSpec& spec, const std::vector<double>& sigmas,
                                             double h, int steps, int replicas) {
  PotentialFn pot = make_quadratic(spec);
  StochasticFloorResult result;
  std::vector<double> s2, mv;
  for (double sigma : sigmas) {
    double acc = 0.0;
    for (int r = 0; r < replicas; ++r) {
      StageSim sim = simulate_frozen_stage(pot, spec.dim, derive_seed(spec.seed, 0xA0 + r), h, steps, 1.0,
                                           sigma, 1e9, 0.05);
      double tail = 0.0;
      const size_t half = sim.lyapunov.size() / 2;
      for (size_t n = half; n < sim.lyapunov.size(); ++n) tail += sim.lyapunov[n];
      acc += tail / static_cast<double>(sim.lyapunov.size() - half);
    }
    StochasticFloorPoint point;
    point.sigma = sigma;
    point.mean_lyapunov = acc / replicas;
    result.points.push_back(point);
    s2.push_back(sigma * sigma);
    mv.push_back(point.mean_lyapunov);
  }
  LinearFit fit = fit_line(s2, mv);
  result.slope_vs_sigma2 = fit.slope;
  result.r_squared = fit.r_squared;
  result.pass = fit.slope > 0.0 && fit.r_squared >= 0.9;
  return result;
}

bool monotone_acceptance_ok(const RolloutTrace& trace) {
  for (size_t i = 1; i < trace.rows.size(); ++i)
    if (trace.rows[i].best_f > trace.rows[i - 1].best_f) return false;
  return true;
}

std::string diagnostics_table(const ContractionResult& contraction, const DefectLedger& defects,
                              const StochasticFloorResult& floor) {
  std::ostringstream out;
  out << "suite        quantity                         value        status\n";
  for (const auto& f : contraction.fits) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "contraction  rate(h=%-7.4g) R2=%-7.4f   %-12.5g %s\n", f.h,
                  f.r_squared, f.rate, f.conservative ? "conservative" : (f.pass ? "pass" : "FAIL"));
    out << buf;
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf), "defect       terminal<=pred+2*defects       %-12.5g %s\n",
                defects.terminal_value, defects.pass ? "pass" : "FAIL");
  out << buf;
  std::snprintf(buf, sizeof(buf), "defect       truncation/projection          %.3g/%.3g\n",
                defects.truncation, defects.projection);
  out << buf;
  std::snprintf(buf, sizeof(buf), "stochastic   floor slope vs sigma^2         %-12.5g %s\n",
                floor.slope_vs_sigma2, floor.pass ? "pass" : "FAIL");
  out << buf;
  return out.str();
}

}  // namespace shape
