#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "shape/tasks.hpp"
#include "test_util.hpp"

using namespace shape;

namespace {

// dense scan of f' sign changes; returns (minima, maxima) strictly inside
// the domain
std::pair<int, int> grid_scan_extrema(const TaskSpec& t, int points = 100000) {
  const double hw = t.domain_halfwidth;
  int minima = 0, maxima = 0;
  double prev = eval_grad(t, Tensor::vector({-hw + 1e-9})).values[0];
  for (int i = 1; i < points; ++i) {
    const double x = -hw + 2.0 * hw * static_cast<double>(i) / (points - 1) - 1e-9;
    const double d = eval_grad(t, Tensor::vector({x})).values[0];
    if (prev < 0.0 && d > 0.0) ++minima;
    if (prev > 0.0 && d < 0.0) ++maxima;
    if (d != 0.0) prev = d;
  }
  return {minima, maxima};
}

std::function<double(const std::vector<double>&)> as_fn(const TaskSpec& t) {
  return [&t](const std::vector<double>& x) { return eval_f(t, Tensor::vector(x)); };
}

}  // namespace

TEST_CASE("multiwell construction invariants") {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    TaskOptions opt;
    opt.wells = 2 + static_cast<int>(seed % 4);
    TaskSpec t = make_task(Family::Multiwell, 1, seed, opt);
    const auto& k = t.knots;
    REQUIRE(static_cast<int>(k.x.size()) == 2 * opt.wells - 1);

    // knots strictly increasing with the enforced separation
    const double min_sep = 2.0 * t.domain_halfwidth / (4.0 * opt.wells);
    for (size_t i = 1; i < k.x.size(); ++i) CHECK(k.x[i] - k.x[i - 1] >= min_sep - 1e-12);

    // unique global valley with margin
    for (int i = 0; i < static_cast<int>(k.v.size()); i += 2)
      if (i != k.global_index) CHECK(k.v[static_cast<size_t>(k.global_index)] <= k.v[static_cast<size_t>(i)] - k.margin + 1e-12);

    // interpolation hits every knot with zero slope
    for (size_t i = 0; i < k.x.size(); ++i) {
      CHECK(eval_f(t, Tensor::vector({k.x[i]})) == doctest::Approx(k.v[i]).epsilon(1e-12));
      CHECK(std::abs(eval_grad(t, Tensor::vector({k.x[i]})).values[0]) <= 1e-9);
    }

    auto [minima, maxima] = grid_scan_extrema(t);
    CHECK(minima == opt.wells);
    CHECK(maxima == opt.wells - 1);

    Reference ref = reference_optimum(t);
    CHECK(ref.f_star == k.v[static_cast<size_t>(k.global_index)]);
    CHECK(!ref.proxy);
  }
}

TEST_CASE("multiwell determinism") {
  TaskSpec a = make_task(Family::Multiwell, 1, 99, {});
  TaskSpec b = make_task(Family::Multiwell, 1, 99, {});
  CHECK(a.knots.x == b.knots.x);
  CHECK(a.knots.v == b.knots.v);
  CHECK(a.knots.global_index == b.knots.global_index);
}

TEST_CASE("benchmark minima and shift/rotation consistency") {
  TaskOptions plain;
  TaskSpec ack = make_task(Family::Ackley, 2, 3, plain);
  CHECK(!ack.rotated);
  for (double s : ack.shift.values) CHECK(std::abs(s) <= 5.0);
  // global minimum at the shift
  CHECK(eval_f(ack, ack.shift) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ops::norm2(eval_grad(ack, ack.shift)).scalar_value() <= 1e-8);

  TaskSpec ras = make_task(Family::Rastrigin, 3, 4, plain);
  CHECK(eval_f(ras, ras.shift) == doctest::Approx(0.0).epsilon(1e-12));
  TaskSpec lev = make_task(Family::Levy, 3, 5, plain);
  CHECK(eval_f(lev, lev.shift) == doctest::Approx(0.0).epsilon(1e-12));

  // rotation orthogonality and f(q) == base(R(q-s))
  TaskOptions rot;
  rot.rotate = true;
  TaskSpec t = make_task(Family::Ackley, 4, 11, rot);
  const int d = 4;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k)
        acc += t.rotation.values[static_cast<size_t>(k) * d + i] * t.rotation.values[static_cast<size_t>(k) * d + j];
      CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) <= 1e-10);
    }

  // same base function with zero shift, identity rotation
  TaskSpec base = make_task(Family::Ackley, 4, 12, plain);
  base.shift = Tensor::zeros({4});
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor q = Tensor::zeros({4});
    for (auto& v : q.values) v = rng.uniform(-5, 5);
    Tensor x = Tensor::zeros({4});
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j)
        acc += t.rotation.values[static_cast<size_t>(i) * d + j] * (q.values[static_cast<size_t>(j)] - t.shift.values[static_cast<size_t>(j)]);
      x.values[static_cast<size_t>(i)] = acc;
    }
    CHECK(std::abs(eval_f(t, q) - eval_f(base, x)) <= 1e-12 * std::max(1.0, std::abs(eval_f(t, q))));
  }
}

TEST_CASE("lj pair energy and singularity") {
  TaskOptions opt;
  opt.lj_eps = 1.7;
  opt.lj_sigma = 0.9;
  TaskSpec t = make_task(Family::LennardJones, 6, 1, opt);
  const double rstar = std::pow(2.0, 1.0 / 6.0) * opt.lj_sigma;
  Tensor q = Tensor::vector({0, 0, 0, rstar, 0, 0});
  CHECK(std::abs(eval_f(t, q) - (-opt.lj_eps)) <= 1e-12);
  CHECK(reference_optimum(t).f_star == doctest::Approx(-opt.lj_eps));

  Tensor coincident = Tensor::vector({0, 0, 0, 0, 0, 1e-14});
  CHECK_THROWS_AS(eval_f(t, coincident), SingularConfigError);
}

TEST_CASE("lj symmetry under translation, rotation, permutation") {
  TaskSpec t = make_task(Family::LennardJones, 9, 5, {});
  Rng rng(3);
  Tensor q = sample_initial_point(t, rng);
  const double f0 = eval_f(t, q);

  // translation
  Tensor qt = q;
  const double shift[3] = {0.7, -1.3, 0.4};
  for (int i = 0; i < 3; ++i)
    for (int a = 0; a < 3; ++a) qt.values[static_cast<size_t>(3 * i + a)] += shift[a];
  CHECK(std::abs(eval_f(t, qt) - f0) <= 1e-9 * std::max(1.0, std::abs(f0)));

  // rotation about z by a random angle
  const double th = rng.uniform(0, 6.28);
  Tensor qr = q;
  for (int i = 0; i < 3; ++i) {
    const double x = q.values[static_cast<size_t>(3 * i)], y = q.values[static_cast<size_t>(3 * i + 1)];
    qr.values[static_cast<size_t>(3 * i)] = std::cos(th) * x - std::sin(th) * y;
    qr.values[static_cast<size_t>(3 * i + 1)] = std::sin(th) * x + std::cos(th) * y;
  }
  CHECK(std::abs(eval_f(t, qr) - f0) <= 1e-9 * std::max(1.0, std::abs(f0)));

  // permutation: swap particles 0 and 2
  Tensor qp = q;
  for (int a = 0; a < 3; ++a) std::swap(qp.values[static_cast<size_t>(a)], qp.values[static_cast<size_t>(6 + a)]);
  CHECK(std::abs(eval_f(t, qp) - f0) <= 1e-9 * std::max(1.0, std::abs(f0)));
}

TEST_CASE("phase retrieval objective") {
  TaskSpec t = make_task(Family::PhaseRetrieval, 6, 8, {});
  // sign invariance
  Rng rng(9);
  Tensor x = sample_initial_point(t, rng);
  Tensor xneg = ops::scale(x, -1.0);
  CHECK(eval_f(t, x) == doctest::Approx(eval_f(t, xneg)).epsilon(1e-9));

  // noiseless: signal attains the regularizer floor
  double signal_norm2 = 0.0;
  for (double v : t.phase_signal.values) signal_norm2 += v * v;
  CHECK(eval_f(t, t.phase_signal) == doctest::Approx(0.5 * t.phase_lambda * signal_norm2).epsilon(1e-9));
  CHECK(reference_optimum(t).f_star == doctest::Approx(0.5 * t.phase_lambda * signal_norm2).epsilon(1e-9));

  // sign-invariant distance
  CHECK(reference_distance(t, xneg) == doctest::Approx(reference_distance(t, x)).epsilon(1e-9));
  CHECK(reference_distance(t, ops::scale(t.phase_signal, -1.0)) <= 1e-12);
}

TEST_CASE("control objectives") {
  TaskSpec t = make_task(Family::Control, 8, 2, {});
  CHECK(t.control.dt == doctest::Approx(0.25));

  // stationary at the origin when x0 = goal = 0 with zero controls
  TaskSpec stable = t;
  stable.control.x0 = {0.0, 0.0};
  Tensor zero = Tensor::zeros({8});
  Tensor g = eval_grad(stable, zero);
  for (double v : g.values) CHECK(std::abs(v) <= 1e-12);

  Reference ref = reference_optimum(t);
  CHECK(ref.proxy);
  CHECK(std::isfinite(ref.f_star));
  // proxy reference beats the zero-control cost
  CHECK(ref.f_star <= eval_f(t, zero) + 1e-9);
}

TEST_CASE("analytic gradients match central finite differences") {
  struct Case {
    Family family;
    int dim;
    bool rotate;
  };
  const Case cases[] = {{Family::Multiwell, 1, false},    {Family::Ackley, 4, true},
                        {Family::Levy, 3, false},         {Family::Rastrigin, 3, true},
                        {Family::LennardJones, 9, false}, {Family::PhaseRetrieval, 5, false},
                        {Family::Control, 8, false}};
  Rng rng(2024);
  for (const auto& c : cases) {
    TaskOptions opt;
    opt.rotate = c.rotate;
    TaskSpec t = make_task(c.family, c.dim, 31, opt);
    for (int trial = 0; trial < 30; ++trial) {
      Tensor q = sample_initial_point(t, rng);
      std::vector<double> fd = test::central_diff(as_fn(t), q.values);
      Tensor g = eval_grad(t, q);
      double tol = 1e-5;
      if (c.family == Family::LennardJones) {
        double min_d = 1e300;
        for (int i = 0; i < t.lj_particles; ++i)
          for (int j = i + 1; j < t.lj_particles; ++j) {
            double d2 = 0;
            for (int a = 0; a < 3; ++a) {
              const double diff = q.values[static_cast<size_t>(3 * i + a)] - q.values[static_cast<size_t>(3 * j + a)];
              d2 += diff * diff;
            }
            min_d = std::min(min_d, std::sqrt(d2));
          }
        if (min_d < 1.05 * std::pow(2.0, 1.0 / 6.0) * t.lj_sigma) tol = 1e-4;
      }
      CHECK(test::max_rel_err(g.values, fd) <= tol);
    }
  }
}

TEST_CASE("task descriptor is fixed-length and deterministic") {
  TaskSpec a = make_task(Family::Ackley, 2, 1, {});
  TaskSpec b = make_task(Family::LennardJones, 6, 2, {});
  CHECK(task_descriptor(a).size() == task_descriptor(b).size());
  CHECK(task_descriptor(a) == task_descriptor(a));
}
