#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "shape/policies.hpp"
#include "test_util.hpp"

using namespace shape;

namespace {

struct Fixture {
  TaskSpec task = make_task(Family::Ackley, 2, 3, {});
  PolicyPair pp = make_policies(2, 16, 12, 5.0, 42);
  Memory memory;
  Fixture() {
    MemoryConfig mc;
    mc.dim = 2;
    memory = Memory(mc);
  }

  OracleSample sample_at(const Tensor& q) const {
    OracleSample s;
    s.f = eval_f(task, q);
    s.g = eval_grad(task, q);
    return s;
  }

  StageContext ctx_at(const PhasePoint& x) const {
    StageContext ctx;
    ctx.anchor = x.q;
    ctx.memory = memory;
    return ctx;
  }
};

}  // namespace

TEST_CASE("controller zero-network case") {
  Fixture fx;
  visit_params(fx.pp.psi, [](const std::string&, Tensor& t) {
    std::fill(t.values.begin(), t.values.end(), 0.0);
  });
  PhasePoint x{Tensor::vector({1.0, -1.0}), Tensor::zeros({2})};
  Tensor obs = build_observation(x, fx.sample_at(x.q), fx.task, fx.memory, 5.0);
  StructureOps out = controller_forward(fx.pp.psi, obs, fx.ctx_at(x), x);

  const double ln2 = std::log(2.0);
  for (double m : out.mass_diag.values) CHECK(m == doctest::Approx(0.1 + ln2));
  for (double u : out.port_shaping.values) CHECK(u == 0.0);
  CHECK(out.kappa_local.scalar_value() == doctest::Approx(ln2));
}

TEST_CASE("controller outputs satisfy structure invariants for random draws") {
  Rng rng(100);
  for (int trial = 0; trial < 300; ++trial) {
    const int d = 1 + static_cast<int>(rng.index(6));
    TaskSpec task = make_task(Family::Rastrigin, d, trial, {});
    MemoryConfig mc;
    mc.dim = d;
    Memory mem(mc);
    PolicyPair pp = make_policies(d, 8, mem.readout_length(), 5.0, 1000 + trial);
    visit_params(pp.psi, [&](const std::string&, Tensor& t) {
      for (auto& v : t.values) v += 0.5 * rng.normal();
    });

    PhasePoint x{Tensor::zeros({d}), Tensor::zeros({d})};
    for (auto& v : x.q.values) v = rng.uniform(-5, 5);
    for (auto& v : x.p.values) v = rng.normal();
    OracleSample s;
    s.f = eval_f(task, x.q);
    s.g = eval_grad(task, x.q);
    StageContext ctx;
    ctx.anchor = x.q;
    ctx.memory = mem;
    ctx.mode = static_cast<StageMode>(rng.index(3));

    Tensor obs = build_observation(x, s, task, mem, 5.0);
    StructureOps out = controller_forward(pp.psi, obs, ctx, x);

    for (double m : out.mass_diag.values) CHECK(m >= 0.1);
    for (double v : out.damp_diag.values) CHECK(v >= 0.0);
    for (double v : out.damp_inject.values) CHECK(v >= 0.0);
    CHECK(out.kappa_local.scalar_value() >= 0.0);
    for (double u : out.port_shaping.values) CHECK(std::abs(u) <= 5.0);

    Tensor vec = Tensor::zeros({d});
    for (auto& v : vec.values) v = rng.normal();
    CHECK(std::abs(ops::dot(vec, skew_apply(out.skew_u, out.skew_v, vec)).scalar_value()) <= 1e-9);
    CHECK(ops::dot(vec, psd_apply(out.damp_factor, out.damp_diag, vec)).scalar_value() >= -1e-12);
  }
}

TEST_CASE("controller determinism") {
  Fixture fx;
  PhasePoint x{Tensor::vector({0.4, 0.2}), Tensor::vector({0.1, -0.1})};
  Tensor obs = build_observation(x, fx.sample_at(x.q), fx.task, fx.memory, 5.0);
  StructureOps a = controller_forward(fx.pp.psi, obs, fx.ctx_at(x), x);
  StructureOps b = controller_forward(fx.pp.psi, obs, fx.ctx_at(x), x);
  CHECK(a.mass_diag.values == b.mass_diag.values);
  CHECK(a.skew_u.values == b.skew_u.values);
  CHECK(a.port_shaping.values == b.port_shaping.values);
}

TEST_CASE("controller gradients w.r.t. psi match finite differences") {
  Fixture fx;
  PhasePoint x{Tensor::vector({0.5, -0.3}), Tensor::vector({0.2, 0.1})};
  OracleSample s = fx.sample_at(x.q);
  StageContext ctx = fx.ctx_at(x);

  auto loss_of = [&](LocalControllerParams& psi) {
    Tensor obs = build_observation(x, s, fx.task, fx.memory, 5.0);
    StructureOps out = controller_forward(psi, obs, ctx, x);
    Tensor total = ops::sum(out.mass_diag);
    total = ops::add(total, ops::sum(out.port_shaping));
    total = ops::add(total, ops::sum(out.damp_inject));
    total = ops::add(total, ops::sum(out.skew_u));
    total = ops::add(total, ops::sum(out.damp_factor));
    total = ops::add(total, out.kappa_local);
    return total;
  };

  Tape tape;
  TapeScope scope(tape);
  LocalControllerParams taped = fx.pp.psi;
  visit_params(taped, [&](const std::string&, Tensor& t) { t = tape.leaf(t); });
  Tensor root = loss_of(taped);
  GradMap g = tape.backward(root);

  Rng rng(9);
  LocalControllerParams probe = fx.pp.psi;
  std::vector<Tensor*> tensors;
  visit_params(probe, [&](const std::string&, Tensor& t) { tensors.push_back(&t); });
  std::vector<Tensor*> taped_tensors;
  visit_params(taped, [&](const std::string&, Tensor& t) { taped_tensors.push_back(&t); });

  for (int check = 0; check < 12; ++check) {
    const size_t ti = rng.index(tensors.size());
    if (tensors[ti]->values.empty()) continue;
    const size_t vi = rng.index(tensors[ti]->values.size());
    const double v0 = tensors[ti]->values[vi];
    const double h = 1e-6;
    tensors[ti]->values[vi] = v0 + h;
    const double fp = loss_of(probe).scalar_value();
    tensors[ti]->values[vi] = v0 - h;
    const double fm = loss_of(probe).scalar_value();
    tensors[ti]->values[vi] = v0;
    const double fd = (fp - fm) / (2.0 * h);
    const double got = g.grad(*taped_tensors[ti]).values[vi];
    CHECK(std::abs(got - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("planner zero-network and squash behavior") {
  Fixture fx;
  visit_params(fx.pp.phi, [](const std::string&, Tensor& t) {
    std::fill(t.values.begin(), t.values.end(), 0.0);
  });
  PhasePoint x{Tensor::vector({2.0, -2.0}), Tensor::zeros({2})};
  Tensor ctx_vec = build_planner_context(x, fx.sample_at(x.q), fx.task, fx.memory, 5.0, 0.0, false);
  StageAction a = planner_forward(fx.pp.phi, ctx_vec, x.q, 6.0);

  CHECK(a.mode == StageMode::Settle);  // tie-break on equal logits
  CHECK(a.anchor.values == x.q.values);
  CHECK(a.alpha_j.scalar_value() == doctest::Approx(0.5));
  CHECK(a.alpha_r.scalar_value() == doctest::Approx(0.5));
  CHECK(a.kappa_goal.scalar_value() == doctest::Approx(std::log(2.0) + 0.1));
}

TEST_CASE("planner anchor locality and feasibility") {
  Rng rng(31);
  Fixture fx;
  for (int trial = 0; trial < 200; ++trial) {
    visit_params(fx.pp.phi, [&](const std::string&, Tensor& t) {
      for (auto& v : t.values) v = 2.0 * rng.normal();
    });
    PhasePoint x{Tensor::vector({rng.uniform(-5.5, 5.5), rng.uniform(-5.5, 5.5)}), Tensor::zeros({2})};
    Tensor ctx_vec = build_planner_context(x, fx.sample_at(x.q), fx.task, fx.memory, 5.0, 0.0, false);
    StageAction a = planner_forward(fx.pp.phi, ctx_vec, x.q, 6.0);
    double dist = 0.0;
    for (int i = 0; i < 2; ++i) {
      CHECK(std::abs(a.anchor.values[static_cast<size_t>(i)]) <= 6.0);
      const double diff = a.anchor.values[static_cast<size_t>(i)] - x.q.values[static_cast<size_t>(i)];
      dist += diff * diff;
    }
    CHECK(std::sqrt(dist) <= 1.0 * std::sqrt(2.0) + 1e-12);  // tanh trust region per coordinate
    CHECK(a.alpha_j.scalar_value() > 0.0);
    CHECK(a.alpha_j.scalar_value() < 1.0);
    CHECK(a.kappa_goal.scalar_value() > 0.1 - 1e-12);
  }
}

TEST_CASE("mode argmax shift invariance and tie-break order") {
  Tensor logits = Tensor::vector({0.2, 1.4, -0.5});
  CHECK(argmax_mode(logits) == StageMode::Refine);
  Tensor shifted = ops::add(logits, Tensor::full({3}, 77.0));
  CHECK(argmax_mode(shifted) == StageMode::Refine);

  CHECK(argmax_mode(Tensor::vector({1.0, 1.0, 1.0})) == StageMode::Settle);
  CHECK(argmax_mode(Tensor::vector({0.0, 1.0, 1.0})) == StageMode::Refine);
}

TEST_CASE("mode scaling table") {
  auto [sj, sr] = mode_scale(0.6, 0.9, StageMode::Settle);
  CHECK(sj == doctest::Approx(0.3));
  CHECK(sr == doctest::Approx(0.9));

  auto [rj, rr] = mode_scale(0.6, 0.9, StageMode::Refine);
  CHECK(rj == doctest::Approx(0.6));
  CHECK(rr == doctest::Approx(0.9));

  auto [ej, er] = mode_scale(0.7, 0.8, StageMode::Escape);
  CHECK(ej == doctest::Approx(0.7));
  CHECK(er == doctest::Approx(0.2));
}

TEST_CASE("policy checkpoint round-trip preserves behavior") {
  Fixture fx;
  Checkpoint ck = policies_to_checkpoint(fx.pp);
  PolicyPair back = policies_from_checkpoint(checkpoint_from_string(checkpoint_to_string(ck)));

  PhasePoint x{Tensor::vector({0.3, 0.9}), Tensor::vector({-0.2, 0.4})};
  OracleSample s = fx.sample_at(x.q);
  Tensor obs = build_observation(x, s, fx.task, fx.memory, 5.0);
  StructureOps a = controller_forward(fx.pp.psi, obs, fx.ctx_at(x), x);
  StructureOps b = controller_forward(back.psi, obs, fx.ctx_at(x), x);
  CHECK(a.mass_diag.values == b.mass_diag.values);
  CHECK(a.skew_v.values == b.skew_v.values);

  Tensor cv = build_planner_context(x, s, fx.task, fx.memory, 5.0, s.f, false);
  StageAction pa = planner_forward(fx.pp.phi, cv, x.q, 6.0);
  StageAction pb = planner_forward(back.phi, cv, x.q, 6.0);
  CHECK(pa.anchor.values == pb.anchor.values);
  CHECK(pa.mode_logits.values == pb.mode_logits.values);
}
