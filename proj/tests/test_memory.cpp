#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "shape/memory.hpp"
#include "shape/rng.hpp"
#include "test_util.hpp"

using namespace shape;

namespace {

MemoryConfig cfg2d() {
  MemoryConfig c;
  c.dim = 2;
  c.halfwidth = 5.0;
  return c;
}

EventSummary event_at(std::vector<double> q, double f, double gnorm_scale = 1.0) {
  EventSummary e;
  const int d = static_cast<int>(q.size());
  e.q = Tensor::vector(std::move(q));
  e.p = Tensor::zeros({d});
  e.f = f;
  e.g = Tensor::full({d}, gnorm_scale);
  e.mode = StageMode::Escape;
  return e;
}

}  // namespace

TEST_CASE("fresh memory reads zeros and full novelty") {
  Memory mem(cfg2d());
  CHECK(mem.readout_length() == 12);  // 3 levels x 4 channels
  auto r = mem.read(Tensor::vector({0.0, 0.0}));
  REQUIRE(static_cast<int>(r.size()) == 12);
  for (double v : r) CHECK(v == 0.0);
  CHECK(mem.novelty(Tensor::vector({1.0, 1.0})) == 1.0);
}

TEST_CASE("non-write is bit-exact identity") {
  Memory mem(cfg2d());
  mem.write(event_at({0.5, 0.5}, 2.0), true);
  const std::string before = mem.to_string();
  mem.write(event_at({-2.0, 1.0}, -1.0), false);
  CHECK(mem.to_string() == before);
}

TEST_CASE("write updates every level and streaming stats") {
  Memory mem(cfg2d());
  Tensor q = Tensor::vector({0.7, -0.3});
  mem.write(event_at(q.values, 1.0), true);
  auto occ = mem.occupancy_path(q);
  REQUIRE(occ.size() == 3);
  for (int64_t o : occ) CHECK(o == 1);

  // readout shows the write at every level
  auto r = mem.read(q);
  for (int level = 0; level < 3; ++level) CHECK(r[static_cast<size_t>(4 * level)] > 0.0);

  // mean f of the first write equals the written value
  CHECK(r[1] == doctest::Approx(1.0));

  mem.write(event_at(q.values, 3.0), true);
  r = mem.read(q);
  CHECK(r[1] == doctest::Approx(2.0));  // streaming mean of {1, 3}
  CHECK(r[3] == doctest::Approx(1.0));  // best f

  CHECK(mem.novelty(q) == doctest::Approx(1.0 / 3.0));  // occupancy 2
}

TEST_CASE("distant points in 2d have disjoint finest cells") {
  Memory mem(cfg2d());
  Tensor a = Tensor::vector({-4.0, -4.0});
  Tensor b = Tensor::vector({4.0, 4.0});
  mem.write(event_at(a.values, 1.0), true);
  CHECK(mem.finest_occupancy(a) == 1);
  CHECK(mem.finest_occupancy(b) == 0);
  CHECK(mem.read(a) != mem.read(b));
}

TEST_CASE("coarse-level consistency") {
  Memory mem(cfg2d());
  Rng rng(4);
  for (int i = 0; i < 20; ++i)
    mem.write(event_at({rng.uniform(-5, 5), rng.uniform(-5, 5)}, rng.uniform(-1, 1)), true);
  for (int i = 0; i < 50; ++i) {
    Tensor q = Tensor::vector({rng.uniform(-5, 5), rng.uniform(-5, 5)});
    auto path = mem.occupancy_path(q);
    if (path.back() > 0)
      for (size_t l = 0; l < path.size(); ++l) CHECK(path[l] > 0);
  }
}

TEST_CASE("novelty decays toward zero with occupancy") {
  Memory mem(cfg2d());
  Tensor q = Tensor::vector({1.0, 1.0});
  double prev = mem.novelty(q);
  CHECK(prev == 1.0);
  for (int i = 0; i < 40; ++i) {
    mem.write(event_at(q.values, 0.0), true);
    const double nov = mem.novelty(q);
    CHECK(nov <= prev + 1e-15);
    prev = nov;
  }
  CHECK(prev <= 1.0 / 40.0);
  CHECK(mem.novelty(q) == doctest::Approx(1.0 / 41.0));
}

TEST_CASE("memory potential: bumps, gradients, escape barrier") {
  Memory mem(cfg2d());
  Tensor q = Tensor::vector({0.0, 0.0});

  // empty memory -> all zero
  auto eval0 = mem.potential(q, StageMode::Settle);
  CHECK(eval0.u_mem == 0.0);
  CHECK(eval0.v_bar == 0.0);

  // one stalled write (small gradient -> recorded minimum)
  EventSummary e = event_at(q.values, 1.0, 1e-6);
  mem.write(e, true);

  auto at_center = mem.potential(Tensor::vector({0.0 + 5.0 / 32.0, 0.0 + 5.0 / 32.0}), StageMode::Settle);
  // query at the exact cell center: grad vanishes, value = w_mem * occ
  CHECK(at_center.u_mem == doctest::Approx(0.2));
  CHECK(std::abs(at_center.u_mem_grad.values[0]) <= 1e-12);

  // barrier only in escape mode
  CHECK(mem.potential(q, StageMode::Settle).v_bar == 0.0);
  CHECK(mem.potential(q, StageMode::Escape).v_bar > 0.0);

  // U_mem >= 0 and decays to zero far away
  CHECK(mem.potential(Tensor::vector({4.9, -4.9}), StageMode::Settle).u_mem <= 1e-12);

  // gradient matches finite differences
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> x = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto fd = test::central_diff(
        [&](const std::vector<double>& v) {
          auto pe = mem.potential(Tensor::vector(v), StageMode::Escape);
          return pe.u_mem + pe.v_bar;
        },
        x);
    auto pe = mem.potential(Tensor::vector(x), StageMode::Escape);
    std::vector<double> got = {pe.u_mem_grad.values[0] + pe.v_bar_grad.values[0],
                               pe.u_mem_grad.values[1] + pe.v_bar_grad.values[1]};
    CHECK(test::max_rel_err(got, fd) <= 1e-6);
  }
}

TEST_CASE("blockwise memory for d > 2") {
  MemoryConfig c;
  c.dim = 10;
  c.halfwidth = 5.0;
  Memory mem(c);
  CHECK(mem.readout_length() == 8);  // 2 levels x 4 channels

  Rng rng(11);
  Tensor q = Tensor::zeros({10});
  for (auto& v : q.values) v = rng.uniform(-4, 4);
  mem.write(event_at(q.values, -2.5), true);
  auto r = mem.read(q);
  CHECK(r[0] > 0.0);
  CHECK(r[4] > 0.0);
  CHECK(mem.novelty(q) < 1.0);

  // faraway point: untouched cells
  Tensor far = Tensor::zeros({10});
  for (size_t i = 0; i < far.values.size(); ++i) far.values[i] = q.values[i] > 0 ? -4.5 : 4.5;
  CHECK(mem.novelty(far) == 1.0);

  // potential gradient check in 10d
  auto fd = test::central_diff(
      [&](const std::vector<double>& v) { return mem.potential(Tensor::vector(v), StageMode::Settle).u_mem; },
      q.values);
  auto pe = mem.potential(q, StageMode::Settle);
  CHECK(test::max_rel_err(pe.u_mem_grad.values, fd) <= 1e-5);
}

TEST_CASE("disabled memory has empty readout") {
  MemoryConfig c;
  c.enabled = false;
  c.dim = 2;
  Memory mem(c);
  CHECK(mem.readout_length() == 0);
  CHECK(mem.read(Tensor::vector({0, 0})).empty());
  mem.write(event_at({0, 0}, 1.0), true);
  CHECK(mem.total_writes() == 0);
}
