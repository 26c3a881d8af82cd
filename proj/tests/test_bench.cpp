#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "shape/bench.hpp"
#include "test_util.hpp"

using namespace shape;

namespace {

RolloutTrace synthetic_trace(const std::vector<double>& f_values, const TaskSpec& task) {
  RolloutTrace tr;
  double best = f_values.front();
  for (size_t k = 0; k < f_values.size(); ++k) {
    best = std::min(best, f_values[k]);
    TraceRow row;
    row.step = static_cast<int64_t>(k);
    row.q = task.reference.q_star.values;  // park at the optimum for distance simplicity
    row.p = std::vector<double>(static_cast<size_t>(task.dim), 0.0);
    row.f = f_values[k];
    row.gnorm = 1.0;
    row.calls_used = static_cast<int64_t>(k + 1);
    row.best_f = best;
    tr.rows.push_back(row);
  }
  tr.best_f = best;
  tr.best_q = Tensor::vector(tr.rows.back().q);
  tr.final_q = tr.best_q;
  tr.calls_used = static_cast<int64_t>(f_values.size());
  tr.budget_total = tr.calls_used;
  return tr;
}

}  // namespace

TEST_CASE("metric arithmetic on a constructed trajectory") {
  TaskSpec task = make_task(Family::Ackley, 2, 1, {});
  // f* = 0; values (3, 1, 2) -> final 2, best 1, auc (3+1+2)/3 = 2
  RolloutTrace tr = synthetic_trace({3.0, 1.0, 2.0}, task);
  MetricsRow row = compute_metrics(tr, task, "gd", "exact", 1.0);
  CHECK(row.final_gap == doctest::Approx(2.0));
  CHECK(row.best_gap == doctest::Approx(1.0));
  CHECK(row.auc_gap == doctest::Approx(2.0));
  CHECK(row.best_gap <= row.final_gap);

  // constant trajectory at the optimum: all gaps 0, hit
  RolloutTrace at_min = synthetic_trace({0.0, 0.0}, task);
  MetricsRow row2 = compute_metrics(at_min, task, "gd", "exact", 1.0);
  CHECK(row2.final_gap == 0.0);
  CHECK(row2.best_gap == 0.0);
  CHECK(row2.hit == 1);
  CHECK(row2.final_dist <= 1e-12);
}

TEST_CASE("phase retrieval distance respects the sign quotient") {
  TaskSpec task = make_task(Family::PhaseRetrieval, 4, 2, {});
  RolloutTrace tr;
  TraceRow row;
  Tensor neg = ops::scale(task.phase_signal, -1.0);
  row.q = neg.values;
  row.p = std::vector<double>(4, 0.0);
  row.f = eval_f(task, neg);
  row.best_f = row.f;
  row.calls_used = 1;
  tr.rows.push_back(row);
  tr.best_q = neg;
  tr.best_f = row.f;
  tr.final_q = neg;
  tr.calls_used = 1;
  MetricsRow m = compute_metrics(tr, task, "gd", "exact", 0.0);
  CHECK(m.final_dist <= 1e-12);
}

TEST_CASE("count_minima") {
  TaskSpec task = make_task(Family::Multiwell, 1, 7, {});
  RolloutTrace tr;
  auto push = [&](double q, double gnorm) {
    TraceRow row;
    row.q = {q};
    row.p = {0.0};
    row.f = 0.5;
    row.gnorm = gnorm;
    row.best_f = 0.5;
    row.calls_used = static_cast<int64_t>(tr.rows.size() + 1);
    tr.rows.push_back(row);
  };
  // sweep through two far-apart cells with stall-like rows in each, plus
  // high-gradient rows that must not count
  push(-3.0, 1e-6);
  push(-3.01, 1e-6);  // same cell
  push(0.5, 2.0);     // moving, no stall
  push(3.0, 1e-6);
  tr.best_q = Tensor::vector({3.0});
  tr.final_q = tr.best_q;
  tr.calls_used = 4;
  CHECK(count_minima(tr, task) == 2);

  RolloutTrace no_stall;
  push(-3.0, 5.0);
  no_stall.rows = {tr.rows.back()};
  no_stall.rows[0].gnorm = 5.0;
  CHECK(count_minima(no_stall, task) == 0);

  TaskSpec high = make_task(Family::LennardJones, 9, 1, {});
  CHECK(count_minima(tr, high) == -1);  // unsupported marker
}

TEST_CASE("csv round-trip is exact") {
  TaskSpec task = make_task(Family::Levy, 2, 5, {});
  RolloutTrace tr = synthetic_trace({2.0, 0.7, 1.1, 0.3}, task);
  std::vector<MetricsRow> rows = {compute_metrics(tr, task, "adam", "stochastic", 12.25)};
  rows[0].extra_calls = 3;
  rows[0].final_dist = 1.0 / 3.0;  // exercise 17-digit round-trip
  const std::string csv = rows_to_csv(rows);
  std::vector<MetricsRow> back = rows_from_csv(csv);
  REQUIRE(back.size() == 1);
  CHECK(back[0].task_id == rows[0].task_id);
  CHECK(back[0].final_dist == rows[0].final_dist);
  CHECK(back[0].final_gap == rows[0].final_gap);
  CHECK(back[0].best_gap == rows[0].best_gap);
  CHECK(back[0].auc_gap == rows[0].auc_gap);
  CHECK(back[0].hit == rows[0].hit);
  CHECK(back[0].oracle_calls == rows[0].oracle_calls);
  CHECK(back[0].extra_calls == rows[0].extra_calls);
  CHECK(rows_to_csv(back) == csv);

  CHECK_THROWS_AS(rows_from_csv("bad header\n1,2,3"), IoError);
}

TEST_CASE("config parsing, rendering, and errors") {
  const std::string text = R"([task]
family = levy
dim = 3
count = 4
seed = 9
rotate = true

[oracle]
kind = stochastic
sigma_g = 0.25

# comment line
[methods]
list = shape, gd, adam

[budget]
total = 120
particles = 2
)";
  BenchConfig cfg = parse_config(text);
  CHECK(cfg.family == Family::Levy);
  CHECK(cfg.dim == 3);
  CHECK(cfg.task_count == 4);
  CHECK(cfg.seed == 9);
  CHECK(cfg.task_options.rotate);
  CHECK(cfg.oracle.kind == OracleKind::Stochastic);
  CHECK(cfg.oracle.sigma_g == 0.25);
  REQUIRE(cfg.methods.size() == 3);
  CHECK(cfg.methods[0] == "shape");
  CHECK(cfg.budget == 120);
  CHECK(cfg.particles == 2);

  // render -> parse round trip preserves the fields above
  BenchConfig again = parse_config(render_config(cfg));
  CHECK(again.dim == cfg.dim);
  CHECK(again.budget == cfg.budget);
  CHECK(again.methods == cfg.methods);

  CHECK_THROWS_AS(parse_config("[task]\nfamily ackley\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[task]\ndim = banana\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[task]\nunknown_key = 1\n"), ConfigError);

  // environment overrides
  setenv("SHAPE_BUDGET_TOTAL", "77", 1);
  BenchConfig overridden = parse_config(text);
  CHECK(overridden.budget == 77);
  unsetenv("SHAPE_BUDGET_TOTAL");
}

TEST_CASE("benchmark grid: paired budgets, identical starts, aggregates") {
  BenchConfig cfg;
  cfg.family = Family::Levy;
  cfg.dim = 2;
  cfg.task_count = 3;
  cfg.particles = 2;
  cfg.budget = 40;
  cfg.seed = 21;
  cfg.oracle.kind = OracleKind::Stochastic;
  cfg.oracle.sigma_g = 0.2;
  cfg.methods = {"gd", "momentum", "adam"};

  BenchReport report = run_benchmark(cfg, nullptr, ExecMode::Serial);
  REQUIRE(report.rows.size() == 3u * 2u * 3u);

  // budget exactness per row
  for (const auto& r : report.rows) CHECK(r.oracle_calls == cfg.budget);

  // aggregates recompute from rows exactly
  auto again = aggregate_rows(report.rows);
  REQUIRE(again.size() == report.aggregates.size());
  for (size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].mean_best_gap == report.aggregates[i].mean_best_gap);
    CHECK(again[i].std_final_gap == report.aggregates[i].std_final_gap);
    CHECK(again[i].hit_rate == report.aggregates[i].hit_rate);
  }

  // exactly one best-method marker per block
  int best_count = 0;
  for (const auto& a : report.aggregates) best_count += a.best_method ? 1 : 0;
  CHECK(best_count == 1);

  // curves exist per method and are finite where defined
  REQUIRE(report.best_gap_curves.size() == 3);
  for (const auto& [name, curve] : report.best_gap_curves) {
    CHECK(static_cast<int64_t>(curve.size()) == cfg.budget);
    int finite = 0;
    for (double v : curve) finite += std::isfinite(v) ? 1 : 0;
    CHECK(finite > 0);
  }

  // SVG renders
  const std::string svg = render_best_gap_svg(report, "levy d=2");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
  const std::string bars = render_rows_svg(report.rows, "levy d=2 bars");
  CHECK(bars.find("<rect") != std::string::npos);
}

TEST_CASE("serial and openmp grids produce identical rows") {
  BenchConfig cfg;
  cfg.family = Family::Ackley;
  cfg.dim = 2;
  cfg.task_count = 2;
  cfg.particles = 2;
  cfg.budget = 25;
  cfg.seed = 4;
  cfg.methods = {"gd", "rmsprop"};

  BenchReport serial = run_benchmark(cfg, nullptr, ExecMode::Serial);
  BenchReport parallel = run_benchmark(cfg, nullptr, ExecMode::OpenMP);
  REQUIRE(serial.rows.size() == parallel.rows.size());
  for (size_t i = 0; i < serial.rows.size(); ++i) {
    CHECK(serial.rows[i].final_gap == parallel.rows[i].final_gap);
    CHECK(serial.rows[i].best_gap == parallel.rows[i].best_gap);
    CHECK(serial.rows[i].auc_gap == parallel.rows[i].auc_gap);
  }
}

TEST_CASE("learned method runs inside the harness") {
  BenchConfig cfg;
  cfg.family = Family::Ackley;
  cfg.dim = 2;
  cfg.task_count = 2;
  cfg.particles = 1;
  cfg.budget = 30;
  cfg.seed = 2;
  cfg.methods = {"shape", "gd"};

  MemoryConfig mc;
  mc.dim = 2;
  Memory probe(mc);
  PolicyPair pp = make_policies(2, 8, probe.readout_length(), 5.0, 3);
  BenchReport report = run_benchmark(cfg, &pp, ExecMode::Serial);
  REQUIRE(report.rows.size() == 4);
  for (const auto& r : report.rows) CHECK(r.oracle_calls <= cfg.budget);

  // identical initial f across methods on the same cell (paired starts)
  CHECK_THROWS_AS(run_benchmark(cfg, nullptr, ExecMode::Serial), ConfigError);
}
