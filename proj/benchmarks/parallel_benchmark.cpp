// Compares the serial reference execution of the rollout grid against the
// OpenMP path: identical results required, wall-clock speedup reported.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "shape/bench.hpp"

using namespace shape;

namespace {

double run_grid(const BenchConfig& cfg, ExecMode mode, BenchReport* out) {
  const auto t0 = std::chrono::steady_clock::now();
  *out = run_benchmark(cfg, nullptr, mode);
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

bool rows_equal(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].final_gap != b[i].final_gap) return false;
    if (a[i].best_gap != b[i].best_gap) return false;
    if (a[i].auc_gap != b[i].auc_gap) return false;
    if (a[i].oracle_calls != b[i].oracle_calls) return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  int rollouts = 32;
  int64_t budget = 256;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--rollouts") == 0) rollouts = std::atoi(argv[i + 1]);
    if (std::strcmp(argv[i], "--budget") == 0) budget = std::atoll(argv[i + 1]);
  }

  BenchConfig cfg;
  cfg.family = Family::Levy;
  cfg.dim = 2;
  cfg.task_count = rollouts;
  cfg.particles = 1;
  cfg.budget = budget;
  cfg.seed = 7;
  cfg.oracle.kind = OracleKind::Stochastic;
  cfg.oracle.sigma_g = 0.1;
  cfg.methods = {"gd", "momentum", "adam", "rmsprop"};

  std::printf("rollout grid: %d tasks x %zu methods, budget %lld, %d threads available\n", rollouts,
              cfg.methods.size(), static_cast<long long>(budget), hardware_threads());

  BenchReport serial_report, omp_report;
  const double t_serial = run_grid(cfg, ExecMode::Serial, &serial_report);
  const double t_omp = run_grid(cfg, ExecMode::OpenMP, &omp_report);

  std::printf("%-22s %10.1f ms\n", "serial reference", t_serial);
  std::printf("%-22s %10.1f ms\n", "openmp", t_omp);
  std::printf("%-22s %10.2fx\n", "speedup", t_serial / t_omp);

  if (!rows_equal(serial_report.rows, omp_report.rows)) {
    std::printf("FAIL: serial and openmp grids disagree\n");
    return 1;
  }
  std::printf("results identical across execution modes\n");
  return 0;
}
