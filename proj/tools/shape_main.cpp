#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "shape/bench.hpp"
#include "shape/diagnostics.hpp"
#include "shape/training.hpp"

using namespace shape;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << content;
}

std::string curve_to_csv(const std::vector<LossCurveRow>& curve) {
  std::ostringstream out;
  out << "epoch,phase,total,term,best,prog,plan_ce,plan_sg,ctrl,jr,port\n";
  char buf[320];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  r.epoch, r.phase.c_str(), r.total, r.term, r.best, r.prog, r.plan_ce, r.plan_sg, r.ctrl,
                  r.jr, r.port);
    out << buf;
  }
  return out.str();
}

TrainJob job_from_options(const std::string& family, int dim, int epochs, int wells, uint64_t seed,
                          bool no_memory, bool no_controller, int batch, int rollout) {
  TrainJob job;
  job.family = family_from_name(family);
  job.dim = dim;
  job.task_options.wells = wells;
  job.schedule = schedule_for_dim(dim);
  if (epochs >= 0) job.schedule.epochs = epochs;
  if (batch > 0) job.schedule.batch = batch;
  if (rollout > 0) job.schedule.train_rollout = rollout;
  job.seed = seed;
  job.use_memory = !no_memory;
  job.train_controller = !no_controller;
  job.exec = default_exec_mode();
  return job;
}

int run_train(const std::string& family, int dim, int epochs, int wells, uint64_t seed, bool no_memory,
              bool no_controller, int batch, int rollout, const std::string& out,
              const std::string& curve_path) {
  TrainJob job = job_from_options(family, dim, epochs, wells, seed, no_memory, no_controller, batch, rollout);
  std::printf("training %s d=%d epochs=%d batch=%d rollout=%d memory=%d controller=%d\n",
              family.c_str(), dim, job.schedule.epochs, job.schedule.batch, job.schedule.train_rollout,
              job.use_memory ? 1 : 0, job.train_controller ? 1 : 0);
  TrainResult result = train(job);
  save_checkpoint(policies_to_checkpoint(result.policies), out);
  if (!curve_path.empty()) write_file(curve_path, curve_to_csv(result.curve));
  std::printf("saved checkpoint to %s (teacher calls %lld, rollout calls %lld)\n", out.c_str(),
              static_cast<long long>(result.ledger.teacher_calls),
              static_cast<long long>(result.ledger.rollout_calls));
  if (!result.curve.empty()) std::printf("final loss %.6g\n", result.curve.back().total);
  return kExitOk;
}

int run_bench(const std::string& config_path, const std::string& out_dir) {
  BenchConfig cfg = load_config(config_path);
  std::filesystem::create_directories(out_dir);

  PolicyPair policies;
  bool have_policies = false;
  if (std::find(cfg.methods.begin(), cfg.methods.end(), "shape") != cfg.methods.end()) {
    if (!cfg.checkpoint.empty()) {
      policies = policies_from_checkpoint(load_checkpoint(cfg.checkpoint));
      have_policies = true;
      std::printf("loaded policies from %s\n", cfg.checkpoint.c_str());
    } else {
      TrainJob job;
      job.family = cfg.family;
      job.dim = cfg.dim;
      job.task_options = cfg.task_options;
      job.schedule = schedule_for_dim(cfg.dim);
      if (cfg.train_epochs >= 0) job.schedule.epochs = cfg.train_epochs;
      job.seed = cfg.train_seed;
      job.use_memory = cfg.use_memory;
      job.train_controller = cfg.train_controller;
      job.exec = default_exec_mode();
      std::printf("no checkpoint given: training for %d epochs first\n", job.schedule.epochs);
      TrainResult result = train(job);
      policies = result.policies;
      have_policies = true;
      save_checkpoint(policies_to_checkpoint(policies),
                      (std::filesystem::path(out_dir) / "trained.ckpt").string());
    }
  }

  BenchReport report = run_benchmark(cfg, have_policies ? &policies : nullptr, default_exec_mode());
  const auto dir = std::filesystem::path(out_dir);
  write_file((dir / "rows.csv").string(), rows_to_csv(report.rows));
  write_file((dir / "report.txt").string(), report_to_text(report));
  const std::string tag = family_name(cfg.family) + "-d" + std::to_string(cfg.dim);
  write_file((dir / ("best_gap_" + tag + ".svg")).string(),
             render_best_gap_svg(report, "best-so-far gap, " + tag));
  write_file((dir / ("summary_" + tag + ".svg")).string(), render_rows_svg(report.rows, "mean best gap, " + tag));
  std::cout << report_to_text(report);
  return kExitOk;
}

int run_eval(const std::string& checkpoint, const std::string& family, int dim, int64_t budget, int count,
             uint64_t seed, const std::string& oracle_kind, const std::string& out_dir) {
  PolicyPair policies = policies_from_checkpoint(load_checkpoint(checkpoint));
  BenchConfig cfg;
  cfg.family = family_from_name(family);
  cfg.dim = dim;
  cfg.task_count = count;
  cfg.budget = budget;
  cfg.seed = seed;
  cfg.oracle.kind = oracle_from_name(oracle_kind);
  cfg.methods = {"shape"};
  BenchReport report = run_benchmark(cfg, &policies, default_exec_mode());
  std::cout << report_to_text(report);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file((std::filesystem::path(out_dir) / "rows.csv").string(), rows_to_csv(report.rows));
  }
  return kExitOk;
}

int run_plot(const std::string& rows_path, const std::string& out_path) {
  std::ifstream f(rows_path);
  if (!f) throw ConfigError("cannot open rows csv: " + rows_path);
  std::ostringstream ss;
  ss << f.rdbuf();
  auto rows = rows_from_csv(ss.str());
  write_file(out_path, render_rows_svg(rows, "mean best gap by method"));
  std::printf("wrote %s (%zu rows)\n", out_path.c_str(), rows.size());
  return kExitOk;
}

int run_diag(uint64_t seed, const std::string& out_csv) {
  QuadraticSpec spec;
  spec.dim = 4;
  spec.seed = seed;
  ContractionResult contraction = contraction_suite(spec, {0.02, 0.01, 0.005}, 1200);
  DefectLedger defects = defect_suite(spec, 0.01, 800);
  StochasticFloorResult floor = stochastic_floor_suite(spec, {0.0, 0.1, 0.2, 0.4});
  std::cout << diagnostics_table(contraction, defects, floor);
  if (!out_csv.empty()) {
    std::ostringstream out;
    out << "suite,quantity,value\n";
    for (const auto& fit : contraction.fits) {
      out << "contraction,rate_h" << fit.h << "," << fit.rate << "\n";
      out << "contraction,r2_h" << fit.h << "," << fit.r_squared << "\n";
    }
    out << "defect,fitted_rate," << defects.fitted_rate << "\n";
    out << "defect,truncation," << defects.truncation << "\n";
    out << "defect,projection," << defects.projection << "\n";
    out << "stochastic,slope," << floor.slope_vs_sigma2 << "\n";
    out << "stochastic,r2," << floor.r_squared << "\n";
    write_file(out_csv, out.str());
  }
  const bool ok = contraction.pass && defects.pass && floor.pass;
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SHAPE: event-triggered port-Hamiltonian optimizer and matched-budget benchmark harness"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the planner/controller pair on a task family");
  std::string family = "multiwell";
  int dim = 1, epochs = -1, wells = 2, batch = -1, rollout = -1;
  uint64_t seed = 0;
  bool no_memory = false, no_controller = false;
  std::string ckpt_out = "shape.ckpt", curve_out;
  train_cmd->add_option("--family", family, "task family");
  train_cmd->add_option("--dim", dim, "task dimension");
  train_cmd->add_option("--epochs", epochs, "override schedule epochs");
  train_cmd->add_option("--wells", wells, "multiwell training wells");
  train_cmd->add_option("--seed", seed, "training seed");
  train_cmd->add_option("--batch", batch, "override batch size");
  train_cmd->add_option("--rollout", rollout, "override train rollout length");
  train_cmd->add_flag("--no-memory", no_memory, "disable the slow memory (ablation)");
  train_cmd->add_flag("--no-controller", no_controller, "skip controller training (ablation)");
  train_cmd->add_option("--out", ckpt_out, "checkpoint output path");
  train_cmd->add_option("--curve", curve_out, "loss-curve csv output path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint under a fixed budget");
  std::string eval_ckpt, eval_family = "ackley", eval_oracle = "exact", eval_out;
  int eval_dim = 2, eval_count = 16;
  int64_t eval_budget = 500;
  uint64_t eval_seed = 1;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--family", eval_family, "task family");
  eval_cmd->add_option("--dim", eval_dim, "task dimension");
  eval_cmd->add_option("--budget", eval_budget, "oracle budget per run");
  eval_cmd->add_option("--count", eval_count, "number of tasks");
  eval_cmd->add_option("--seed", eval_seed, "task seed base");
  eval_cmd->add_option("--oracle", eval_oracle, "oracle kind");
  eval_cmd->add_option("--out", eval_out, "output directory for rows.csv");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "run the matched-budget benchmark from a config");
  std::string bench_config, bench_out = "bench_out";
  bench_cmd->add_option("--config", bench_config, "run-config document")->required();
  bench_cmd->add_option("--out", bench_out, "output directory");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render a summary image from a rows csv");
  std::string plot_rows, plot_out = "summary.svg";
  plot_cmd->add_option("--rows", plot_rows, "rows csv path")->required();
  plot_cmd->add_option("--out", plot_out, "output svg path");

  // diag
  auto* diag_cmd = app.add_subcommand("diag", "energy/Lyapunov verification suites");
  uint64_t diag_seed = 0;
  std::string diag_out;
  diag_cmd->add_option("--seed", diag_seed, "quadratic seed");
  diag_cmd->add_option("--out", diag_out, "fitted-constants csv path");

  try {
    app.parse(argc, argv);
    if (*train_cmd)
      return run_train(family, dim, epochs, wells, seed, no_memory, no_controller, batch, rollout,
                       ckpt_out, curve_out);
    if (*eval_cmd)
      return run_eval(eval_ckpt, eval_family, eval_dim, eval_budget, eval_count, eval_seed, eval_oracle,
                      eval_out);
    if (*bench_cmd) return run_bench(bench_config, bench_out);
    if (*plot_cmd) return run_plot(plot_rows, plot_out);
    if (*diag_cmd) return run_diag(diag_seed, diag_out);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  }
  return kExitOk;
}
