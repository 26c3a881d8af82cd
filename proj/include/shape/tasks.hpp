#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "shape/rng.hpp"
#include "shape/tensor.hpp"

namespace shape {

enum class Family { Multiwell, Ackley, Levy, Rastrigin, LennardJones, PhaseRetrieval, Control };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Interior extrema of the piecewise-cubic multiwell potential. Even
// (0-based) slots are valleys, odd slots are barriers; the global valley
// undercuts every other valley by `margin`.
struct MultiwellKnots {
  std::vector<double> x;
  std::vector<double> v;
  int global_index = 0;  // even index into x/v
  double wall_value = 0.0;
  double margin = 0.0;

  int wells() const { return (static_cast<int>(x.size()) + 1) / 2; }
};

enum class ControlSystem { DoubleIntegrator, Pendulum };

struct ControlParams {
  ControlSystem system = ControlSystem::DoubleIntegrator;
  int horizon = 8;
  double dt = 0.25;  // horizon * dt == 2.0
  double lambda_u = 1e-3;
  std::vector<double> x0 = {0.0, 0.0};
  std::vector<double> goal = {0.0, 0.0};
};

struct Reference {
  Tensor q_star;      // empty when only f* is known
  double f_star = 0.0;
  bool proxy = false;  // true when f* comes from an offline multistart run
};

struct TaskOptions {
  bool rotate = false;
  int wells = 3;               // multiwell L
  double lj_eps = 1.0;
  double lj_sigma = 1.0;
  double phase_noise = 0.0;
  ControlSystem control_system = ControlSystem::DoubleIntegrator;
  double lambda_u = 1e-3;
};

struct TaskSpec {
  Family family = Family::Ackley;
  int dim = 2;
  uint64_t seed = 0;
  double domain_halfwidth = 5.0;

  // benchmark families
  Tensor shift;
  bool rotated = false;
  Tensor rotation;  // {d, d}, orthogonal

  // multiwell
  MultiwellKnots knots;

  // Lennard-Jones
  double lj_eps = 1.0;
  double lj_sigma = 1.0;
  int lj_particles = 0;

  // phase retrieval
  Tensor phase_sensing;  // {m, n}
  Tensor phase_obs;      // {m}
  Tensor phase_signal;   // {n}
  double phase_lambda = 1e-3;
  double phase_noise = 0.0;

  // control
  ControlParams control;

  Reference reference;
  std::string id;
};

TaskSpec make_task(Family family, int dim, uint64_t seed, const TaskOptions& opts = {});

double eval_f(const TaskSpec& task, const Tensor& q);
Tensor eval_grad(const TaskSpec& task, const Tensor& q);
Reference reference_optimum(const TaskSpec& task);

// Initial iterate law used by every method in a paired run.
Tensor sample_initial_point(const TaskSpec& task, Rng& rng);

// Distance to the reference minimizer computed after quotient alignment
// (sign flip for phase retrieval, rigid motion + relabeling for LJ,
// terminal-state proxy for control). NaN when no reference point exists.
double reference_distance(const TaskSpec& task, const Tensor& q);

// Fixed-length descriptor fed into the policy observation.
std::vector<double> task_descriptor(const TaskSpec& task);

// (value, gradient) closure over eval_f/eval_grad.
using PotentialFn = std::function<double(const Tensor& q, Tensor* grad)>;
PotentialFn as_potential(const TaskSpec& task);

// Control rollout helper shared by eval and metrics.
std::vector<double> control_terminal_state(const TaskSpec& task, const Tensor& q);

}  // namespace shape
