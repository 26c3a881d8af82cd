#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shape/rng.hpp"
#include "shape/tasks.hpp"
#include "shape/tensor.hpp"

namespace shape {

enum class OracleKind { Exact, Stochastic, ZerothOrder, Minibatch };

std::string oracle_name(OracleKind k);
OracleKind oracle_from_name(const std::string& name);

struct OracleParams {
  OracleKind kind = OracleKind::Exact;
  double sigma_g = 0.1;    // stochastic noise scale
  double zo_epsilon = 1e-3;
  int zo_directions = 4;   // K
  int minibatch = 8;
};

struct Budget {
  int64_t total = 0;
  int64_t used = 0;

  int64_t remaining() const { return total - used; }
  bool exhausted() const { return used >= total; }
  void charge(int64_t calls);
};

struct OracleSample {
  double f = 0.0;
  Tensor g;  // force estimate
  int64_t calls_consumed = 0;
  OracleKind kind = OracleKind::Exact;
};

OracleSample query_exact(const TaskSpec& task, const Tensor& q, Budget& budget);

// g = grad f + sigma_g * xi with xi standard normal per coordinate. The
// noise for a given call index is a pure function of (stream, index), so
// paired runs across methods see identical draws.
OracleSample query_stochastic(const TaskSpec& task, const Tensor& q, double sigma_g,
                              const NoiseStream& noise, Budget& budget);

// Two-point directional estimator over K unit directions; consumes exactly
// 2K function evaluations. The estimator is used verbatim: its expectation
// on smooth f is grad f / d (no dimension rescaling applied here).
OracleSample query_zeroth_order(const TaskSpec& task, const Tensor& q, double epsilon, int directions,
                                const NoiseStream& noise, Budget& budget);

// Mini-batch phase-retrieval gradient restricted to the given measurement
// indices; the regularizer is always included. One query consumes one call.
OracleSample query_minibatch(const TaskSpec& task, const Tensor& q, const std::vector<int>& batch,
                             Budget& budget);

// Uniform front-end used by rollouts and the benchmark harness. The
// call_index drives paired noise; it normally equals budget.used at query
// time.
class Oracle {
 public:
  Oracle(const TaskSpec& task, OracleParams params, uint64_t noise_seed)
      : task_(&task), params_(params), noise_(noise_seed) {}

  OracleSample query(const Tensor& q, Budget& budget) const;

  // Smallest budget headroom a single query needs.
  int64_t min_cost() const { return params_.kind == OracleKind::ZerothOrder ? 2 * params_.zo_directions : 1; }

  const OracleParams& params() const { return params_; }
  const TaskSpec& task() const { return *task_; }

 private:
  const TaskSpec* task_;
  OracleParams params_;
  NoiseStream noise_;
};

}  // namespace shape
