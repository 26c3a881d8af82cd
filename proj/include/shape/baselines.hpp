#pragma once

#include <functional>
#include <string>
#include <vector>

#include "shape/rng.hpp"
#include "shape/shape_loop.hpp"
#include "shape/tasks.hpp"
#include "shape/tensor.hpp"

namespace shape {

enum class Method {
  Gd,
  Momentum,
  Nag,
  Adagrad,
  Rmsprop,
  Adadelta,
  Adam,
  Adamw,
  Lookahead,
  Sam,
  Sghmc,
  Shampoo,
  Soap,
  Sophia,
  Lionk,
  Muon,
};

std::string method_name(Method m);
Method method_from_name(const std::string& name);
std::vector<Method> all_methods();

struct BaselineHparams {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double alpha = 0.99;        // rmsprop EMA
  double rho = 0.95;          // adadelta EMA / sam radius / sophia clip
  int kick_period = 5;        // lionk
  double kick_scale = 1.0;    // lionk
  double nu = 0.99;           // soap inner EMA
  double eps = 1e-8;
  double weight_decay = 0.0;  // adamw / lion decay
  int lookahead_k = 5;
  double lookahead_alpha = 0.5;
  double mu = 0.95;  // muon momentum
};

// Hyperparameter table keyed by method and task type; unknown task types
// take the fallback row.
std::string hparam_task_type(Family family);
BaselineHparams lookup_hparams(Method method, const std::string& task_type);

struct BaselineState {
  Method method = Method::Gd;
  Tensor q;
  Tensor p;       // heavy-ball style momentum
  Tensor m;       // first moment / lion EMA
  Tensor v;       // second moment / adadelta grad EMA
  Tensor aux;     // adadelta delta EMA
  Tensor slow_q;  // lookahead slow weights
  Tensor curv;    // sophia curvature EMA
  int64_t step = 0;
  // matrix-shaped state (shampoo/soap/muon); q viewed as rows x cols
  int rows = 1, cols = 1;
  Tensor mat_l, mat_r, mat_v, muon_buf;
  Rng rng;  // sghmc diffusion / sophia probes
};

BaselineState baseline_init(Method method, const Tensor& q0, uint64_t seed);

// One boxed update consuming the gradient g measured at the method's query
// point. Methods that need a second gradient (SAM's inner maximization,
// Sophia's periodic Hessian-vector probe) obtain it through `extra_grad`,
// whose calls the harness accounts separately.
void baseline_step(BaselineState& state, const Tensor& g, const BaselineHparams& hp,
                   const std::function<Tensor(const Tensor&)>& extra_grad = {});

// Where the next charged oracle call must be made. NAG evaluates at the
// look-ahead point; every other method at the current iterate.
Tensor baseline_query_point(const BaselineState& state, const BaselineHparams& hp);
bool queries_at_lookahead(Method m);

// Matched-budget rollout driver with the same trace format as run_shape.
// Surcharge calls (SAM, Sophia's probe) are counted in trace.extra_calls.
RolloutTrace run_baseline(const TaskSpec& task, const RunConfig& cfg, Method method);

}  // namespace shape
