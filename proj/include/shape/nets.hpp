#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "shape/rng.hpp"
#include "shape/tensor.hpp"

namespace shape {

// Two-layer MLP building block: affine-tanh-...-affine. Hidden activations
// are always tanh; any head-specific squash is applied by the caller.
struct MlpParams {
  struct Layer {
    Tensor weight;  // {out, in}
    Tensor bias;    // {out}
  };
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().weight.shape[1]; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().weight.shape[0]; }
};

// Weights uniform in +-1/sqrt(fan_in), biases zero.
MlpParams make_mlp(const std::vector<int>& dims, Rng& rng);

Tensor mlp_forward(const MlpParams& params, const Tensor& x);

// Named flat view over a parameter collection. Both the meta optimizer and
// the checkpoint format work through this.
using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor)>;

void visit_mlp(MlpParams& mlp, const std::string& prefix, const ParamVisitor& visit);

// Bias-corrected Adam moments for one tensor.
struct AdamState {
  Tensor m;
  Tensor v;
  int64_t step = 0;
};

// One bias-corrected Adam update. Throws NonFiniteError on a non-finite
// gradient; a zero gradient leaves the parameters unchanged but still
// advances the step counter.
void adam_param_update(Tensor& param, const Tensor& grad, AdamState& state, double lr, double beta1,
                       double beta2, double eps);

// Meta-training optimizer over a named parameter set.
class MetaAdam {
 public:
  explicit MetaAdam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void apply(const std::string& name, Tensor& param, const Tensor& grad);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::map<std::string, AdamState> states_;
};

// ---------------------------------------------------------------------------
// Checkpoint format: versioned structured text. Values are written with 17
// significant digits so load(save(x)) reproduces every double exactly.

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
};

std::string checkpoint_to_string(const Checkpoint& ck);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace shape
