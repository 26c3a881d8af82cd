#include "shape/nets.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "shape/error.hpp"

namespace shape {

MlpParams make_mlp(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw Error("make_mlp needs at least input and output dims");
  MlpParams mlp;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const int in = dims[i], out = dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w = Tensor::zeros({out, in});
    for (auto& v : w.values) v = rng.uniform(-bound, bound);
    mlp.layers.push_back({std::move(w), Tensor::zeros({out})});
  }
  return mlp;
}

Tensor mlp_forward(const MlpParams& params, const Tensor& x) {
  if (params.layers.empty()) throw Error("mlp_forward on empty params");
  if (x.rank() != 1 || x.shape[0] != params.input_dim()) throw ShapeMismatchError("mlp_forward input");
  Tensor h = x;
  for (size_t i = 0; i < params.layers.size(); ++i) {
    h = ops::add(ops::matvec(params.layers[i].weight, h), params.layers[i].bias);
    if (i + 1 < params.layers.size()) h = ops::tanh(h);
  }
  return h;
}

void visit_mlp(MlpParams& mlp, const std::string& prefix, const ParamVisitor& visit) {
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    visit(prefix + ".W" + std::to_string(i), mlp.layers[i].weight);
    visit(prefix + ".b" + std::to_string(i), mlp.layers[i].bias);
  }
}

void adam_param_update(Tensor& param, const Tensor& grad, AdamState& state, double lr, double beta1,
                       double beta2, double eps) {
  if (!grad.same_shape(param)) throw ShapeMismatchError("adam gradient shape");
  if (!grad.all_finite()) throw NonFiniteError("adam gradient");
  if (state.m.values.empty()) {
    state.m = Tensor::zeros(param.shape);
    state.v = Tensor::zeros(param.shape);
    state.step = 0;
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < param.values.size(); ++i) {
    const double g = grad.values[i];
    state.m.values[i] = beta1 * state.m.values[i] + (1.0 - beta1) * g;
    state.v.values[i] = beta2 * state.v.values[i] + (1.0 - beta2) * g * g;
    const double mhat = state.m.values[i] / bc1;
    const double vhat = state.v.values[i] / bc2;
    param.values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void MetaAdam::apply(const std::string& name, Tensor& param, const Tensor& grad) {
  adam_param_update(param, grad, states_[name], lr_, beta1_, beta2_, eps_);
}

// ---------------------------------------------------------------------------
// Checkpoint text format

namespace {
constexpr const char* kMagic = "shape-checkpoint v1";
}

std::string checkpoint_to_string(const Checkpoint& ck) {
  std::ostringstream out;
  out << kMagic << "\n";
  char buf[40];
  for (const auto& [name, t] : ck.tensors) {
    out << "tensor " << name << " " << t.rank();
    for (int d : t.shape) out << " " << d;
    out << "\n";
    for (size_t i = 0; i < t.values.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", t.values[i]);
      out << buf << (i + 1 == t.values.size() ? "" : " ");
    }
    out << "\n";
  }
  return out.str();
}

Checkpoint checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IoError("bad checkpoint header");
  Checkpoint ck;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream hdr(line);
    std::string tag, name;
    int rank = 0;
    hdr >> tag >> name >> rank;
    if (tag != "tensor" || hdr.fail() || rank < 0) throw IoError("bad checkpoint tensor header: " + line);
    std::vector<int> shp(static_cast<size_t>(rank));
    for (auto& d : shp) {
      hdr >> d;
      if (hdr.fail()) throw IoError("bad checkpoint shape: " + line);
    }
    Tensor t = Tensor::zeros(shp);
    for (auto& v : t.values) {
      if (!(in >> v)) throw IoError("truncated checkpoint values for " + name);
    }
    std::getline(in, line);  // consume rest of the value line
    ck.tensors[name] = std::move(t);
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << checkpoint_to_string(ck);
  if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open for read: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace shape
