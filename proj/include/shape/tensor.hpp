#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "shape/error.hpp"

namespace shape {

// Dense row-major tensor of 64-bit reals. Tensors are immutable value types
// once handed to an op; `node` links the value to the active tape when the
// op that produced it was recorded (-1 otherwise).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;
  int node = -1;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {}

  static Tensor zeros(std::vector<int> s);
  static Tensor full(std::vector<int> s, double fill);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(int rows, int cols, std::vector<double> v);
  static Tensor identity(int n);

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return shape.empty() || numel() == 1; }
  double scalar_value() const;
  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double operator[](int64_t i) const { return values[static_cast<size_t>(i)]; }
  double& operator[](int64_t i) { return values[static_cast<size_t>(i)]; }
};

class Tape;

// Gradient of a recorded scalar with respect to every recorded tensor.
// Leaves that were never recorded report a zero gradient.
class GradMap {
 public:
  GradMap() = default;
  GradMap(std::vector<std::vector<double>> grads) : grads_(std::move(grads)) {}

  Tensor grad(const Tensor& t) const;
  const std::vector<double>* raw(int node) const;

 private:
  std::vector<std::vector<double>> grads_;
};

// Reverse-mode tape. Single-writer: one tape belongs to one rollout or
// update context. Install with TapeScope; ops record onto the innermost
// active tape of the current thread.
class Tape {
 public:
  using BackFn = std::function<void(const std::vector<double>& upstream, Tape& tape)>;

  int record(const std::vector<int>& parents, BackFn back);

  // Marks `t` as a differentiable input of the graph.
  Tensor leaf(Tensor t);

  GradMap backward(const Tensor& root);

  void accumulate(int node, const std::vector<double>& contribution);
  void accumulate_scaled(int node, double scale, const std::vector<double>& v);

  size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    std::vector<int> parents;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;  // working buffer during backward
  std::vector<int64_t> numel_;
  friend class GradMap;
};

Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Returns a copy of `t` cut off from the tape (treated as a constant).
inline Tensor detach(Tensor t) {
  t.node = -1;
  return t;
}

namespace ops {

enum class Kind {
  Add,
  Sub,
  Scale,
  Hadamard,
  Matvec,
  Matmul,
  Transpose,
  Sum,
  Dot,
  Norm2,
  Tanh,
  Softplus,
  Relu,
  Sigmoid,
  Exp,
  Log,
  Clip,
  Concat,
  Slice,
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& m, const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor norm2(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor clip(const Tensor& a, double lo, double hi);
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& a, int64_t begin, int64_t len);
Tensor reciprocal(const Tensor& a);
// a * s with s a scalar tensor (kept separate from Scale, whose factor is a
// plain constant)
Tensor smul(const Tensor& a, const Tensor& s);

// Scalar f(q) with an externally supplied gradient: backward adds
// upstream * grad_q to q. This is how task objective values enter a
// recorded rollout without differentiating the oracle itself.
Tensor value_with_grad(const Tensor& q, double value, const std::vector<double>& grad_q);

// Generic dispatcher over the elementwise/contraction kinds above.
// Scale and Clip take their parameters through `params`.
Tensor tensor_op(Kind kind, const std::vector<Tensor>& inputs, const std::vector<double>& params = {});

}  // namespace ops

GradMap backward(const Tensor& root);

}  // namespace shape
