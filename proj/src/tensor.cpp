#include "shape/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace shape {

Tensor Tensor::zeros(std::vector<int> s) {
  Tensor t;
  t.shape = std::move(s);
  t.values.assign(static_cast<size_t>(t.numel()), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> s, double fill) {
  Tensor t = zeros(std::move(s));
  std::fill(t.values.begin(), t.values.end(), fill);
  return t;
}

Tensor Tensor::vector(std::vector<double> v) {
  Tensor t;
  t.shape = {static_cast<int>(v.size())};
  t.values = std::move(v);
  return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
  if (static_cast<int64_t>(v.size()) != static_cast<int64_t>(rows) * cols)
    throw ShapeMismatchError("matrix literal size");
  Tensor t;
  t.shape = {rows, cols};
  t.values = std::move(v);
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t = zeros({n, n});
  for (int i = 0; i < n; ++i) t.values[static_cast<size_t>(i) * n + i] = 1.0;
  return t;
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw ShapeMismatchError("scalar_value on non-scalar tensor");
  return values[0];
}

bool Tensor::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

int Tape::record(const std::vector<int>& parents, BackFn back) {
  nodes_.push_back(Node{parents, std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(Tensor t) {
  t.node = record({}, BackFn{});
  if (static_cast<size_t>(t.node) >= numel_.size()) numel_.resize(t.node + 1);
  numel_[t.node] = t.numel();
  return t;
}

void Tape::accumulate(int node, const std::vector<double>& contribution) {
  if (node < 0) return;
  auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) g.assign(contribution.size(), 0.0);
  for (size_t i = 0; i < contribution.size(); ++i) g[i] += contribution[i];
}

void Tape::accumulate_scaled(int node, double scale, const std::vector<double>& v) {
  if (node < 0) return;
  auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) g.assign(v.size(), 0.0);
  for (size_t i = 0; i < v.size(); ++i) g[i] += scale * v[i];
}

GradMap Tape::backward(const Tensor& root) {
  if (nodes_.empty()) throw Error("backward on empty tape");
  if (root.numel() != 1) throw ShapeMismatchError("backward root must be scalar");
  if (root.node < 0) throw Error("backward root was not recorded");

  grads_.assign(nodes_.size(), {});
  grads_[static_cast<size_t>(root.node)] = {1.0};
  // Nodes are appended in topological order, so one reverse sweep visits
  // every node exactly once.
  for (int i = root.node; i >= 0; --i) {
    auto& g = grads_[static_cast<size_t>(i)];
    if (g.empty()) continue;
    if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back(g, *this);
  }
  GradMap out(std::move(grads_));
  grads_.clear();
  return out;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  numel_.clear();
}

Tensor GradMap::grad(const Tensor& t) const {
  Tensor g = Tensor::zeros(t.shape);
  if (t.node >= 0 && static_cast<size_t>(t.node) < grads_.size() && !grads_[static_cast<size_t>(t.node)].empty())
    g.values = grads_[static_cast<size_t>(t.node)];
  return g;
}

const std::vector<double>* GradMap::raw(int node) const {
  if (node < 0 || static_cast<size_t>(node) >= grads_.size()) return nullptr;
  if (grads_[static_cast<size_t>(node)].empty()) return nullptr;
  return &grads_[static_cast<size_t>(node)];
}

GradMap backward(const Tensor& root) {
  Tape* t = active_tape();
  if (!t) throw Error("backward called with no active tape");
  return t->backward(root);
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs)
    if (t->node >= 0) return true;
  return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeMismatchError(what);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = a;
  out.node = -1;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
  if (should_record({&a, &b})) {
    int pa = a.node, pb = b.node;
    out.node = g_active_tape->record({pa, pb}, [pa, pb](const std::vector<double>& g, Tape& tp) {
      tp.accumulate(pa, g);
      tp.accumulate(pb, g);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a;
  out.node = -1;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.values[i];
  if (should_record({&a, &b})) {
    int pa = a.node, pb = b.node;
    out.node = g_active_tape->record({pa, pb}, [pa, pb](const std::vector<double>& g, Tape& tp) {
      tp.accumulate(pa, g);
      tp.accumulate_scaled(pb, -1.0, g);
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  out.node = -1;
  for (auto& v : out.values) v *= c;
  if (should_record({&a})) {
    int pa = a.node;
    out.node = g_active_tape->record({pa}, [pa, c](const std::vector<double>& g, Tape& tp) {
      tp.accumulate_scaled(pa, c, g);
    });
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  Tensor out = a;
  out.node = -1;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= b.values[i];
  if (should_record({&a, &b})) {
    int pa = a.node, pb = b.node;
    std::vector<double> av = a.values, bv = b.values;
    out.node = g_active_tape->record({pa, pb}, [pa, pb, av, bv](const std::vector<double>& g, Tape& tp) {
      std::vector<double> da(g.size()), db(g.size());
      for (size_t i = 0; i < g.size(); ++i) {
        da[i] = g[i] * bv[i];
        db[i] = g[i] * av[i];
      }
      tp.accumulate(pa, da);
      tp.accumulate(pb, db);
    });
  }
  return out;
}

Tensor matvec(const Tensor& m, const Tensor& x) {
  if (m.rank() != 2 || x.rank() != 1 || m.shape[1] != x.shape[0]) throw ShapeMismatchError("matvec");
  const int rows = m.shape[0], cols = m.shape[1];
  Tensor out = Tensor::zeros({rows});
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = m.values.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += row[c] * x.values[static_cast<size_t>(c)];
    out.values[static_cast<size_t>(r)] = acc;
  }
  if (should_record({&m, &x})) {
    int pm = m.node, px = x.node;
    std::vector<double> mv = m.values, xv = x.values;
    out.node =
        g_active_tape->record({pm, px}, [pm, px, mv, xv, rows, cols](const std::vector<double>& g, Tape& tp) {
          if (pm >= 0) {
            std::vector<double> dm(static_cast<size_t>(rows) * cols);
            for (int r = 0; r < rows; ++r)
              for (int c = 0; c < cols; ++c)
                dm[static_cast<size_t>(r) * cols + c] = g[static_cast<size_t>(r)] * xv[static_cast<size_t>(c)];
            tp.accumulate(pm, dm);
          }
          if (px >= 0) {
            std::vector<double> dx(static_cast<size_t>(cols), 0.0);
            for (int r = 0; r < rows; ++r)
              for (int c = 0; c < cols; ++c)
                dx[static_cast<size_t>(c)] += mv[static_cast<size_t>(r) * cols + c] * g[static_cast<size_t>(r)];
            tp.accumulate(px, dx);
          }
        });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) throw ShapeMismatchError("matmul");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) {
      const double aij = a.values[static_cast<size_t>(i) * k + j];
      for (int c = 0; c < n; ++c)
        out.values[static_cast<size_t>(i) * n + c] += aij * b.values[static_cast<size_t>(j) * n + c];
    }
  if (should_record({&a, &b})) {
    int pa = a.node, pb = b.node;
    std::vector<double> av = a.values, bv = b.values;
    out.node = g_active_tape->record({pa, pb}, [pa, pb, av, bv, m, k, n](const std::vector<double>& g, Tape& tp) {
      if (pa >= 0) {
        std::vector<double> da(static_cast<size_t>(m) * k, 0.0);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int c = 0; c < n; ++c) acc += g[static_cast<size_t>(i) * n + c] * bv[static_cast<size_t>(j) * n + c];
            da[static_cast<size_t>(i) * k + j] = acc;
          }
        tp.accumulate(pa, da);
      }
      if (pb >= 0) {
        std::vector<double> db(static_cast<size_t>(k) * n, 0.0);
        for (int j = 0; j < k; ++j)
          for (int c = 0; c < n; ++c) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += av[static_cast<size_t>(i) * k + j] * g[static_cast<size_t>(i) * n + c];
            db[static_cast<size_t>(j) * n + c] = acc;
          }
        tp.accumulate(pb, db);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeMismatchError("transpose expects rank 2");
  const int m = a.shape[0], n = a.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.values[static_cast<size_t>(j) * m + i] = a.values[static_cast<size_t>(i) * n + j];
  if (should_record({&a})) {
    int pa = a.node;
    out.node = g_active_tape->record({pa}, [pa, m, n](const std::vector<double>& g, Tape& tp) {
      std::vector<double> da(static_cast<size_t>(m) * n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) da[static_cast<size_t>(i) * n + j] = g[static_cast<size_t>(j) * m + i];
      tp.accumulate(pa, da);
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (should_record({&a})) {
    int pa = a.node;
    size_t n = a.values.size();
    out.node = g_active_tape->record({pa}, [pa, n](const std::vector<double>& g, Tape& tp) {
      tp.accumulate(pa, std::vector<double>(n, g[0]));
    });
  }
  return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double acc = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * b.values[i];
  Tensor out = Tensor::scalar(acc);
  if (should_record({&a, &b})) {
    int pa = a.node, pb = b.node;
    std::vector<double> av = a.values, bv = b.values;
    out.node = g_active_tape->record({pa, pb}, [pa, pb, av, bv](const std::vector<double>& g, Tape& tp) {
      tp.accumulate_scaled(pa, g[0], bv);
      tp.accumulate_scaled(pb, g[0], av);
    });
  }
  return out;
}

Tensor norm2(const Tensor& a) {
  if (!a.all_finite()) throw NonFiniteError("norm2 input");
  double acc = 0.0;
  for (double v : a.values) acc += v * v;
  const double n = std::sqrt(acc);
  Tensor out = Tensor::scalar(n);
  if (should_record({&a})) {
    int pa = a.node;
    std::vector<double> av = a.values;
    out.node = g_active_tape->record({pa}, [pa, av, n](const std::vector<double>& g, Tape& tp) {
      const double s = g[0] / std::max(n, 1e-12);
      tp.accumulate_scaled(pa, s, av);
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Bwd bwd_from_in_out) {
  Tensor out = a;
  out.node = -1;
  for (auto& v : out.values) v = fwd(v);
  if (should_record({&a})) {
    int pa = a.node;
    std::vector<double> in = a.values, ov = out.values;
    out.node = g_active_tape->record({pa}, [pa, in, ov, bwd_from_in_out](const std::vector<double>& g, Tape& tp) {
      std::vector<double> da(g.size());
      for (size_t i = 0; i < g.size(); ++i) da[i] = g[i] * bwd_from_in_out(in[i], ov[i]);
      tp.accumulate(pa, da);
    });
  }
  return out;
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return std::tanh(x); },
                           [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& a) {
  // log(1 + e^x) with the standard overflow-safe form
  return unary_elementwise(a,
                           [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
                           [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                           [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor reciprocal(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return 1.0 / x; },
                           [](double, double y) { return -y * y; });
}

Tensor smul(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeMismatchError("smul scalar factor");
  const double c = s.values[0];
  Tensor out = a;
  out.node = -1;
  for (auto& v : out.values) v *= c;
  if (should_record({&a, &s})) {
    int pa = a.node, ps = s.node;
    std::vector<double> av = a.values;
    out.node = g_active_tape->record({pa, ps}, [pa, ps, av, c](const std::vector<double>& g, Tape& tp) {
      tp.accumulate_scaled(pa, c, g);
      if (ps >= 0) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
        tp.accumulate(ps, {acc});
      }
    });
  }
  return out;
}

Tensor clip(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw Error("clip bounds inverted");
  Tensor out = a;
  out.node = -1;
  for (auto& v : out.values) v = std::min(hi, std::max(lo, v));
  if (should_record({&a})) {
    int pa = a.node;
    std::vector<double> in = a.values;
    out.node = g_active_tape->record({pa}, [pa, in, lo, hi](const std::vector<double>& g, Tape& tp) {
      std::vector<double> da(g.size());
      for (size_t i = 0; i < g.size(); ++i) da[i] = (in[i] > lo && in[i] < hi) ? g[i] : 0.0;
      tp.accumulate(pa, da);
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatchError("concat of nothing");
  int64_t total = 0;
  bool record = false;
  for (const auto& p : parts) {
    if (p.rank() > 1) throw ShapeMismatchError("concat expects vectors/scalars");
    total += p.numel();
    if (g_active_tape && p.node >= 0) record = true;
  }
  Tensor out = Tensor::zeros({static_cast<int>(total)});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values.begin(), p.values.end(), out.values.begin() + off);
    off += p.numel();
  }
  if (record) {
    std::vector<int> pids;
    std::vector<int64_t> offsets, lens;
    int64_t o = 0;
    for (const auto& p : parts) {
      pids.push_back(p.node);
      offsets.push_back(o);
      lens.push_back(p.numel());
      o += p.numel();
    }
    out.node = g_active_tape->record(pids, [pids, offsets, lens](const std::vector<double>& g, Tape& tp) {
      for (size_t k = 0; k < pids.size(); ++k) {
        if (pids[k] < 0) continue;
        std::vector<double> dp(g.begin() + offsets[k], g.begin() + offsets[k] + lens[k]);
        tp.accumulate(pids[k], dp);
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, int64_t begin, int64_t len) {
  if (a.rank() > 1) throw ShapeMismatchError("slice expects a vector");
  if (begin < 0 || len < 0 || begin + len > a.numel()) throw ShapeMismatchError("slice out of range");
  Tensor out = Tensor::zeros({static_cast<int>(len)});
  std::copy(a.values.begin() + begin, a.values.begin() + begin + len, out.values.begin());
  if (should_record({&a})) {
    int pa = a.node;
    int64_t n = a.numel();
    out.node = g_active_tape->record({pa}, [pa, begin, len, n](const std::vector<double>& g, Tape& tp) {
      std::vector<double> da(static_cast<size_t>(n), 0.0);
      std::copy(g.begin(), g.begin() + len, da.begin() + begin);
      tp.accumulate(pa, da);
    });
  }
  return out;
}

Tensor value_with_grad(const Tensor& q, double value, const std::vector<double>& grad_q) {
  if (grad_q.size() != q.values.size()) throw ShapeMismatchError("value_with_grad gradient length");
  Tensor out = Tensor::scalar(value);
  if (should_record({&q})) {
    int pq = q.node;
    std::vector<double> gq = grad_q;
    out.node = g_active_tape->record({pq}, [pq, gq](const std::vector<double>& g, Tape& tp) {
      tp.accumulate_scaled(pq, g[0], gq);
    });
  }
  return out;
}

Tensor tensor_op(Kind kind, const std::vector<Tensor>& in, const std::vector<double>& params) {
  switch (kind) {
    case Kind::Add: return add(in.at(0), in.at(1));
    case Kind::Sub: return sub(in.at(0), in.at(1));
    case Kind::Scale: return scale(in.at(0), params.at(0));
    case Kind::Hadamard: return hadamard(in.at(0), in.at(1));
    case Kind::Matvec: return matvec(in.at(0), in.at(1));
    case Kind::Matmul: return matmul(in.at(0), in.at(1));
    case Kind::Transpose: return transpose(in.at(0));
    case Kind::Sum: return sum(in.at(0));
    case Kind::Dot: return dot(in.at(0), in.at(1));
    case Kind::Norm2: return norm2(in.at(0));
    case Kind::Tanh: return tanh(in.at(0));
    case Kind::Softplus: return softplus(in.at(0));
    case Kind::Relu: return relu(in.at(0));
    case Kind::Sigmoid: return sigmoid(in.at(0));
    case Kind::Exp: return exp(in.at(0));
    case Kind::Log: return log(in.at(0));
    case Kind::Clip: return clip(in.at(0), params.at(0), params.at(1));
    case Kind::Concat: return concat(in);
    case Kind::Slice:
      return slice(in.at(0), static_cast<int64_t>(params.at(0)), static_cast<int64_t>(params.at(1)));
  }
  throw Error("unknown tensor op kind");
}

}  // namespace ops
}  // namespace shape
