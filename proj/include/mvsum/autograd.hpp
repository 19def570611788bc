#pragma once

// Minimal define-by-run reverse-mode differentiation over 2-D row-major
// tensors. Instantiated for float (training) and double (gradient checks).
//
// A Tape records every op applied to its Vars together with a backward rule;
// Tape::backward walks the records in reverse creation order, which is a
// valid reverse topological order because ops only consume earlier nodes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mvsum/error.hpp"
#include "mvsum/kernels.hpp"

namespace mvsum::ad {

template <typename T>
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("tensor data size does not match shape");
  }

  std::size_t size() const { return data.size(); }
  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  T operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  T* row(std::size_t i) { return data.data() + i * cols; }
  const T* row(std::size_t i) const { return data.data() + i * cols; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  return "[" + std::to_string(t.rows) + "x" + std::to_string(t.cols) + "]";
}

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  // A non-recording tape evaluates values only (inference, finite differences).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> v) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(v);
    return {this, nodes_.size() - 1};
  }

  // One leaf per parameter per tape; the value is referenced, not copied.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node& n = nodes_.emplace_back();
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = record_;
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  // Drops every node created after `mark` (an earlier size()). Inference
  // only: a recording tape may still hold closures over those nodes.
  void truncate(std::size_t mark) {
    if (record_) throw Error("truncate on a recording tape");
    if (mark >= nodes_.size()) return;
    nodes_.resize(mark);
    std::erase_if(param_nodes_, [mark](const auto& kv) { return kv.second >= mark; });
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of an input node, allocated on first use.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 && value(id).size() != 0) n.grad = Tensor<T>(value(id).rows, value(id).cols);
    return n.grad;
  }

  // Records an op result. `inputs` decide whether the node needs a gradient.
  Var<T> push(Tensor<T> out, std::initializer_list<std::size_t> inputs, Backward backward, const char* op) {
    return push_span(std::move(out), std::span<const std::size_t>(inputs.begin(), inputs.size()), std::move(backward),
                     op);
  }

  Var<T> push_span(Tensor<T> out, std::span<const std::size_t> inputs, Backward backward, const char* op) {
    for (const T& x : out.data)
      if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
    Node& n = nodes_.emplace_back();
    n.value = std::move(out);
    if (record_) {
      for (std::size_t i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
      if (n.requires_grad) n.backward = std::move(backward);
    }
    return {this, nodes_.size() - 1};
  }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates to parameters.
  void backward(Var<T> loss) {
    if (!record_) throw Error("backward on a non-recording tape");
    if (loss.value().size() != 1) throw ShapeError("backward: loss must be 1x1, got " + shape_str(loss.value()));
    grad(loss.id()).data[0] = T(1);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) kernels::axpy(T(1), n.grad.data.data(), n.param->grad.data.data(), n.grad.size());
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

namespace detail {

template <typename T>
void same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
}

template <typename T>
[[noreturn]] void shape_fail(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "matmul");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.cols != B.rows) detail::shape_fail("matmul", A, B);
  const std::size_t m = A.rows, k = A.cols, n = B.cols;
  Tensor<T> out(m, n);
  kernels::gemm_nn(m, n, k, A.data.data(), B.data.data(), out.data.data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, [ia, ib, m, n, k](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) kernels::gemm_nt(m, k, n, g.data.data(), t.value(ib).data.data(), t.grad(ia).data.data());
    if (t.requires_grad(ib)) kernels::gemm_tn(k, n, m, t.value(ia).data.data(), g.data.data(), t.grad(ib).data.data());
  }, "matmul");
}

// a * b^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "matmul_nt");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.cols != B.cols) detail::shape_fail("matmul_nt", A, B);
  const std::size_t m = A.rows, k = A.cols, n = B.rows;
  Tensor<T> out(m, n);
  kernels::gemm_nt(m, n, k, A.data.data(), B.data.data(), out.data.data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, [ia, ib, m, n, k](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) kernels::gemm_nn(m, k, n, g.data.data(), t.value(ib).data.data(), t.grad(ia).data.data());
    if (t.requires_grad(ib)) kernels::gemm_tn(n, k, m, g.data.data(), t.value(ia).data.data(), t.grad(ib).data.data());
  }, "matmul_nt");
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const Tensor<T>& A = a.value();
  Tensor<T> out(A.cols, A.rows);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < A.cols; ++j) out(j, i) = A(i, j);
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia}, [ia](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.rows; ++i)
      for (std::size_t j = 0; j < ga.cols; ++j) ga(i, j) += g(j, i);
  }, "transpose");
}

// ---------------------------------------------------------------- elementwise

// b may match a, be a 1 x cols row (broadcast over rows) or a 1x1 scalar.
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "add");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  enum { full, row, scalar } mode;
  if (B.rows == A.rows && B.cols == A.cols) mode = full;
  else if (B.rows == 1 && B.cols == A.cols) mode = row;
  else if (B.size() == 1) mode = scalar;
  else detail::shape_fail("add", A, B);
  Tensor<T> out = A;
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < A.cols; ++j)
      out(i, j) += mode == full ? B(i, j) : mode == row ? B(0, j) : B.data[0];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, [ia, ib, mode](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) kernels::axpy(T(1), g.data.data(), t.grad(ia).data.data(), g.size());
    if (!t.requires_grad(ib)) return;
    Tensor<T>& gb = t.grad(ib);
    if (mode == full) {
      kernels::axpy(T(1), g.data.data(), gb.data.data(), g.size());
    } else {
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) gb.data[mode == row ? j : 0] += g(i, j);
    }
  }, "add");
}

// Adds a constant (non-differentiable) tensor of the same shape.
template <typename T>
Var<T> add_constant(Var<T> a, const Tensor<T>& c) {
  const Tensor<T>& A = a.value();
  if (A.rows != c.rows || A.cols != c.cols) detail::shape_fail("add_constant", A, c);
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += c.data[i];
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia}, [ia](Tape<T>& t, const Tensor<T>& g) {
    kernels::axpy(T(1), g.data.data(), t.grad(ia).data.data(), g.size());
  }, "add_constant");
}

// Elementwise product; b may also be a 1x1 scalar.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "mul");
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  const bool scalar = B.size() == 1 && !(A.rows == 1 && A.cols == 1);
  if (!scalar && (A.rows != B.rows || A.cols != B.cols)) detail::shape_fail("mul", A, B);
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= scalar ? B.data[0] : B.data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {ia, ib}, [ia, ib, scalar](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& A = t.value(ia);
    const Tensor<T>& B = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor<T>& ga = t.grad(ia);
      if (scalar) kernels::axpy(B.data[0], g.data.data(), ga.data.data(), g.size());
      else
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * B.data[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad(ib);
      if (scalar) gb.data[0] += kernels::dot(g.data.data(), A.data.data(), g.size());
      else
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * A.data[i];
    }
  }, "mul");
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (T& x : out.data) x *= c;
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia}, [ia, c](Tape<T>& t, const Tensor<T>& g) {
    kernels::axpy(c, g.data.data(), t.grad(ia).data.data(), g.size());
  }, "scale");
}

namespace detail {

// y = f(x) with dy/dx expressed through x and y.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, F f, D dfdx, const char* op) {
  Tensor<T> out = a.value();
  for (T& x : out.data) x = f(x);
  const std::size_t ia = a.id();
  const std::size_t iy = a.tape().size();
  return a.tape().push(std::move(out), {ia}, [ia, iy, dfdx](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(ia);
    const Tensor<T>& y = t.value(iy);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * dfdx(x.data[i], y.data[i]);
  }, op);
}

}  // namespace detail

template <typename T>
Var<T> tanh(Var<T> a) {
  return detail::unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; }, "tanh");
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(a, [](T x) { return detail::sigmoid(x); }, [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary(a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); }, "relu");
}

// ---------------------------------------------------------------- normalisation

namespace detail {

// Row softmax restricted to mask (1 = keep); fully masked rows become zeros.
template <typename T>
Var<T> softmax_rows(Var<T> a, const std::uint8_t* mask) {
  const Tensor<T>& A = a.value();
  if (A.cols == 0) throw ShapeError("softmax over an empty axis");
  Tensor<T> out(A.rows, A.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const T* x = A.row(i);
    const std::uint8_t* mk = mask ? mask + i * A.cols : nullptr;
    T hi = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < A.cols; ++j)
      if (!mk || mk[j]) hi = std::max(hi, x[j]);
    if (hi == -std::numeric_limits<T>::infinity()) continue;
    T* y = out.row(i);
    T sum = 0;
    for (std::size_t j = 0; j < A.cols; ++j) {
      y[j] = (!mk || mk[j]) ? std::exp(x[j] - hi) : T(0);
      sum += y[j];
    }
    for (std::size_t j = 0; j < A.cols; ++j) y[j] /= sum;
  }
  const std::size_t ia = a.id();
  const std::size_t iy = a.tape().size();
  return a.tape().push(std::move(out), {ia}, [ia, iy](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& y = t.value(iy);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.rows; ++i) {
      const T inner = kernels::dot(g.row(i), y.row(i), y.cols);
      for (std::size_t j = 0; j < y.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - inner);
    }
  }, "softmax");
}

}  // namespace detail

// axis = 1 normalises each row, axis = 0 each column.
template <typename T>
Var<T> softmax(Var<T> a, int axis = 1) {
  if (axis == 1) return detail::softmax_rows(a, nullptr);
  if (axis == 0) return transpose(detail::softmax_rows(transpose(a), nullptr));
  throw ShapeError("softmax: axis must be 0 or 1");
}

// Row softmax over entries where mask[i * cols + j] != 0.
template <typename T>
Var<T> masked_softmax(Var<T> a, std::span<const std::uint8_t> mask) {
  if (mask.size() != a.value().size())
    throw ShapeError("masked_softmax: mask has " + std::to_string(mask.size()) + " entries for " +
                     shape_str(a.value()));
  return detail::softmax_rows(a, mask.data());
}

template <typename T>
Var<T> log_softmax(Var<T> a) {
  const Tensor<T>& A = a.value();
  if (A.cols == 0) throw ShapeError("log_softmax over an empty axis");
  Tensor<T> out(A.rows, A.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const T* x = A.row(i);
    const T hi = *std::max_element(x, x + A.cols);
    T sum = 0;
    for (std::size_t j = 0; j < A.cols; ++j) sum += std::exp(x[j] - hi);
    const T lse = hi + std::log(sum);
    for (std::size_t j = 0; j < A.cols; ++j) out(i, j) = x[j] - lse;
  }
  const std::size_t ia = a.id();
  const std::size_t iy = a.tape().size();
  return a.tape().push(std::move(out), {ia}, [ia, iy](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& y = t.value(iy);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.rows; ++i) {
      T gsum = 0;
      for (std::size_t j = 0; j < y.cols; ++j) gsum += g(i, j);
      for (std::size_t j = 0; j < y.cols; ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
    }
  }, "log_softmax");
}

// Per-row normalisation to zero mean / unit variance, then gain and bias (1 x cols).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  detail::same_tape(x, gain, "layer_norm");
  detail::same_tape(x, bias, "layer_norm");
  const Tensor<T>& X = x.value();
  const Tensor<T>& G = gain.value();
  const Tensor<T>& B = bias.value();
  if (G.rows != 1 || G.cols != X.cols) detail::shape_fail("layer_norm", X, G);
  if (B.rows != 1 || B.cols != X.cols) detail::shape_fail("layer_norm", X, B);
  const std::size_t r = X.rows, c = X.cols;
  Tensor<T> out(r, c);
  Tensor<T> xhat(r, c);
  std::vector<T> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* xr = X.row(i);
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (xr[j] - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * G.data[j] + B.data[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().push(std::move(out), {ix, ig, ib},
                       [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                                                  const Tensor<T>& g) {
    const Tensor<T>& G = t.value(ig);
    if (t.requires_grad(ig)) {
      Tensor<T>& gg = t.grad(ig);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gg.data[j] += g(i, j) * xhat(i, j);
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb.data[j] += g(i, j);
    }
    if (t.requires_grad(ix)) {
      Tensor<T>& gx = t.grad(ix);
      std::vector<T> gh(c);
      for (std::size_t i = 0; i < r; ++i) {
        T mean_gh = 0, mean_ghx = 0;
        for (std::size_t j = 0; j < c; ++j) {
          gh[j] = g(i, j) * G.data[j];
          mean_gh += gh[j];
          mean_ghx += gh[j] * xhat(i, j);
        }
        mean_gh /= T(c);
        mean_ghx /= T(c);
        for (std::size_t j = 0; j < c; ++j) gx(i, j) += inv_std[i] * (gh[j] - mean_gh - xhat(i, j) * mean_ghx);
      }
    }
  }, "layer_norm");
}

// ---------------------------------------------------------------- indexing

// Rows of `table` selected by `ids` (embedding lookup when table is an embedding matrix).
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::size_t> ids) {
  const Tensor<T>& W = table.value();
  Tensor<T> out(ids.size(), W.cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= W.rows)
      throw ShapeError("gather_rows: index " + std::to_string(ids[r]) + " out of range for " + shape_str(W));
    std::copy(W.row(ids[r]), W.row(ids[r]) + W.cols, out.row(r));
  }
  const std::size_t it = table.id();
  return table.tape().push(std::move(out), {it},
                           [it, idx = std::vector<std::size_t>(ids.begin(), ids.end())](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gw = t.grad(it);
    for (std::size_t r = 0; r < idx.size(); ++r) kernels::axpy(T(1), g.row(r), gw.row(idx[r]), g.cols);
  }, "gather_rows");
}

template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const int> ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0) throw ShapeError("embedding_lookup: negative token id");
    rows.push_back(static_cast<std::size_t>(id));
  }
  return gather_rows(table, std::span<const std::size_t>(rows));
}

// out[r] = a[r, cols[r]], shape rows x 1.
template <typename T>
Var<T> pick(Var<T> a, std::span<const std::size_t> cols) {
  const Tensor<T>& A = a.value();
  if (cols.size() != A.rows) throw ShapeError("pick: need one column index per row of " + shape_str(A));
  Tensor<T> out(A.rows, 1);
  for (std::size_t r = 0; r < A.rows; ++r) {
    if (cols[r] >= A.cols) throw ShapeError("pick: column index out of range");
    out.data[r] = A(r, cols[r]);
  }
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia},
                       [ia, idx = std::vector<std::size_t>(cols.begin(), cols.end())](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga(r, idx[r]) += g.data[r];
  }, "pick");
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t count) {
  const Tensor<T>& A = a.value();
  if (begin + count > A.rows) throw ShapeError("slice_rows: range exceeds " + shape_str(A));
  Tensor<T> out(count, A.cols);
  std::copy(A.row(begin), A.row(begin) + count * A.cols, out.data.begin());
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia}, [ia, begin](Tape<T>& t, const Tensor<T>& g) {
    kernels::axpy(T(1), g.data.data(), t.grad(ia).row(begin), g.size());
  }, "slice_rows");
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t count) {
  const Tensor<T>& A = a.value();
  if (begin + count > A.cols) throw ShapeError("slice_cols: range exceeds " + shape_str(A));
  Tensor<T> out(A.rows, count);
  for (std::size_t i = 0; i < A.rows; ++i) std::copy(A.row(i) + begin, A.row(i) + begin + count, out.row(i));
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), {ia}, [ia, begin, count](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.rows; ++i) kernels::axpy(T(1), g.row(i), ga.row(i) + begin, count);
  }, "slice_cols");
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var<T>& p : parts) {
    if (p.rows() != rows) detail::shape_fail("concat_cols", parts[0].value(), p.value());
    detail::same_tape(parts[0], p, "concat_cols");
    cols += p.cols();
    ids.push_back(p.id());
  }
  Tensor<T> out(rows, cols);
  std::size_t off = 0;
  for (const Var<T>& p : parts) {
    const Tensor<T>& P = p.value();
    for (std::size_t i = 0; i < rows; ++i) std::copy(P.row(i), P.row(i) + P.cols, out.row(i) + off);
    off += P.cols;
  }
  return parts[0].tape().push_span(std::move(out), ids, [ids](Tape<T>& t, const Tensor<T>& g) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t c = t.value(id).cols;
      if (t.requires_grad(id)) {
        Tensor<T>& gp = t.grad(id);
        for (std::size_t i = 0; i < g.rows; ++i) kernels::axpy(T(1), g.row(i) + off, gp.row(i), c);
      }
      off += c;
    }
  }, "concat_cols");
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::vector<std::size_t> ids;
  std::size_t rows = 0;
  for (const Var<T>& p : parts) {
    if (p.cols() != cols) detail::shape_fail("concat_rows", parts[0].value(), p.value());
    detail::same_tape(parts[0], p, "concat_rows");
    rows += p.rows();
    ids.push_back(p.id());
  }
  Tensor<T> out(rows, cols);
  std::size_t off = 0;
  for (const Var<T>& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + off * cols);
    off += p.rows();
  }
  return parts[0].tape().push_span(std::move(out), ids, [ids](Tape<T>& t, const Tensor<T>& g) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) kernels::axpy(T(1), g.data.data() + off, t.grad(id).data.data(), n);
      off += n;
    }
  }, "concat_rows");
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T x : a.value().data) s += x;
  const std::size_t ia = a.id();
  return a.tape().push(Tensor<T>(1, 1, s), {ia}, [ia](Tape<T>& t, const Tensor<T>& g) {
    for (T& x : t.grad(ia).data) x += g.data[0];
  }, "sum");
}

template <typename T>
Var<T> mean(Var<T> a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / T(a.value().size()));
}

// ---------------------------------------------------------------- view weights

// Row-wise a_k^(1/T) / sum_i a_i^(1/T) for non-negative rows.
template <typename T>
Var<T> sharpen(Var<T> a, T temperature) {
  if (!(temperature > 0)) throw Error("sharpen: temperature must be positive");
  const Tensor<T>& A = a.value();
  const T p = T(1) / temperature;
  Tensor<T> out(A.rows, A.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    T total = 0;
    for (std::size_t j = 0; j < A.cols; ++j) {
      if (A(i, j) < 0) throw Error("sharpen: weights must be non-negative");
      out(i, j) = A(i, j) == 0 ? T(0) : std::pow(A(i, j), p);
      total += out(i, j);
    }
    if (total == 0) throw Error("sharpen: all-zero weights");
    for (std::size_t j = 0; j < A.cols; ++j) out(i, j) /= total;
  }
  const std::size_t ia = a.id();
  const std::size_t iy = a.tape().size();
  return a.tape().push(std::move(out), {ia}, [ia, iy, p](Tape<T>& t, const Tensor<T>& g) {
    // dy_k/da_j = (p / a_j) y_j (delta_kj - y_k)
    const Tensor<T>& A = t.value(ia);
    const Tensor<T>& y = t.value(iy);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.rows; ++i) {
      const T inner = kernels::dot(g.row(i), y.row(i), y.cols);
      for (std::size_t j = 0; j < y.cols; ++j)
        if (A(i, j) > 0) ga(i, j) += p / A(i, j) * y(i, j) * (g(i, j) - inner);
    }
  }, "sharpen");
}

// ---------------------------------------------------------------- recurrent cell

template <typename T>
struct LstmParams {
  Var<T> w_ih;  // in x 4h, gate blocks ordered i, f, g, o
  Var<T> w_hh;  // h x 4h
  Var<T> bias;  // 1 x 4h
};

template <typename T>
std::pair<Var<T>, Var<T>> lstm_cell(Var<T> x, Var<T> h_prev, Var<T> c_prev, const LstmParams<T>& p) {
  const std::size_t h = h_prev.cols();
  if (p.w_ih.cols() != 4 * h || p.w_hh.rows() != h || p.w_hh.cols() != 4 * h || p.bias.cols() != 4 * h ||
      c_prev.cols() != h || x.cols() != p.w_ih.rows())
    throw ShapeError("lstm_cell: parameter shapes inconsistent with x " + shape_str(x.value()) + " and h " +
                     shape_str(h_prev.value()));
  Var<T> z = add(add(matmul(x, p.w_ih), matmul(h_prev, p.w_hh)), p.bias);
  Var<T> i = sigmoid(slice_cols(z, 0, h));
  Var<T> f = sigmoid(slice_cols(z, h, h));
  Var<T> g = tanh(slice_cols(z, 2 * h, h));
  Var<T> o = sigmoid(slice_cols(z, 3 * h, h));
  Var<T> c = add(mul(f, c_prev), mul(i, g));
  Var<T> hn = mul(o, tanh(c));
  return {hn, c};
}

// ---------------------------------------------------------------- init

template <typename T>
Tensor<T> normal_tensor(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(rows, cols);
  for (T& x : t.data) x = static_cast<T>(dist(rng));
  return t;
}

// ---------------------------------------------------------------- gradient check

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t coordinates = 0;
};

// Compares tape gradients with central differences over every coordinate of
// `params`. `f` builds a 1x1 loss on the given tape.
template <typename T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>&)>& f, std::span<Parameter<T>* const> params,
                           double eps = 1e-5) {
  for (Parameter<T>* p : params) p->zero_grad();
  {
    Tape<T> tape;
    Var<T> loss = f(tape);
    if (!std::isfinite(static_cast<double>(loss.value().data[0]))) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
  }
  const auto eval = [&] {
    Tape<T> tape(false);
    const double v = static_cast<double>(f(tape).value().data[0]);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };
  GradCheckReport rep;
  for (Parameter<T>* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T orig = p->value.data[i];
      p->value.data[i] = static_cast<T>(orig + eps);
      const double up = eval();
      p->value.data[i] = static_cast<T>(orig - eps);
      const double down = eval();
      p->value.data[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = static_cast<double>(p->grad.data[i]);
      const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      ++rep.coordinates;
      if (rel > rep.max_rel_error) rep = {rel, p->name, i, analytic, numeric, rep.coordinates};
    }
  }
  return rep;
}

// ---------------------------------------------------------------- optimiser

template <typename T>
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  // One update of every parameter in `params` from its .grad; t advances once.
  void step(std::span<Parameter<T>* const> params, double lr) {
    for (Parameter<T>* p : params)
      for (T g : p->grad.data)
        if (std::isnan(g)) throw NumericError("adam: NaN gradient in " + p->name);
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (Parameter<T>* p : params) {
      Moments& m = moments_[p];
      if (m.first.size() != p->value.size()) {
        m.first.assign(p->value.size(), T(0));
        m.second.assign(p->value.size(), T(0));
      }
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const T g = p->grad.data[i];
        m.first[i] = static_cast<T>(kBeta1 * m.first[i] + (1 - kBeta1) * g);
        m.second[i] = static_cast<T>(kBeta2 * m.second[i] + (1 - kBeta2) * g * g);
        const double mhat = m.first[i] / bc1;
        const double vhat = m.second[i] / bc2;
        p->value.data[i] = static_cast<T>(p->value.data[i] - lr * mhat / (std::sqrt(vhat) + kEps));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<T> first, second;
  };
  std::size_t t_ = 0;
  std::unordered_map<const Parameter<T>*, Moments> moments_;
};

}  // namespace mvsum::ad
