/*
 * Copyright 2026 The cerespt Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Reverse-mode differentiation over 2-D tensors.
//
// A Tape records every operation of one forward pass. Values of parameter
// leaves alias the ParamStore and their gradients accumulate straight into
// Parameter::grad, so several tapes can contribute to one optimizer step.

#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "cerespt/error.hpp"
#include "cerespt/nn/tensor.hpp"

namespace cerespt::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  Shape shape() const { return tape->shape(*this); }
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
};

template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> t) {
    Node n;
    n.shape = t.shape;
    n.value = std::move(t.data);
    return push(std::move(n));
  }

  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.shape = p.value.shape;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    Var<T> v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var<T> param(ParamStore<T>& store, const std::string& name) { return param(store.at(name)); }

  Shape shape(Var<T> v) const { return nodes_[v.id].shape; }

  const T* data(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value.data.data() : n.value.data();
  }

  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  // Gradient buffer of `v`, allocated on first use during backward.
  T* grad(Var<T> v) {
    Node& n = nodes_[v.id];
    if (n.param) return n.param->grad.data();
    if (n.grad.empty()) n.grad.assign(n.shape.size(), T(0));
    return n.grad.data();
  }

  Tensor<T> value(Var<T> v) const {
    Tensor<T> t;
    t.shape = shape(v);
    const T* p = data(v);
    t.data.assign(p, p + t.shape.size());
    return t;
  }

  T scalar(Var<T> v) const {
    if (shape(v).size() != 1) throw InvalidArgument("scalar() on " + to_string(shape(v)));
    return data(v)[0];
  }

  // Records an op node. `backward` runs only if the node needs a gradient
  // and received one.
  Var<T> record(Shape shape, Buffer<T> value, std::initializer_list<Var<T>> inputs,
                std::function<void()> backward) {
    Node n;
    n.shape = shape;
    n.value = std::move(value);
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    n.requires_grad = grad_enabled_ && needs;
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  Var<T> record(Shape shape, Buffer<T> value, const std::vector<Var<T>>& inputs,
                std::function<void()> backward) {
    Node n;
    n.shape = shape;
    n.value = std::move(value);
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    n.requires_grad = grad_enabled_ && needs;
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  // Populates dLoss/dv for every recorded v. When `store` is given, every
  // parameter in it is marked as having a gradient for this step; parameters
  // the loss does not reach keep a zero gradient.
  void backward(Var<T> loss, ParamStore<T>* store = nullptr) {
    if (loss.tape != this) throw InvalidArgument("backward: loss belongs to another tape");
    if (shape(loss).size() != 1) {
      throw InvalidArgument("backward: loss must be scalar, got " + to_string(shape(loss)));
    }
    if (nodes_[loss.id].requires_grad) {
      grad(loss)[0] += T(1);
      for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        n.backward();
      }
    }
    for (auto& [p, id] : param_nodes_) p->grad_ready = true;
    if (store) store->mark_grads_ready();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    Buffer<T> value;
    Buffer<T> grad;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> param_nodes_;
};

namespace detail {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw InvalidArgument(std::string(op) + ": operands on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra.

// a[n x k] * b[k x m]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b, "matmul");
  Tape<T>& tp = *a.tape;
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) {
    throw InvalidArgument("matmul: " + to_string(sa) + " x " + to_string(sb));
  }
  Buffer<T> out(sa.rows * sb.cols);
  MatMap<T>(out.data(), sa.rows, sb.cols).noalias() =
      ConstMatMap<T>(tp.data(a), sa.rows, sa.cols) * ConstMatMap<T>(tp.data(b), sb.rows, sb.cols);
  Var<T> c;
  c = tp.record({sa.rows, sb.cols}, std::move(out), {a, b}, [&tp, a, b, sa, sb, id = tp.size()] {
    Var<T> cv{&tp, static_cast<int>(id)};
    ConstMatMap<T> dc(tp.grad(cv), sa.rows, sb.cols);
    if (tp.requires_grad(a)) {
      MatMap<T>(tp.grad(a), sa.rows, sa.cols).noalias() +=
          dc * ConstMatMap<T>(tp.data(b), sb.rows, sb.cols).transpose();
    }
    if (tp.requires_grad(b)) {
      MatMap<T>(tp.grad(b), sb.rows, sb.cols).noalias() +=
          ConstMatMap<T>(tp.data(a), sa.rows, sa.cols).transpose() * dc;
    }
  });
  return c;
}

// a[n x k] * b[m x k]^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b, "matmul_nt");
  Tape<T>& tp = *a.tape;
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.cols) {
    throw InvalidArgument("matmul_nt: " + to_string(sa) + " x " + to_string(sb) + "^T");
  }
  Buffer<T> out(sa.rows * sb.rows);
  MatMap<T>(out.data(), sa.rows, sb.rows).noalias() =
      ConstMatMap<T>(tp.data(a), sa.rows, sa.cols) *
      ConstMatMap<T>(tp.data(b), sb.rows, sb.cols).transpose();
  return tp.record({sa.rows, sb.rows}, std::move(out), {a, b}, [&tp, a, b, sa, sb, id = tp.size()] {
    Var<T> cv{&tp, static_cast<int>(id)};
    ConstMatMap<T> dc(tp.grad(cv), sa.rows, sb.rows);
    if (tp.requires_grad(a)) {
      MatMap<T>(tp.grad(a), sa.rows, sa.cols).noalias() +=
          dc * ConstMatMap<T>(tp.data(b), sb.rows, sb.cols);
    }
    if (tp.requires_grad(b)) {
      MatMap<T>(tp.grad(b), sb.rows, sb.cols).noalias() +=
          dc.transpose() * ConstMatMap<T>(tp.data(a), sa.rows, sa.cols);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise.

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b, "add");
  Tape<T>& tp = *a.tape;
  const Shape s = a.shape();
  if (!(s == b.shape())) throw InvalidArgument("add: " + to_string(s) + " + " + to_string(b.shape()));
  Buffer<T> out(s.size());
  const T* pa = tp.data(a);
  const T* pb = tp.data(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return tp.record(s, std::move(out), {a, b}, [&tp, a, b, s, id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    for (Var<T> v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      T* d = tp.grad(v);
      for (std::size_t i = 0; i < s.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b, "mul");
  Tape<T>& tp = *a.tape;
  const Shape s = a.shape();
  if (!(s == b.shape())) throw InvalidArgument("mul: " + to_string(s) + " * " + to_string(b.shape()));
  Buffer<T> out(s.size());
  const T* pa = tp.data(a);
  const T* pb = tp.data(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return tp.record(s, std::move(out), {a, b}, [&tp, a, b, s, id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    if (tp.requires_grad(a)) {
      T* d = tp.grad(a);
      const T* pb = tp.data(b);
      for (std::size_t i = 0; i < s.size(); ++i) d[i] += g[i] * pb[i];
    }
    if (tp.requires_grad(b)) {
      T* d = tp.grad(b);
      const T* pa = tp.data(a);
      for (std::size_t i = 0; i < s.size(); ++i) d[i] += g[i] * pa[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tape<T>& tp = *a.tape;
  const Shape s = a.shape();
  Buffer<T> out(s.size());
  const T* pa = tp.data(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * factor;
  return tp.record(s, std::move(out), {a}, [&tp, a, s, factor, id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    T* d = tp.grad(a);
    for (std::size_t i = 0; i < s.size(); ++i) d[i] += g[i] * factor;
  });
}

// x[n x m] + b[1 x m] broadcast over rows.
template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b) {
  detail::require_same_tape(x, b, "add_rowvec");
  Tape<T>& tp = *x.tape;
  const Shape s = x.shape();
  if (b.shape().rows != 1 || b.shape().cols != s.cols) {
    throw InvalidArgument("add_rowvec: " + to_string(s) + " + " + to_string(b.shape()));
  }
  Buffer<T> out(s.size());
  const T* px = tp.data(x);
  const T* pb = tp.data(b);
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) out[r * s.cols + c] = px[r * s.cols + c] + pb[c];
  }
  return tp.record(s, std::move(out), {x, b}, [&tp, x, b, s, id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    if (tp.requires_grad(x)) {
      T* d = tp.grad(x);
      for (std::size_t i = 0; i < s.size(); ++i) d[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      T* d = tp.grad(b);
      for (std::size_t r = 0; r < s.rows; ++r) {
        for (std::size_t c = 0; c < s.cols; ++c) d[c] += g[r * s.cols + c];
      }
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_rowvec(matmul(x, w), b);
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tape<T>& tp = *x.tape;
  const Shape s = x.shape();
  Buffer<T> out(s.size());
  const T* px = tp.data(x);
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * px[i] * (T(1) + std::erf(px[i] * inv_sqrt2));
  }
  return tp.record(s, std::move(out), {x}, [&tp, x, s, inv_sqrt2, id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    const T* px = tp.data(x);
    T* d = tp.grad(x);
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const T v = px[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      d[i] += g[i] * (cdf + v * pdf);
    }
  });
}

// Row-wise layer normalization with gain and bias [1 x m].
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  Tape<T>& tp = *x.tape;
  const Shape s = x.shape();
  if (gain.shape() != Shape{1, s.cols} || bias.shape() != Shape{1, s.cols}) {
    throw InvalidArgument("layer_norm: gain/bias must be [1x" + std::to_string(s.cols) + "]");
  }
  Buffer<T> out(s.size());
  auto xhat = std::make_shared<Buffer<T>>(s.size());
  auto rstd = std::make_shared<Buffer<T>>(s.rows);
  const T* px = tp.data(x);
  const T* pg = tp.data(gain);
  const T* pb = tp.data(bias);
  const T inv_m = T(1) / static_cast<T>(s.cols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const T* row = px + r * s.cols;
    T mean = 0;
    for (std::size_t c = 0; c < s.cols; ++c) mean += row[c];
    mean *= inv_m;
    T var = 0;
    for (std::size_t c = 0; c < s.cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var *= inv_m;
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < s.cols; ++c) {
      const T h = (row[c] - mean) * rs;
      (*xhat)[r * s.cols + c] = h;
      out[r * s.cols + c] = h * pg[c] + pb[c];
    }
  }
  return tp.record(s, std::move(out), {x, gain, bias},
                   [&tp, x, gain, bias, s, xhat, rstd, inv_m, id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    const T* pg = tp.data(gain);
    if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
      T* dg = tp.requires_grad(gain) ? tp.grad(gain) : nullptr;
      T* db = tp.requires_grad(bias) ? tp.grad(bias) : nullptr;
      for (std::size_t r = 0; r < s.rows; ++r) {
        for (std::size_t c = 0; c < s.cols; ++c) {
          const std::size_t i = r * s.cols + c;
          if (dg) dg[c] += g[i] * (*xhat)[i];
          if (db) db[c] += g[i];
        }
      }
    }
    if (tp.requires_grad(x)) {
      T* dx = tp.grad(x);
      for (std::size_t r = 0; r < s.rows; ++r) {
        T mean_dh = 0, mean_dh_h = 0;
        for (std::size_t c = 0; c < s.cols; ++c) {
          const std::size_t i = r * s.cols + c;
          const T dh = g[i] * pg[c];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[i];
        }
        mean_dh *= inv_m;
        mean_dh_h *= inv_m;
        for (std::size_t c = 0; c < s.cols; ++c) {
          const std::size_t i = r * s.cols + c;
          const T dh = g[i] * pg[c];
          dx[i] += (*rstd)[r] * (dh - mean_dh - (*xhat)[i] * mean_dh_h);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Row plumbing.

// out[r] = x[index[r]]; doubles as an embedding lookup.
template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<int> index) {
  Tape<T>& tp = *x.tape;
  const Shape s = x.shape();
  Buffer<T> out(index.size() * s.cols);
  const T* px = tp.data(x);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= s.rows) {
      throw InvalidArgument("gather_rows: index " + std::to_string(index[r]) + " out of " +
                            to_string(s));
    }
    std::copy_n(px + index[r] * s.cols, s.cols, out.data() + r * s.cols);
  }
  const Shape os{index.size(), s.cols};
  return tp.record(os, std::move(out), {x}, [&tp, x, s, index = std::move(index), id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    T* d = tp.grad(x);
    for (std::size_t r = 0; r < index.size(); ++r) {
      T* dst = d + index[r] * s.cols;
      const T* src = g + r * s.cols;
      for (std::size_t c = 0; c < s.cols; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  Tape<T>& tp = *x.tape;
  const Shape s = x.shape();
  if (begin + count > s.rows) throw InvalidArgument("slice_rows: out of range of " + to_string(s));
  const T* px = tp.data(x) + begin * s.cols;
  Buffer<T> out(px, px + count * s.cols);
  return tp.record({count, s.cols}, std::move(out), {x}, [&tp, x, s, begin, count, id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    T* d = tp.grad(x) + begin * s.cols;
    for (std::size_t i = 0; i < count * s.cols; ++i) d[i] += g[i];
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
  Tape<T>& tp = *parts[0].tape;
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.tape != &tp || p.cols() != cols) throw InvalidArgument("concat_rows: incompatible inputs");
    rows += p.rows();
  }
  Buffer<T> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) {
    const T* d = tp.data(p);
    out.insert(out.end(), d, d + p.rows() * cols);
  }
  return tp.record({rows, cols}, std::move(out), parts, [&tp, parts, cols, id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.rows() * cols;
      if (tp.requires_grad(p)) {
        T* d = tp.grad(p);
        for (std::size_t i = 0; i < n; ++i) d[i] += g[off + i];
      }
      off += n;
    }
  });
}

// Sparse row combination: out[o] = sum over entries (o, i, w) of w * x[i].
struct RowMix {
  struct Entry {
    std::size_t out;
    std::size_t in;
    double weight;
  };
  std::size_t out_rows = 0;
  std::vector<Entry> entries;

  void add(std::size_t out, std::size_t in, double w) { entries.push_back({out, in, w}); }

  // Each output row is the mean of the listed input rows.
  static RowMix means(const std::vector<std::vector<std::size_t>>& groups) {
    RowMix m;
    m.out_rows = groups.size();
    for (std::size_t o = 0; o < groups.size(); ++o) {
      for (auto i : groups[o]) m.add(o, i, 1.0 / static_cast<double>(groups[o].size()));
    }
    return m;
  }
};

template <typename T>
Var<T> row_mix(Var<T> x, RowMix mix) {
  Tape<T>& tp = *x.tape;
  const Shape s = x.shape();
  Buffer<T> out(mix.out_rows * s.cols, T(0));
  const T* px = tp.data(x);
  for (const auto& e : mix.entries) {
    if (e.in >= s.rows || e.out >= mix.out_rows) throw InvalidArgument("row_mix: index out of range");
    const T w = static_cast<T>(e.weight);
    for (std::size_t c = 0; c < s.cols; ++c) out[e.out * s.cols + c] += w * px[e.in * s.cols + c];
  }
  const Shape os{mix.out_rows, s.cols};
  return tp.record(os, std::move(out), {x}, [&tp, x, s, mix = std::move(mix), id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    T* d = tp.grad(x);
    for (const auto& e : mix.entries) {
      const T w = static_cast<T>(e.weight);
      for (std::size_t c = 0; c < s.cols; ++c) d[e.in * s.cols + c] += w * g[e.out * s.cols + c];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& tp = *x.tape;
  if (shape.size() != x.shape().size()) {
    throw InvalidArgument("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  const T* px = tp.data(x);
  Buffer<T> out(px, px + shape.size());
  return tp.record(shape, std::move(out), {x}, [&tp, x, n = shape.size(), id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    T* d = tp.grad(x);
    for (std::size_t i = 0; i < n; ++i) d[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses.

template <typename T>
Var<T> sum(Var<T> x) {
  Tape<T>& tp = *x.tape;
  const std::size_t n = x.shape().size();
  const T* px = tp.data(x);
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  return tp.record({1, 1}, Buffer<T>{acc}, {x}, [&tp, x, n, id = tp.size()] {
    const T g = tp.grad({&tp, static_cast<int>(id)})[0];
    T* d = tp.grad(x);
    for (std::size_t i = 0; i < n; ++i) d[i] += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.shape().size();
  return scale(sum(x), n ? T(1) / static_cast<T>(n) : T(0));
}

// Mean over rows of -log softmax(logits[r])[targets[r]]. Zero rows give 0.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& targets) {
  Tape<T>& tp = *logits.tape;
  const Shape s = logits.shape();
  if (targets.size() != s.rows) throw InvalidArgument("softmax_cross_entropy: target count mismatch");
  auto probs = std::make_shared<Buffer<T>>(s.size());
  const T* px = tp.data(logits);
  T total = 0;
  for (std::size_t r = 0; r < s.rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= s.cols) {
      throw InvalidArgument("softmax_cross_entropy: target out of range");
    }
    const T* row = px + r * s.cols;
    T mx = row[0];
    for (std::size_t c = 1; c < s.cols; ++c) mx = std::max(mx, row[c]);
    T z = 0;
    T* pr = probs->data() + r * s.cols;
    for (std::size_t c = 0; c < s.cols; ++c) {
      pr[c] = std::exp(row[c] - mx);
      z += pr[c];
    }
    const T inv_z = T(1) / z;
    for (std::size_t c = 0; c < s.cols; ++c) pr[c] *= inv_z;
    total += std::log(z) + mx - row[targets[r]];
  }
  const T inv_n = s.rows ? T(1) / static_cast<T>(s.rows) : T(0);
  return tp.record({1, 1}, Buffer<T>{total * inv_n}, {logits},
                   [&tp, logits, s, probs, targets, inv_n, id = tp.size()] {
    const T g = tp.grad({&tp, static_cast<int>(id)})[0] * inv_n;
    T* d = tp.grad(logits);
    for (std::size_t r = 0; r < s.rows; ++r) {
      const T* pr = probs->data() + r * s.cols;
      for (std::size_t c = 0; c < s.cols; ++c) d[r * s.cols + c] += g * pr[c];
      d[r * s.cols + targets[r]] -= g;
    }
  });
}

// Mean cross entropy over the selected rows only.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets,
                     const std::vector<int>& positions) {
  std::vector<int> picked;
  picked.reserve(positions.size());
  for (int p : positions) {
    if (p < 0 || static_cast<std::size_t>(p) >= targets.size()) {
      throw InvalidArgument("cross_entropy: position out of range");
    }
    picked.push_back(targets[p]);
  }
  return softmax_cross_entropy(gather_rows(logits, positions), picked);
}

// Row-wise cosine similarity of a[n x d] and b[n x d] -> [n x 1].
template <typename T>
Var<T> cosine_rows(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b, "cosine_rows");
  Tape<T>& tp = *a.tape;
  const Shape s = a.shape();
  if (!(s == b.shape())) throw InvalidArgument("cosine_rows: shape mismatch");
  constexpr T kTiny = std::numeric_limits<T>::min();
  auto norms = std::make_shared<Buffer<T>>(2 * s.rows);
  Buffer<T> out(s.rows);
  const T* pa = tp.data(a);
  const T* pb = tp.data(b);
  for (std::size_t r = 0; r < s.rows; ++r) {
    T dot = 0, na = 0, nb = 0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      const T x = pa[r * s.cols + c], y = pb[r * s.cols + c];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    na = std::sqrt(std::max(na, kTiny));
    nb = std::sqrt(std::max(nb, kTiny));
    (*norms)[2 * r] = na;
    (*norms)[2 * r + 1] = nb;
    out[r] = dot / (na * nb);
  }
  return tp.record({s.rows, 1}, std::move(out), {a, b}, [&tp, a, b, s, norms, id = tp.size()] {
    const Var<T> self{&tp, static_cast<int>(id)};
    const T* g = tp.grad(self);
    const T* cs = tp.data(self);
    const T* pa = tp.data(a);
    const T* pb = tp.data(b);
    T* da = tp.requires_grad(a) ? tp.grad(a) : nullptr;
    T* db = tp.requires_grad(b) ? tp.grad(b) : nullptr;
    for (std::size_t r = 0; r < s.rows; ++r) {
      const T na = (*norms)[2 * r], nb = (*norms)[2 * r + 1], c = cs[r];
      for (std::size_t k = 0; k < s.cols; ++k) {
        const std::size_t i = r * s.cols + k;
        if (da) da[i] += g[r] * (pb[i] / (na * nb) - c * pa[i] / (na * na));
        if (db) db[i] += g[r] * (pa[i] / (na * nb) - c * pb[i] / (nb * nb));
      }
    }
  });
}

// Squared hinge on similarities; row 0 is the positive, the rest negatives:
//   max(eps_pos - s_pos, 0)^2 + mean_j max(s_neg_j - eps_neg, 0)^2
template <typename T>
Var<T> hinge_loss(Var<T> sims, T eps_pos, T eps_neg) {
  Tape<T>& tp = *sims.tape;
  const Shape s = sims.shape();
  if (s.cols != 1 || s.rows < 1) throw InvalidArgument("hinge_loss: expects [m x 1], m >= 1");
  const T* p = tp.data(sims);
  const std::size_t n_neg = s.rows - 1;
  const T inv_neg = n_neg ? T(1) / static_cast<T>(n_neg) : T(0);
  const T pos = std::max(eps_pos - p[0], T(0));
  T neg = 0;
  for (std::size_t j = 1; j < s.rows; ++j) {
    const T h = std::max(p[j] - eps_neg, T(0));
    neg += h * h;
  }
  return tp.record({1, 1}, Buffer<T>{pos * pos + neg * inv_neg}, {sims},
                   [&tp, sims, s, eps_pos, eps_neg, inv_neg, id = tp.size()] {
    const T g = tp.grad({&tp, static_cast<int>(id)})[0];
    const T* p = tp.data(sims);
    T* d = tp.grad(sims);
    d[0] += g * T(-2) * std::max(eps_pos - p[0], T(0));
    for (std::size_t j = 1; j < s.rows; ++j) {
      d[j] += g * T(2) * std::max(p[j] - eps_neg, T(0)) * inv_neg;
    }
  });
}

}  // namespace cerespt::nn
