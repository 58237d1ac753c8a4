// Copyright 2026 The edit3k Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// Tape-based reverse-mode automatic differentiation over BasicTensor<T>.
//
// A Graph records every op in creation order, which is a topological order,
// so backward() is a single reverse sweep. Parameters live outside the graph
// and receive their gradient through Graph::param() leaves.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edit3k/tensor.hpp"

namespace edit3k {

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, BasicTensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { std::fill(grad.storage().begin(), grad.storage().end(), T(0)); }
};

namespace ad {

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

// --- dense kernels ---------------------------------------------------------

namespace kernel {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

}  // namespace kernel

// --- graph -----------------------------------------------------------------

template <typename T>
class Graph {
 public:
  struct Node {
    BasicTensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::string_view op;
    std::function<void(Graph&, std::size_t)> backward;
    Parameter<T>* param = nullptr;
    std::vector<T> saved;
    std::vector<std::uint8_t> flags;
  };

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(BasicTensor<T> value) {
    return push("constant", std::move(value), false);
  }

  Var<T> leaf(BasicTensor<T> value) {
    return push("leaf", std::move(value), grad_enabled_);
  }

  /// Registers a parameter; backward() adds into p.grad.
  Var<T> param(Parameter<T>& p) {
    auto v = push("param", p.value, grad_enabled_);
    nodes_[v.id].param = &p;
    return v;
  }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const Node& node(Var<T> v) const { return nodes_.at(v.id); }
  Node& node_mut(std::size_t id) { return nodes_[id]; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() w.r.t. v (zeros if none reached it).
  BasicTensor<T> grad(Var<T> v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty()) return BasicTensor<T>(n.value.shape());
    return BasicTensor<T>(n.value.shape(), n.grad);
  }

  /// Records an op result. `backward` is dropped when no input needs grad.
  Var<T> record(std::string_view op, BasicTensor<T> value,
                std::initializer_list<Var<T>> parents,
                std::function<void(Graph&, std::size_t)> backward) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || nodes_[p.id].requires_grad;
    return record_impl(op, std::move(value), rg && grad_enabled_,
                       std::move(backward));
  }

  Var<T> record_many(std::string_view op, BasicTensor<T> value,
                     const std::vector<Var<T>>& parents,
                     std::function<void(Graph&, std::size_t)> backward) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || nodes_[p.id].requires_grad;
    return record_impl(op, std::move(value), rg && grad_enabled_,
                       std::move(backward));
  }

  /// Gradient buffer of node `id`, allocated on first use. Empty span when
  /// the node does not require grad.
  std::span<T> grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  std::span<const T> out_grad(std::size_t id) const { return nodes_[id].grad; }

  void backward(Var<T> loss) {
    if (loss.graph != this) throw std::logic_error("backward: foreign variable");
    auto& ln = nodes_.at(loss.id);
    if (ln.value.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(ln.value.shape()));
    }
    if (backward_done_) {
      throw std::logic_error("backward: already run on this graph; call reset()");
    }
    backward_done_ = true;
    if (!ln.requires_grad) return;
    grad_buffer(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& pg = n.param->grad.storage();
        for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
      }
    }
  }

  /// Clears gradients so backward() may run again on the same tape.
  void reset() {
    for (auto& n : nodes_) n.grad.clear();
    backward_done_ = false;
  }

 private:
  Var<T> push(std::string_view op, BasicTensor<T> value, bool rg) {
    return record_impl(op, std::move(value), rg, nullptr);
  }

  Var<T> record_impl(std::string_view op, BasicTensor<T> value, bool rg,
                     std::function<void(Graph&, std::size_t)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.op = op;
    if (rg) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

// --- primitives ------------------------------------------------------------

namespace detail {

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a,
                                     const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
Graph<T>& same_graph(Var<T> a, Var<T> b) {
  if (a.graph != b.graph) throw std::logic_error("ops on different graphs");
  return *a.graph;
}

inline std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = detail::same_graph(a, b);
  if (a.shape() != b.shape()) detail::shape_error("add", a.shape(), b.shape());
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record("add", std::move(out), {a, b},
                  [ia = a.id, ib = b.id](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    for (auto id : {ia, ib}) {
                      auto d = g.grad_buffer(id);
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i];
                    }
                  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = detail::same_graph(a, b);
  if (a.shape() != b.shape()) detail::shape_error("sub", a.shape(), b.shape());
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.record("sub", std::move(out), {a, b},
                  [ia = a.id, ib = b.id](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto da = g.grad_buffer(ia);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[i];
                    auto db = g.grad_buffer(ib);
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] -= go[i];
                  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = detail::same_graph(a, b);
  if (a.shape() != b.shape()) detail::shape_error("mul", a.shape(), b.shape());
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record("mul", std::move(out), {a, b},
                  [ia = a.id, ib = b.id](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    const auto& av = g.node_mut(ia).value;
                    const auto& bv = g.node_mut(ib).value;
                    auto da = g.grad_buffer(ia);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[i] * bv[i];
                    auto db = g.grad_buffer(ib);
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] += go[i] * av[i];
                  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  auto& g = *a.graph;
  BasicTensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return g.record("scale", std::move(out), {a},
                  [ia = a.id, s](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto da = g.grad_buffer(ia);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * go[i];
                  });
}

/// x[..., N] + bias[N]: the only broadcasting the engine supports.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  auto& g = detail::same_graph(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.ndim() != 1 || bv.size() != xv.cols()) {
    detail::shape_error("add_bias", xv.shape(), bv.shape());
  }
  BasicTensor<T> out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  return g.record("add_bias", std::move(out), {x, bias},
                  [ix = x.id, ib = bias.id, n](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto dx = g.grad_buffer(ix);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go[i];
                    auto db = g.grad_buffer(ib);
                    if (!db.empty()) {
                      for (std::size_t i = 0; i < go.size(); ++i) db[i % n] += go[i];
                    }
                  });
}

/// a[..., K] x b[K, N] -> [..., N]; leading axes of `a` are flattened.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& g = detail::same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (bv.ndim() != 2 || av.cols() != bv.dim(0)) {
    detail::shape_error("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.rows(), k = bv.dim(0), n = bv.dim(1);
  Shape os = av.shape();
  os.back() = n;
  BasicTensor<T> out(os);
  kernel::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record("matmul", std::move(out), {a, b},
                  [ia = a.id, ib = b.id, m, k, n](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto da = g.grad_buffer(ia);
                    if (!da.empty()) {
                      kernel::gemm_nt(go.data(), g.node_mut(ib).value.data().data(),
                                      da.data(), m, n, k);
                    }
                    auto db = g.grad_buffer(ib);
                    if (!db.empty()) {
                      kernel::gemm_tn(g.node_mut(ia).value.data().data(), go.data(),
                                      db.data(), m, k, n);
                    }
                  });
}

/// a[M, K] x b[N, K]^T -> [M, N]
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  auto& g = detail::same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(1)) {
    detail::shape_error("matmul_nt", av.shape(), bv.shape());
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  BasicTensor<T> out({m, n});
  kernel::gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record("matmul_nt", std::move(out), {a, b},
                  [ia = a.id, ib = b.id, m, k, n](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto da = g.grad_buffer(ia);
                    if (!da.empty()) {
                      kernel::gemm_nn(go.data(), g.node_mut(ib).value.data().data(),
                                      da.data(), m, n, k);
                    }
                    auto db = g.grad_buffer(ib);
                    if (!db.empty()) {
                      kernel::gemm_tn(go.data(), g.node_mut(ia).value.data().data(),
                                      db.data(), m, n, k);
                    }
                  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  auto& g = *a.graph;
  auto out = a.value().reshaped(std::move(shape));
  return g.record("reshape", std::move(out), {a},
                  [ia = a.id](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto da = g.grad_buffer(ia);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[i];
                  });
}

/// Concatenates along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  auto& g = *parts[0].graph;
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range");
  Shape os = s0;
  os[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (p.graph != &g) throw std::logic_error("concat: mixed graphs");
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) detail::shape_error("concat", s0, s);
    os[axis] += s[axis];
  }
  const std::size_t outer = detail::prod(s0, 0, axis);
  const std::size_t inner = detail::prod(s0, axis + 1, s0.size());
  BasicTensor<T> out(os);
  std::vector<std::size_t> widths;
  std::size_t total = os[axis] * inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const auto& pv = p.value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data().data() + o * w, w, out.data().data() + o * total + offset);
    widths.push_back(w);
    offset += w;
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return g.record_many(
      "concat", std::move(out), parts,
      [ids, widths, outer, total](Graph<T>& g, std::size_t self) {
        auto go = g.out_grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          auto d = g.grad_buffer(ids[k]);
          const std::size_t w = widths[k];
          if (!d.empty()) {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t j = 0; j < w; ++j) d[o * w + j] += go[o * total + offset + j];
          }
          offset += w;
        }
      });
}

/// a[..., begin:end, ...] along `axis`.
template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  auto& g = *a.graph;
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") invalid on axis " +
                                std::to_string(axis) + " of " + shape_str(s));
  }
  const std::size_t outer = detail::prod(s, 0, axis);
  const std::size_t inner = detail::prod(s, axis + 1, s.size());
  const std::size_t full = s[axis] * inner;
  const std::size_t w = (end - begin) * inner;
  const std::size_t off = begin * inner;
  Shape os = s;
  os[axis] = end - begin;
  BasicTensor<T> out(os);
  const auto& av = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.data().data() + o * full + off, w, out.data().data() + o * w);
  return g.record("slice", std::move(out), {a},
                  [ia = a.id, outer, full, w, off](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto d = g.grad_buffer(ia);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t j = 0; j < w; ++j) d[o * full + off + j] += go[o * w + j];
                  });
}

/// Stacks `n` copies of `a` along a new leading axis.
template <typename T>
Var<T> repeat(Var<T> a, std::size_t n) {
  auto& g = *a.graph;
  if (n == 0) throw std::invalid_argument("repeat: n must be positive");
  const auto& av = a.value();
  Shape os{n};
  os.insert(os.end(), av.shape().begin(), av.shape().end());
  BasicTensor<T> out(os);
  const std::size_t w = av.size();
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(av.data().data(), w, out.data().data() + r * w);
  return g.record("repeat", std::move(out), {a},
                  [ia = a.id, n, w](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto d = g.grad_buffer(ia);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t j = 0; j < w; ++j) d[j] += go[r * w + j];
                  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  auto& g = *a.graph;
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  return g.record("sum", BasicTensor<T>({1}, {acc}), {a},
                  [ia = a.id](Graph<T>& g, std::size_t self) {
                    const T go = g.out_grad(self)[0];
                    for (auto& d : g.grad_buffer(ia)) d += go;
                  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

/// Mean over one axis; the axis is removed from the shape.
template <typename T>
Var<T> mean_axis(Var<T> a, std::size_t axis) {
  auto& g = *a.graph;
  const Shape& s = a.shape();
  if (axis >= s.size()) throw std::invalid_argument("mean_axis: axis out of range");
  const std::size_t outer = detail::prod(s, 0, axis);
  const std::size_t inner = detail::prod(s, axis + 1, s.size());
  const std::size_t len = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  BasicTensor<T> out(os);
  const auto& av = a.value();
  const T inv = T(1) / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t j = 0; j < inner; ++j)
        out[o * inner + j] += av[(o * len + l) * inner + j] * inv;
  return g.record("mean_axis", std::move(out), {a},
                  [ia = a.id, outer, inner, len, inv](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto d = g.grad_buffer(ia);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t l = 0; l < len; ++l)
                        for (std::size_t j = 0; j < inner; ++j)
                          d[(o * len + l) * inner + j] += go[o * inner + j] * inv;
                  });
}

template <typename T>
Var<T> exp(Var<T> a) {
  auto& g = *a.graph;
  BasicTensor<T> out = a.value();
  for (auto& v : out.storage()) v = std::exp(v);
  return g.record("exp", std::move(out), {a},
                  [ia = a.id](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    const auto& y = g.node_mut(self).value;
                    auto d = g.grad_buffer(ia);
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i] * y[i];
                  });
}

template <typename T>
Var<T> log(Var<T> a) {
  auto& g = *a.graph;
  BasicTensor<T> out = a.value();
  for (auto& v : out.storage()) {
    if (!(v > T(0))) throw std::domain_error("log: non-positive input");
    v = std::log(v);
  }
  return g.record("log", std::move(out), {a},
                  [ia = a.id](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    const auto& x = g.node_mut(ia).value;
                    auto d = g.grad_buffer(ia);
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[i] / x[i];
                  });
}

/// Row-wise softmax over the last axis, max-subtracted.
template <typename T>
Var<T> softmax(Var<T> a) {
  auto& g = *a.graph;
  BasicTensor<T> out = a.value();
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    T mx = *std::max_element(row.begin(), row.end());
    T s = 0;
    for (auto& v : row) s += (v = std::exp(v - mx));
    for (auto& v : row) v /= s;
  }
  return g.record("softmax", std::move(out), {a},
                  [ia = a.id, n](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    const auto& y = g.node_mut(self).value;
                    auto d = g.grad_buffer(ia);
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      T dot = 0;
                      for (std::size_t j = 0; j < n; ++j) dot += go[r * n + j] * y[r * n + j];
                      for (std::size_t j = 0; j < n; ++j)
                        d[r * n + j] += y[r * n + j] * (go[r * n + j] - dot);
                    }
                  });
}

/// Row-wise log-softmax over the last axis, max-subtracted.
template <typename T>
Var<T> log_softmax(Var<T> a) {
  auto& g = *a.graph;
  BasicTensor<T> out = a.value();
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    T mx = *std::max_element(row.begin(), row.end());
    T s = 0;
    for (T v : row) s += std::exp(v - mx);
    const T lse = mx + std::log(s);
    for (auto& v : row) v -= lse;
  }
  return g.record("log_softmax", std::move(out), {a},
                  [ia = a.id, n](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    const auto& y = g.node_mut(self).value;
                    auto d = g.grad_buffer(ia);
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      T gs = 0;
                      for (std::size_t j = 0; j < n; ++j) gs += go[r * n + j];
                      for (std::size_t j = 0; j < n; ++j)
                        d[r * n + j] += go[r * n + j] - std::exp(y[r * n + j]) * gs;
                    }
                  });
}

/// out[i] = a[i, index[i]] for a 2-D input.
template <typename T>
Var<T> pick(Var<T> a, std::vector<std::size_t> index) {
  auto& g = *a.graph;
  const auto& av = a.value();
  if (av.ndim() != 2 || index.size() != av.dim(0)) {
    detail::shape_error("pick", av.shape(), Shape{index.size()});
  }
  const std::size_t n = av.dim(1);
  BasicTensor<T> out({index.size()});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw std::out_of_range("pick: index out of range");
    out[i] = av[i * n + index[i]];
  }
  return g.record("pick", std::move(out), {a},
                  [ia = a.id, index = std::move(index), n](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    auto d = g.grad_buffer(ia);
                    for (std::size_t i = 0; i < index.size(); ++i) d[i * n + index[i]] += go[i];
                  });
}

/// Layer normalization over the last axis with learned gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  auto& g = *x.graph;
  const auto& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    detail::shape_error("layer_norm", xv.shape(), gain.shape());
  }
  const std::size_t rows = xv.rows();
  BasicTensor<T> out(xv.shape());
  // saved: normalized activations followed by per-row reciprocal std
  std::vector<T> saved(rows * n + rows);
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data().data() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    const T rstd = T(1) / std::sqrt(var + eps);
    saved[rows * n + r] = rstd;
    for (std::size_t j = 0; j < n; ++j) {
      const T xh = (xr[j] - mu) * rstd;
      saved[r * n + j] = xh;
      out[r * n + j] = xh * gv[j] + bv[j];
    }
  }
  auto v = g.record(
      "layer_norm", std::move(out), {x, gain, bias},
      [ix = x.id, ig = gain.id, ib = bias.id, n, rows](Graph<T>& g, std::size_t self) {
        auto go = g.out_grad(self);
        const auto& saved = g.node_mut(self).saved;
        const auto& gv = g.node_mut(ig).value;
        auto dx = g.grad_buffer(ix);
        auto dg = g.grad_buffer(ig);
        auto db = g.grad_buffer(ib);
        std::vector<T> dxh(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xh = saved.data() + r * n;
          const T rstd = saved[rows * n + r];
          T m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const T gy = go[r * n + j];
            if (!dg.empty()) dg[j] += gy * xh[j];
            if (!db.empty()) db[j] += gy;
            dxh[j] = gy * gv[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
          }
          if (dx.empty()) continue;
          m1 /= static_cast<T>(n);
          m2 /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j)
            dx[r * n + j] += rstd * (dxh[j] - m1 - xh[j] * m2);
        }
      });
  if (g.requires_grad(v.id)) g.node_mut(v.id).saved = std::move(saved);
  return v;
}

/// GELU with the exact erf form.
template <typename T>
Var<T> gelu(Var<T> a) {
  auto& g = *a.graph;
  BasicTensor<T> out = a.value();
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (auto& v : out.storage()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return g.record("gelu", std::move(out), {a},
                  [ia = a.id, inv_sqrt2](Graph<T>& g, std::size_t self) {
                    auto go = g.out_grad(self);
                    const auto& x = g.node_mut(ia).value;
                    auto d = g.grad_buffer(ia);
                    const T c = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
                    for (std::size_t i = 0; i < d.size(); ++i) {
                      const T xv = x[i];
                      const T cdf = T(0.5) * (T(1) + std::erf(xv * inv_sqrt2));
                      d[i] += go[i] * (cdf + xv * c * std::exp(T(-0.5) * xv * xv));
                    }
                  });
}

/// Rows with norm below this are treated as degenerate by l2_normalize.
inline constexpr double kDegenerateNorm = 1e-8;

/// Row-wise l2 normalization over the last axis. Rows with norm < 1e-8 map to
/// zero, pass no gradient, and are flagged (see degenerate_rows()).
template <typename T>
Var<T> l2_normalize(Var<T> a) {
  auto& g = *a.graph;
  BasicTensor<T> out = a.value();
  const std::size_t n = out.cols(), rows = out.rows();
  std::vector<T> inv_norm(rows, T(0));
  std::vector<std::uint8_t> flags(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = out.row(r);
    T ss = 0;
    for (T v : row) ss += v * v;
    const T nrm = std::sqrt(ss);
    if (nrm < static_cast<T>(kDegenerateNorm)) {
      std::fill(row.begin(), row.end(), T(0));
      flags[r] = 1;
    } else {
      inv_norm[r] = T(1) / nrm;
      for (auto& v : row) v *= inv_norm[r];
    }
  }
  auto v = g.record("l2_normalize", std::move(out), {a},
                    [ia = a.id, n, rows](Graph<T>& g, std::size_t self) {
                      auto go = g.out_grad(self);
                      const auto& node = g.node_mut(self);
                      const auto& y = node.value;
                      auto d = g.grad_buffer(ia);
                      for (std::size_t r = 0; r < rows; ++r) {
                        const T inv = node.saved[r];
                        if (inv == T(0)) continue;
                        T dot = 0;
                        for (std::size_t j = 0; j < n; ++j) dot += y[r * n + j] * go[r * n + j];
                        for (std::size_t j = 0; j < n; ++j)
                          d[r * n + j] += inv * (go[r * n + j] - y[r * n + j] * dot);
                      }
                    });
  auto& node = g.node_mut(v.id);
  node.saved = std::move(inv_norm);
  node.flags = std::move(flags);
  return v;
}

template <typename T>
std::vector<bool> degenerate_rows(Var<T> v) {
  const auto& f = v.graph->node(v).flags;
  return std::vector<bool>(f.begin(), f.end());
}

/// Multi-head scaled-dot-product attention.
/// q: [B, Lq, D], k and v: [B, Lk, D]; heads split D into contiguous chunks.
/// Attention probabilities [B, heads, Lq, Lk] are kept on the node and can be
/// read back with attention_probs().
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
  auto& g = *q.graph;
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  if (qv.ndim() != 3 || kv.ndim() != 3 || kv.shape() != vv.shape() ||
      qv.dim(0) != kv.dim(0) || qv.dim(2) != kv.dim(2)) {
    detail::shape_error("attention", qv.shape(), kv.shape());
  }
  const std::size_t b = qv.dim(0), lq = qv.dim(1), lk = kv.dim(1), d = qv.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("attention: dim " + std::to_string(d) +
                                " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  BasicTensor<T> out(qv.shape());
  std::vector<T> probs(b * heads * lq * lk);
  for (std::size_t bi = 0; bi < b; ++bi) {
    const T* qb = qv.data().data() + bi * lq * d;
    const T* kb = kv.data().data() + bi * lk * d;
    const T* vb = vv.data().data() + bi * lk * d;
    T* ob = out.data().data() + bi * lq * d;
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + ((bi * heads + h) * lq) * lk;
      for (std::size_t i = 0; i < lq; ++i) {
        T* pi = p + i * lk;
        const T* qi = qb + i * d + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < lk; ++j) {
          const T* kj = kb + j * d + h * dh;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          pi[j] = s * sc;
          mx = std::max(mx, pi[j]);
        }
        T tot = 0;
        for (std::size_t j = 0; j < lk; ++j) tot += (pi[j] = std::exp(pi[j] - mx));
        for (std::size_t j = 0; j < lk; ++j) pi[j] /= tot;
        T* oi = ob + i * d + h * dh;
        for (std::size_t j = 0; j < lk; ++j) {
          const T w = pi[j];
          const T* vj = vb + j * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }
  auto res = g.record(
      "attention", std::move(out), {q, k, v},
      [iq = q.id, ik = k.id, iv = v.id, b, lq, lk, d, heads, dh, sc](Graph<T>& g,
                                                                     std::size_t self) {
        auto go = g.out_grad(self);
        const auto& probs = g.node_mut(self).saved;
        const T* qd = g.node_mut(iq).value.data().data();
        const T* kd = g.node_mut(ik).value.data().data();
        const T* vd = g.node_mut(iv).value.data().data();
        auto dq = g.grad_buffer(iq);
        auto dk = g.grad_buffer(ik);
        auto dv = g.grad_buffer(iv);
        std::vector<T> dp(lk);
        for (std::size_t bi = 0; bi < b; ++bi) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + ((bi * heads + h) * lq) * lk;
            for (std::size_t i = 0; i < lq; ++i) {
              const T* pi = p + i * lk;
              const T* gi = go.data() + (bi * lq + i) * d + h * dh;
              T dot = 0;
              for (std::size_t j = 0; j < lk; ++j) {
                const T* vj = vd + (bi * lk + j) * d + h * dh;
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                dp[j] = s;
                dot += s * pi[j];
                if (!dv.empty()) {
                  T* dvj = dv.data() + (bi * lk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += pi[j] * gi[c];
                }
              }
              const T* qi = qd + (bi * lq + i) * d + h * dh;
              for (std::size_t j = 0; j < lk; ++j) {
                const T ds = pi[j] * (dp[j] - dot) * sc;
                if (ds == T(0)) continue;
                if (!dq.empty()) {
                  const T* kj = kd + (bi * lk + j) * d + h * dh;
                  T* dqi = dq.data() + (bi * lq + i) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                }
                if (!dk.empty()) {
                  T* dkj = dk.data() + (bi * lk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
  g.node_mut(res.id).saved = std::move(probs);
  return res;
}

/// Probabilities [B, heads, Lq, Lk] recorded by an attention() node.
template <typename T>
BasicTensor<T> attention_probs(Var<T> v, std::size_t heads) {
  const auto& node = v.graph->node(v);
  if (node.op != "attention") throw std::invalid_argument("attention_probs: not an attention node");
  const std::size_t b = node.value.dim(0), lq = node.value.dim(1);
  const std::size_t lk = node.saved.size() / (b * heads * lq);
  return BasicTensor<T>({b, heads, lq, lk}, node.saved);
}

}  // namespace ad
}  // namespace edit3k
