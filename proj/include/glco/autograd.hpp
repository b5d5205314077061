#pragma once

// Tape-based reverse-mode differentiation. A Graph records every produced
// tensor together with its inputs and backward rule; backward() walks the
// tape in reverse, so topological order is the append order.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glco/error.hpp"
#include "glco/kernels.hpp"
#include "glco/tensor.hpp"

namespace glco {

template <class T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
};

enum class FiniteCheck { kThrow, kReport };

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  explicit Graph(FiniteCheck mode = FiniteCheck::kThrow) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    check_finite("leaf", value);
    nodes_.push_back(Node{"leaf", std::move(value), {}, {}, {}, requires_grad});
    return {this, nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends a derived node. The backward rule runs only when some input
  /// requires a gradient.
  Var<T> record(std::string op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward) {
    return record(std::move(op), std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
  }

  Var<T> record(std::string op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn backward) {
    check_finite(op, value);
    Node n{std::move(op), std::move(value), {}, {}, std::move(backward), false};
    n.inputs.reserve(inputs.size());
    for (const auto& v : inputs) {
      if (v.graph != this) throw ContractError("record: input belongs to a different graph");
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator for a node, zero-initialised on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  const Tensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  /// Returns the gradient of the last backward() w.r.t. v (zeros if v was
  /// unreachable from the loss).
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.graph != this) throw ContractError("backward: loss belongs to a different graph");
    if (nodes_[loss.id].value.size() != 1 || nodes_[loss.id].value.rank() != 0)
      throw ContractError("backward: loss must be a 0-dimensional scalar, got " +
                          shape_str(nodes_[loss.id].value.shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad || !n.backward) continue;
      if (!corrupt_op_.empty() && n.op == corrupt_op_)
        for (auto& g : n.grad.data()) g *= T(1.25);
      n.backward(*this, i);
    }
  }

  /// Test fixture: scales the upstream gradient of every node of kind `op`
  /// before its backward rule runs.
  void corrupt_backward(std::string op) { corrupt_op_ = std::move(op); }

  std::size_t nonfinite_events() const noexcept { return nonfinite_events_; }
  FiniteCheck finite_mode() const noexcept { return mode_; }

 private:
  void check_finite(const std::string& op, const Tensor<T>& v) {
    if (v.all_finite()) return;
    ++nonfinite_events_;
    if (mode_ == FiniteCheck::kThrow)
      throw NumericError("non-finite value produced by '" + op + "'");
  }

  std::deque<Node> nodes_;  // stable references: value() stays valid as the tape grows
  FiniteCheck mode_;
  std::size_t nonfinite_events_ = 0;
  std::string corrupt_op_;
};

namespace detail {
template <class T>
void same_graph(Var<T> a, Var<T> b, const char* op) {
  if (a.graph != b.graph || !a.graph)
    throw ContractError(std::string(op) + ": operands from different graphs");
}

template <class T>
void same_shape(Var<T> a, Var<T> b, const char* op) {
  same_graph(a, b, op);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + " (only exact-shape operands are allowed)");
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src, T factor = T(1)) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}
}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "add");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return a.graph->record("add", std::move(y), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    if (g.needs_grad(a.id)) detail::accumulate(g.grad_buffer(a.id), gy);
    if (g.needs_grad(b.id)) detail::accumulate(g.grad_buffer(b.id), gy);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "sub");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.graph->record("sub", std::move(y), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    if (g.needs_grad(a.id)) detail::accumulate(g.grad_buffer(a.id), gy);
    if (g.needs_grad(b.id)) detail::accumulate(g.grad_buffer(b.id), gy, T(-1));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "mul");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.graph->record("mul", std::move(y), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    if (g.needs_grad(a.id)) {
      auto& ga = g.grad_buffer(a.id);
      const auto& bv = g.value(b.id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.needs_grad(b.id)) {
      auto& gb = g.grad_buffer(b.id);
      const auto& av = g.value(a.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <class T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> y = a.value();
  for (auto& v : y.data()) v *= s;
  return a.graph->record("scale", std::move(y), {a}, [a, s](Graph<T>& g, std::size_t self) {
    detail::accumulate(g.grad_buffer(a.id), g.upstream(self), s);
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> y = a.value();
  for (auto& v : y.data()) v += s;
  return a.graph->record("add_scalar", std::move(y), {a}, [a](Graph<T>& g, std::size_t self) {
    detail::accumulate(g.grad_buffer(a.id), g.upstream(self));
  });
}

/// x [b,C,h,w] scaled at every channel by gate [b,1,h,w].
template <class T>
Var<T> mul_channel_broadcast(Var<T> x, Var<T> gate) {
  detail::same_graph(x, gate, "mul_channel_broadcast");
  const auto& xs = x.shape();
  const auto& gs = gate.shape();
  if (xs.size() != 4 || gs.size() != 4 || gs[1] != 1 || gs[0] != xs[0] || gs[2] != xs[2] ||
      gs[3] != xs[3])
    throw DimensionError("mul_channel_broadcast: " + shape_str(xs) + " by " + shape_str(gs));
  const std::size_t B = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor<T> y = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) y[(b * C + c) * HW + p] *= gate.value()[b * HW + p];
  return x.graph->record("mul_channel_broadcast", std::move(y), {x, gate},
                         [x, gate, B, C, HW](Graph<T>& g, std::size_t self) {
                           const auto& gy = g.upstream(self);
                           const auto& xv = g.value(x.id);
                           const auto& gv = g.value(gate.id);
                           if (g.needs_grad(x.id)) {
                             auto& gx = g.grad_buffer(x.id);
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t c = 0; c < C; ++c)
                                 for (std::size_t p = 0; p < HW; ++p) {
                                   const std::size_t i = (b * C + c) * HW + p;
                                   gx[i] += gy[i] * gv[b * HW + p];
                                 }
                           }
                           if (g.needs_grad(gate.id)) {
                             auto& gg = g.grad_buffer(gate.id);
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t c = 0; c < C; ++c)
                                 for (std::size_t p = 0; p < HW; ++p) {
                                   const std::size_t i = (b * C + c) * HW + p;
                                   gg[b * HW + p] += gy[i] * xv[i];
                                 }
                           }
                         });
}

template <class T>
Var<T> gelu(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = kernels::gelu(v);
  return x.graph->record("gelu", std::move(y), {x}, [x](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    const auto& xv = g.value(x.id);
    auto& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * kernels::gelu_grad(xv[i]);
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = kernels::sigmoid(v);
  return x.graph->record("sigmoid", std::move(y), {x}, [x](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    const auto& yv = g.node(self).value;
    auto& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
  });
}

/// Reverse attention gate 1 - sigmoid(x).
template <class T>
Var<T> reverse_sigmoid(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = kernels::sigmoid(-v);
  return x.graph->record("reverse_sigmoid", std::move(y), {x}, [x](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    const auto& yv = g.node(self).value;
    auto& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= gy[i] * yv[i] * (T(1) - yv[i]);
  });
}

// ---- reductions and shape ops ---------------------------------------------

template <class T>
Var<T> sum(Var<T> x) {
  return x.graph->record("sum", Tensor<T>::scalar(x.value().sum()), {x},
                         [x](Graph<T>& g, std::size_t self) {
                           const T gy = g.upstream(self)[0];
                           for (auto& v : g.grad_buffer(x.id).data()) v += gy;
                         });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / T(x.value().size()));
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return x.graph->record("reshape", std::move(y), {x}, [x](Graph<T>& g, std::size_t self) {
    detail::accumulate(g.grad_buffer(x.id), g.upstream(self));
  });
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <class T>
Var<T> transpose(Var<T> x) {
  const auto& s = x.shape();
  if (s.size() != 2 && s.size() != 3) throw DimensionError("transpose: rank must be 2 or 3");
  const std::size_t B = s.size() == 3 ? s[0] : 1;
  const std::size_t M = s[s.size() - 2], N = s[s.size() - 1];
  Shape out = s;
  std::swap(out[out.size() - 1], out[out.size() - 2]);
  Tensor<T> y(out);
  const auto& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) y[b * M * N + j * M + i] = xv[b * M * N + i * N + j];
  return x.graph->record("transpose", std::move(y), {x}, [x, B, M, N](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    auto& gx = g.grad_buffer(x.id);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) gx[b * M * N + i * N + j] += gy[b * M * N + j * M + i];
  });
}

/// Concatenation of rank-4 tensors along the channel axis.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.size() != 4) throw DimensionError("concat_channels: inputs must be rank 4");
  std::size_t C = 0;
  for (const auto& p : parts) {
    detail::same_graph(parts[0], p, "concat_channels");
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw DimensionError("concat_channels: " + shape_str(s) + " incompatible with " + shape_str(s0));
    C += s[1];
  }
  if (parts.size() == 1) return parts[0];
  const std::size_t B = s0[0], HW = s0[2] * s0[3];
  Tensor<T> y({B, C, s0[2], s0[3]});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pc = p.dim(1);
    const auto& v = p.value();
    for (std::size_t b = 0; b < B; ++b)
      std::copy(v.ptr() + b * pc * HW, v.ptr() + (b + 1) * pc * HW, y.ptr() + (b * C + off) * HW);
    off += pc;
  }
  return parts[0].graph->record(
      "concat", std::move(y), parts, [parts, offsets, B, C, HW](Graph<T>& g, std::size_t self) {
        const auto& gy = g.upstream(self);
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (!g.needs_grad(parts[k].id)) continue;
          auto& gp = g.grad_buffer(parts[k].id);
          const std::size_t pc = gp.dim(1);
          for (std::size_t b = 0; b < B; ++b) {
            const T* src = gy.ptr() + (b * C + offsets[k]) * HW;
            T* dst = gp.ptr() + b * pc * HW;
            for (std::size_t i = 0; i < pc * HW; ++i) dst[i] += src[i];
          }
        }
      });
}

template <class T>
Var<T> slice_channels(Var<T> x, std::size_t start, std::size_t count) {
  const Shape& s = x.shape();
  if (s.size() != 4 || count == 0 || start + count > s[1])
    throw DimensionError("slice_channels: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + shape_str(s));
  const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> y({B, count, s[2], s[3]});
  for (std::size_t b = 0; b < B; ++b)
    std::copy(x.value().ptr() + (b * C + start) * HW, x.value().ptr() + (b * C + start + count) * HW,
              y.ptr() + b * count * HW);
  return x.graph->record("slice_channels", std::move(y), {x},
                         [x, start, count, B, C, HW](Graph<T>& g, std::size_t self) {
                           const auto& gy = g.upstream(self);
                           auto& gx = g.grad_buffer(x.id);
                           for (std::size_t b = 0; b < B; ++b)
                             for (std::size_t i = 0; i < count * HW; ++i)
                               gx[(b * C + start) * HW + i] += gy[b * count * HW + i];
                         });
}

// ---- linear algebra ---------------------------------------------------------

namespace detail {
// C[b] (+)= A[b] * B[b] with optional transposes, row-major.
template <class T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a, bool ta,
          const T* b, bool tb, T* c) {
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T* A = a + bi * m * k;
    const T* Bm = b + bi * k * n;
    T* Cm = c + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t t = 0; t < k; ++t) {
        const T av = ta ? A[t * m + i] : A[i * k + t];
        if (av == T(0)) continue;
        T* crow = Cm + i * n;
        if (!tb) {
          const T* brow = Bm + t * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        } else {
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * Bm[j * k + t];
        }
      }
    }
  }
}
}  // namespace detail

/// [m,k] x [k,n] or batched [B,m,k] x [B,k,n].
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_graph(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched = sa.size() == 3;
  if ((sa.size() != 2 && sa.size() != 3) || sb.size() != sa.size() ||
      (batched && sa[0] != sb[0]) || sa[sa.size() - 1] != sb[sb.size() - 2])
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t B = batched ? sa[0] : 1;
  const std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1], n = sb[sb.size() - 1];
  Tensor<T> y(batched ? Shape{B, m, n} : Shape{m, n});
  detail::gemm(B, m, n, k, a.value().ptr(), false, b.value().ptr(), false, y.ptr());
  return a.graph->record("matmul", std::move(y), {a, b}, [a, b, B, m, n, k](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    // dA = dC B^T, dB = A^T dC
    if (g.needs_grad(a.id))
      detail::gemm(B, m, k, n, gy.ptr(), false, g.value(b.id).ptr(), true, g.grad_buffer(a.id).ptr());
    if (g.needs_grad(b.id))
      detail::gemm(B, k, n, m, g.value(a.id).ptr(), true, gy.ptr(), false, g.grad_buffer(b.id).ptr());
  });
}

template <class T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor<T> y(s);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= z;
    }
  return x.graph->record("softmax", std::move(y), {x}, [x, outer, inner, len](Graph<T>& g, std::size_t self) {
    const auto& gy = g.upstream(self);
    const auto& yv = g.node(self).value;
    auto& gx = g.grad_buffer(x.id);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += gy[base + j * inner] * yv[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          gx[i] += yv[i] * (gy[i] - dot);
        }
      }
  });
}

// ---- image kernels ----------------------------------------------------------

template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, const ConvSpec& spec) {
  detail::same_graph(x, weight, "conv2d");
  const Tensor<T>* bv = bias ? &bias->value() : nullptr;
  Tensor<T> y = kernels::conv2d(x.value(), spec, weight.value(), bv);
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return x.graph->record("conv2d", std::move(y), inputs, [x, weight, bias, spec](Graph<T>& g, std::size_t self) {
    Tensor<T>* gx = g.needs_grad(x.id) ? &g.grad_buffer(x.id) : nullptr;
    Tensor<T>* gw = g.needs_grad(weight.id) ? &g.grad_buffer(weight.id) : nullptr;
    Tensor<T>* gb = bias && g.needs_grad(bias->id) ? &g.grad_buffer(bias->id) : nullptr;
    kernels::conv2d_backward(g.value(x.id), spec, g.value(weight.id), g.upstream(self), gx, gw, gb);
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> offset) {
  auto fw = kernels::layer_norm(x.value(), gain.value(), offset.value());
  Tensor<T> y = fw.y;
  fw.y = Tensor<T>();
  return x.graph->record("layer_norm", std::move(y), {x, gain, offset},
                         [x, gain, offset, fw = std::move(fw)](Graph<T>& g, std::size_t self) {
                           kernels::layer_norm_backward(
                               fw, g.value(gain.id), g.upstream(self),
                               g.needs_grad(x.id) ? &g.grad_buffer(x.id) : nullptr,
                               g.needs_grad(gain.id) ? &g.grad_buffer(gain.id) : nullptr,
                               g.needs_grad(offset.id) ? &g.grad_buffer(offset.id) : nullptr);
                         });
}

template <class T>
Var<T> pixel_shuffle(Var<T> x, std::size_t r) {
  Tensor<T> y = kernels::pixel_shuffle(x.value(), r);
  return x.graph->record("pixel_shuffle", std::move(y), {x}, [x, r](Graph<T>& g, std::size_t self) {
    detail::accumulate(g.grad_buffer(x.id), kernels::pixel_unshuffle(g.upstream(self), r));
  });
}

template <class T>
Var<T> resize_bilinear(Var<T> x, std::size_t h, std::size_t w) {
  if (x.shape().size() == 4 && x.dim(2) == h && x.dim(3) == w) return x;
  Tensor<T> y = kernels::resize_bilinear(x.value(), h, w);
  return x.graph->record("resize_bilinear", std::move(y), {x}, [x](Graph<T>& g, std::size_t self) {
    kernels::resize_bilinear_backward(g.upstream(self), g.grad_buffer(x.id));
  });
}

}  // namespace glco
