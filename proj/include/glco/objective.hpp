#pragma once

// Deep-supervision objective (weighted BCE + weighted IoU on every decoder
// output) and the Adam optimizer with step-decay schedule.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glco/autograd.hpp"
#include "glco/error.hpp"
#include "glco/kernels.hpp"
#include "glco/params.hpp"
#include "glco/serialize.hpp"

namespace glco {

template <class T>
void require_binary(const Tensor<T>& g, const char* what) {
  for (T v : g.data())
    if (v != T(0) && v != T(1)) throw ContractError(std::string(what) + ": mask must be binary");
}

inline constexpr std::size_t kBoundaryPool = 15;
inline constexpr double kBoundaryGain = 5.0;

/// Boundary emphasis w = 5 |meanpool15(G) - G|; large near object edges.
template <class T>
Tensor<T> weight_map(const Tensor<T>& g) {
  require_binary(g, "weight_map");
  Tensor<T> pooled = kernels::mean_pool_same(g, kBoundaryPool);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    pooled[i] = T(kBoundaryGain) * std::abs(pooled[i] - g[i]);
  return pooled;
}

namespace detail {
template <class T>
void check_loss_operands(const Shape& p, const Tensor<T>& g, const Tensor<T>& w, const char* what) {
  if (p != g.shape() || p != w.shape())
    throw DimensionError(std::string(what) + ": prediction " + shape_str(p) + ", mask " +
                         shape_str(g.shape()) + ", weights " + shape_str(w.shape()));
  if (p.empty()) throw DimensionError(std::string(what) + ": operands need a batch axis");
}
}  // namespace detail

/// -sum (1+w)[G log P + (1-G) log(1-P)] / sum (1+w), P = sigmoid(logits),
/// evaluated in logit space. Leading axis is the batch; per-sample losses are
/// averaged.
template <class T>
Var<T> weighted_bce(Var<T> logits, const Tensor<T>& g, const Tensor<T>& w) {
  detail::check_loss_operands(logits.shape(), g, w, "weighted_bce");
  const std::size_t B = g.dim(0), N = g.size() / B;
  const auto& x = logits.value();
  std::vector<T> norm(B);
  T total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    T num = 0, den = 0;
    for (std::size_t i = b * N; i < (b + 1) * N; ++i) {
      const T a = T(1) + w[i];
      const T l = std::max(x[i], T(0)) - x[i] * g[i] + std::log1p(std::exp(-std::abs(x[i])));
      num += a * l;
      den += a;
    }
    norm[b] = den;
    total += num / den;
  }
  return logits.graph->record(
      "weighted_bce", Tensor<T>::scalar(total / T(B)), {logits},
      [logits, g, w, norm, B, N](Graph<T>& gr, std::size_t self) {
        const T gy = gr.upstream(self)[0] / T(B);
        const auto& xv = gr.value(logits.id);
        auto& gx = gr.grad_buffer(logits.id);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = b * N; i < (b + 1) * N; ++i)
            gx[i] += gy * (T(1) + w[i]) * (kernels::sigmoid(xv[i]) - g[i]) / norm[b];
      });
}

/// 1 - sum (1+w) G P / sum (1+w)(G + P - G P) per sample, averaged over the
/// batch. A sample with empty union (G = P = 0) contributes 0.
template <class T>
Var<T> weighted_iou(Var<T> prob, const Tensor<T>& g, const Tensor<T>& w) {
  detail::check_loss_operands(prob.shape(), g, w, "weighted_iou");
  const auto& p = prob.value();
  for (T v : p.data())
    if (!(v >= T(0) && v <= T(1))) throw ContractError("weighted_iou: prediction outside [0,1]");
  const std::size_t B = g.dim(0), N = g.size() / B;
  std::vector<T> inter(B), uni(B);
  T total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = b * N; i < (b + 1) * N; ++i) {
      const T a = T(1) + w[i];
      inter[b] += a * g[i] * p[i];
      uni[b] += a * (g[i] + p[i] - g[i] * p[i]);
    }
    if (uni[b] > T(0)) total += T(1) - inter[b] / uni[b];
  }
  return prob.graph->record(
      "weighted_iou", Tensor<T>::scalar(total / T(B)), {prob},
      [prob, g, w, inter, uni, B, N](Graph<T>& gr, std::size_t self) {
        const T gy = gr.upstream(self)[0] / T(B);
        auto& gp = gr.grad_buffer(prob.id);
        for (std::size_t b = 0; b < B; ++b) {
          if (uni[b] <= T(0)) continue;
          const T u2 = uni[b] * uni[b];
          for (std::size_t i = b * N; i < (b + 1) * N; ++i) {
            const T a = T(1) + w[i];
            gp[i] -= gy * a * (g[i] * uni[b] - inter[b] * (T(1) - g[i])) / u2;
          }
        }
      });
}

template <class T>
struct LossReport {
  std::array<Var<T>, 5> bce;  // levels 2..6
  std::array<Var<T>, 5> iou;
  Var<T> total;

  T bce_value(std::size_t level) const { return bce.at(level - 2).value().item(); }
  T iou_value(std::size_t level) const { return iou.at(level - 2).value().item(); }
  T total_value() const { return total.value().item(); }
};

/// Sum over the five decoder logit maps, each resized to the mask resolution.
/// `skip_level` (2..6) drops one level's terms.
template <class T>
LossReport<T> total_loss(const std::array<Var<T>, 5>& maps, const Tensor<T>& g, int skip_level = 0) {
  require_rank(g, 4, "total_loss mask");
  require_binary(g, "total_loss");
  const Tensor<T> w = weight_map(g);
  LossReport<T> r{};
  std::optional<Var<T>> total;
  for (std::size_t k = 0; k < 5; ++k) {
    Var<T> logits = resize_bilinear(maps[k], g.dim(2), g.dim(3));
    r.bce[k] = weighted_bce(logits, g, w);
    r.iou[k] = weighted_iou(sigmoid(logits), g, w);
    if (int(k + 2) == skip_level) continue;
    Var<T> term = add(r.bce[k], r.iou[k]);
    total = total ? add(*total, term) : term;
  }
  r.total = *total;
  return r;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_factor = 0.1;
  std::size_t decay_every = 60;  // epochs
};

/// lr * factor^floor(epoch / period)
inline double lr_at_epoch(const AdamConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::pow(cfg.decay_factor, double(epoch / cfg.decay_every));
}

template <class T>
struct OptimState {
  NamedTensors<T> m;
  NamedTensors<T> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter in `store`.
template <class T>
void adam_step(ParamStore<T>& store, const NamedTensors<T>& grads, OptimState<T>& state,
               const AdamConfig& cfg, double lr) {
  for (const auto& [name, p] : store.all()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adam_step: no gradient for '" + name + "'");
    if (it->second.shape() != p.shape())
      throw DimensionError("adam_step: gradient shape mismatch for '" + name + "'");
  }
  ++state.step;
  const double bc1 = 1 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1 - std::pow(cfg.beta2, double(state.step));
  for (auto& [name, p] : store.all()) {
    const auto& g = grads.at(name);
    auto& m = state.m.try_emplace(name, p.shape()).first->second;
    auto& v = state.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = T(cfg.beta1) * m[i] + T(1 - cfg.beta1) * g[i];
      v[i] = T(cfg.beta2) * v[i] + T(1 - cfg.beta2) * g[i] * g[i];
      const double mhat = double(m[i]) / bc1;
      const double vhat = double(v[i]) / bc2;
      p[i] -= T(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace glco
