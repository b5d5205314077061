#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>

#include "glco/autograd.hpp"
#include "glco/error.hpp"
#include "glco/kernels.hpp"
#include "glco/serialize.hpp"
#include "glco/tensor.hpp"

namespace glco {

/// Named parameter tensors in a stable (sorted) order.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> init) {
    auto [it, inserted] = params_.emplace(name, std::move(init));
    if (!inserted) throw ContractError("duplicate parameter name '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
  }

  const NamedTensors<T>& all() const noexcept { return params_; }
  NamedTensors<T>& all() noexcept { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  void fill(T v) {
    for (auto& [_, t] : params_) t.fill(v);
  }

  /// Replaces values from `src`. Every parameter must be present with the
  /// same shape; otherwise throws a DimensionError listing each mismatch.
  template <class U>
  void assign_from(const NamedTensors<U>& src) {
    std::string problems;
    for (const auto& [name, t] : params_) {
      auto it = src.find(name);
      if (it == src.end())
        problems += "\n  missing: " + name;
      else if (it->second.shape() != t.shape())
        problems += "\n  shape: " + name + " has " + shape_str(it->second.shape()) + ", model expects " +
                    shape_str(t.shape());
    }
    if (!problems.empty()) throw DimensionError("checkpoint does not match model:" + problems);
    for (auto& [name, t] : params_) t = src.at(name).template cast<T>();
  }

 private:
  NamedTensors<T> params_;
};

/// Binds a ParamStore into one Graph. Each parameter becomes a single leaf so
/// repeated uses accumulate into one gradient.
template <class T>
class Binder {
 public:
  Binder(Graph<T>& graph, const ParamStore<T>& store, bool trainable = true)
      : graph_(graph), store_(store), trainable_(trainable) {}

  Var<T> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var<T> v = graph_.leaf(store_.get(name), trainable_);
    bound_.emplace(name, v);
    return v;
  }

  /// Routes `name` to an existing node of this graph instead of a fresh leaf.
  void override(const std::string& name, Var<T> v) {
    if (v.graph != &graph_) throw ContractError("Binder::override: node from a different graph");
    if (v.shape() != store_.get(name).shape())
      throw DimensionError("Binder::override: shape mismatch for '" + name + "'");
    bound_.insert_or_assign(name, v);
  }

  Graph<T>& graph() noexcept { return graph_; }

  /// Gradients of every parameter (zeros for unused ones) after backward().
  NamedTensors<T> grads() const {
    NamedTensors<T> out;
    for (const auto& [name, t] : store_.all()) {
      auto it = bound_.find(name);
      out.emplace(name, it == bound_.end() ? Tensor<T>(t.shape()) : graph_.grad(it->second));
    }
    return out;
  }

 private:
  Graph<T>& graph_;
  const ParamStore<T>& store_;
  bool trainable_;
  std::unordered_map<std::string, Var<T>> bound_;
};

/// Kaiming-uniform (fan-in) weights with leaky-ReLU slope sqrt(5), i.e.
/// bound = sqrt(6 / ((1 + 5) fan_in)) = 1 / sqrt(fan_in).
template <class T>
Tensor<T> kaiming_uniform(const Shape& weight_shape, Rng& rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < weight_shape.size(); ++i) fan_in *= weight_shape[i];
  const double bound = 1.0 / std::sqrt(double(fan_in));
  return random_uniform<T>(weight_shape, rng, -bound, bound);
}

/// A convolution layer: names plus geometry; values live in the ParamStore.
template <class T>
class Conv {
 public:
  Conv() = default;
  Conv(ParamStore<T>& store, std::string name, ConvSpec spec, Rng& rng, bool bias = true)
      : name_(std::move(name)), spec_(spec), bias_(bias) {
    spec_.validate();
    store.add(name_ + ".weight", kaiming_uniform<T>(spec_.weight_shape(), rng));
    if (bias_) store.add(name_ + ".bias", Tensor<T>({spec_.out_channels}));
  }

  Var<T> operator()(Binder<T>& p, Var<T> x) const {
    std::optional<Var<T>> b;
    if (bias_) b = p(name_ + ".bias");
    return conv2d(x, p(name_ + ".weight"), b, spec_);
  }

  const std::string& name() const noexcept { return name_; }
  const ConvSpec& spec() const noexcept { return spec_; }

 private:
  std::string name_;
  ConvSpec spec_;
  bool bias_ = true;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, std::string name, std::size_t channels) : name_(std::move(name)) {
    store.add(name_ + ".gain", Tensor<T>({channels}, T(1)));
    store.add(name_ + ".offset", Tensor<T>({channels}, T(0)));
  }

  Var<T> operator()(Binder<T>& p, Var<T> x) const {
    return layer_norm(x, p(name_ + ".gain"), p(name_ + ".offset"));
  }

 private:
  std::string name_;
};

}  // namespace glco
