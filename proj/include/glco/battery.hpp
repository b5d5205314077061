#pragma once

// Reduced-width finite-difference battery over every differentiable op,
// block and loss. Each component reports the worst relative error across its
// inputs and a seeded sample of its parameters.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "glco/autograd.hpp"
#include "glco/cos.hpp"
#include "glco/decoder.hpp"
#include "glco/gradcheck.hpp"
#include "glco/objective.hpp"
#include "glco/params.hpp"

namespace glco {

struct BatteryOptions {
  std::size_t channels = 16;
  std::size_t input_coords = 48;  // 0 = all
  std::size_t param_coords = 3;
  std::uint64_t seed = 7;
  std::string corrupt_op;
  double tolerance = 1e-4;
};

struct BatteryResult {
  std::string component;
  double worst = 0;
  std::size_t checks = 0;
};

namespace detail {

using BlockFn = std::function<Var<double>(Binder<double>&, const std::vector<Var<double>>&)>;

/// <out, R> with a fixed random R, so every output coordinate matters.
inline Var<double> project(Var<double> out, std::uint64_t seed) {
  Rng rng(seed);
  auto r = random_uniform<double>(out.shape(), rng, -1.0, 1.0);
  return sum(mul(out, out.graph->constant(std::move(r))));
}

class BlockChecker {
 public:
  BlockChecker(const BatteryOptions& opt, std::string name) : opt_(opt), result_{std::move(name), 0, 0} {}

  /// Checks d/d(input k) for every input and d/d(param) for every parameter.
  void run(const ParamStore<double>& store, const BlockFn& block, const std::vector<Tensor<double>>& inputs) {
    GradcheckOptions go;
    go.corrupt_op = opt_.corrupt_op;
    go.seed = opt_.seed;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      ScalarFn f = [&, k](Graph<double>& g, Var<double> x) {
        Binder<double> p(g, store, false);
        std::vector<Var<double>> in;
        for (std::size_t j = 0; j < inputs.size(); ++j) in.push_back(j == k ? x : g.constant(inputs[j]));
        return project(block(p, in), opt_.seed + 101);
      };
      go.max_coords = opt_.input_coords;
      record(gradcheck(f, inputs[k], go));
    }
    for (const auto& [name, value] : store.all()) {
      ScalarFn f = [&, name = name](Graph<double>& g, Var<double> x) {
        Binder<double> p(g, store, false);
        p.override(name, x);
        std::vector<Var<double>> in;
        for (const auto& t : inputs) in.push_back(g.constant(t));
        return project(block(p, in), opt_.seed + 101);
      };
      go.max_coords = opt_.param_coords;
      go.seed += 1;
      record(gradcheck(f, value, go));
    }
  }

  /// Checks a scalar-valued function of a single input directly.
  void run_scalar(const ScalarFn& f, const Tensor<double>& x) {
    GradcheckOptions go;
    go.corrupt_op = opt_.corrupt_op;
    go.seed = opt_.seed;
    go.max_coords = opt_.input_coords;
    record(gradcheck(f, x, go));
  }

  BatteryResult result() const { return result_; }

 private:
  void record(double err) {
    result_.worst = std::max(result_.worst, err);
    ++result_.checks;
  }

  const BatteryOptions& opt_;
  BatteryResult result_;
};

inline Tensor<double> rand_t(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return random_uniform<double>(s, rng, lo, hi);
}

inline Tensor<double> rand_mask(const Shape& s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> m(s);
  for (auto& v : m.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  return m;
}

}  // namespace detail

/// Names of every component, in report order.
inline std::vector<std::string> battery_components() {
  return {"matmul",         "softmax",     "conv_dense",      "conv_depthwise", "conv_dilated",
          "conv_strided",   "conv_grouped", "layer_norm",     "gelu",           "sigmoid",
          "gated_conv",     "pixel_shuffle", "resize_bilinear", "channel_broadcast", "concat_slice",
          "mtb",            "pcb",         "ghim",            "cos",            "ard_step",
          "fpn_step",       "head_d6",     "weighted_bce",    "weighted_iou",   "total_loss"};
}

inline BatteryResult run_component(const std::string& name, const BatteryOptions& opt) {
  using detail::rand_t;
  using V = Var<double>;
  using Vs = std::vector<V>;
  detail::BlockChecker ck(opt, name);
  const std::size_t C = opt.channels;
  const std::uint64_t s = opt.seed;
  Rng rng(s);
  ParamStore<double> store;

  auto conv_check = [&](const ConvSpec& spec, const Shape& xs) {
    Conv<double> conv(store, "conv", spec, rng);
    // Non-zero bias so its gradient path is exercised with generic values.
    for (auto& v : store.get("conv.bias").data()) v = rng.uniform(-0.5, 0.5);
    ck.run(store, [&](Binder<double>& p, const Vs& in) { return conv(p, in[0]); }, {rand_t(xs, s + 1)});
  };

  if (name == "matmul") {
    ck.run(store,
           [&](Binder<double>&, const Vs& in) {
             V a = matmul(in[0], in[1]);                              // [2,3,5]
             V b = matmul(transpose(in[1]), transpose(in[0]));        // [2,5,3]
             V c = matmul(reshape(in[0], {6, 4}), in[2]);             // [6,2]
             return concat_channels<double>({reshape(a, {1, 30, 1, 1}), reshape(b, {1, 30, 1, 1}),
                                             reshape(c, {1, 12, 1, 1})});
           },
           {rand_t({2, 3, 4}, s + 1), rand_t({2, 4, 5}, s + 2), rand_t({4, 2}, s + 3)});
  } else if (name == "softmax") {
    ck.run(store,
           [&](Binder<double>&, const Vs& in) {
             V a = softmax(in[0], 2);
             V b = softmax(in[0], 1);
             V c = softmax(in[0], 0);
             return add(add(a, scale(b, 0.7)), scale(c, -1.3));
           },
           {rand_t({3, 4, 5}, s + 1, -2, 2)});
  } else if (name == "conv_dense") {
    conv_check(ConvSpec::dense(4, 5, 3), {2, 4, 6, 7});
  } else if (name == "conv_depthwise") {
    conv_check(ConvSpec::depthwise_of(6, 5), {2, 6, 7, 6});
  } else if (name == "conv_dilated") {
    conv_check(ConvSpec::dense(3, 4, 3, 3), {1, 3, 8, 8});
  } else if (name == "conv_strided") {
    ConvSpec spec = ConvSpec::dense(3, 4, 3);
    spec.stride = 2;
    conv_check(spec, {2, 3, 7, 8});
  } else if (name == "conv_grouped") {
    ConvSpec spec = ConvSpec::dense(4, 6, 3, 2);
    spec.groups = 2;
    conv_check(spec, {1, 4, 7, 7});
  } else if (name == "layer_norm") {
    LayerNorm<double> ln(store, "ln", 5);
    for (auto& v : store.get("ln.gain").data()) v = rng.uniform(0.5, 1.5);
    for (auto& v : store.get("ln.offset").data()) v = rng.uniform(-0.5, 0.5);
    ck.run(store, [&](Binder<double>& p, const Vs& in) { return ln(p, in[0]); }, {rand_t({2, 5, 3, 4}, s + 1)});
  } else if (name == "gelu") {
    ck.run(store, [&](Binder<double>&, const Vs& in) { return gelu(in[0]); }, {rand_t({2, 3, 4, 4}, s + 1, -3, 3)});
  } else if (name == "sigmoid") {
    ck.run(store,
           [&](Binder<double>&, const Vs& in) { return add(sigmoid(in[0]), scale(reverse_sigmoid(in[0]), 0.5)); },
           {rand_t({2, 3, 4, 4}, s + 1, -4, 4)});
  } else if (name == "gated_conv") {
    Ghim<double> ghim(store, "ghim", C, FusionMode::kAdd, rng);
    ck.run(store, [&](Binder<double>& p, const Vs& in) { return mul(ghim.gated_conv(p, in[0]), in[0]); },
           {rand_t({1, C, 6, 6}, s + 1)});
  } else if (name == "pixel_shuffle") {
    ck.run(store, [&](Binder<double>&, const Vs& in) { return pixel_shuffle(in[0], 2); },
           {rand_t({2, 8, 3, 3}, s + 1)});
  } else if (name == "resize_bilinear") {
    ck.run(store,
           [&](Binder<double>&, const Vs& in) {
             V up = resize_bilinear(in[0], 13, 10);
             V down = resize_bilinear(up, 3, 4);
             return concat_channels<double>({reshape(up, {1, 260, 1, 1}), reshape(down, {1, 24, 1, 1})});
           },
           {rand_t({2, 1, 5, 4}, s + 1)});
  } else if (name == "channel_broadcast") {
    ck.run(store, [&](Binder<double>&, const Vs& in) { return mul_channel_broadcast(in[0], in[1]); },
           {rand_t({2, 4, 5, 5}, s + 1), rand_t({2, 1, 5, 5}, s + 2)});
  } else if (name == "concat_slice") {
    ck.run(store,
           [&](Binder<double>&, const Vs& in) {
             V cat = concat_channels<double>({in[0], in[1]});
             return add(slice_channels(cat, 1, 3), scale(slice_channels(cat, 2, 3), 2.0));
           },
           {rand_t({2, 3, 4, 4}, s + 1), rand_t({2, 2, 4, 4}, s + 2)});
  } else if (name == "mtb") {
    Mtb<double> mtb(store, "mtb", C, {3, 5, 7}, rng);
    ck.run(store, [&](Binder<double>& p, const Vs& in) { return mtb.forward(p, in[0]); },
           {rand_t({1, C, 8, 8}, s + 1)});
  } else if (name == "pcb") {
    Pcb<double> pcb(store, "pcb", C, {3, 5, 7}, rng);
    ck.run(store, [&](Binder<double>& p, const Vs& in) { return pcb.forward(p, in[0]); },
           {rand_t({1, C, 8, 8}, s + 1)});
  } else if (name == "ghim") {
    Ghim<double> add_mode(store, "ghim_add", C, FusionMode::kAdd, rng);
    Ghim<double> cat_mode(store, "ghim_cat", C, FusionMode::kConcat, rng);
    ck.run(store,
           [&](Binder<double>& p, const Vs& in) {
             return add(add_mode.forward(p, in[0], in[1]), cat_mode.forward(p, in[0], in[1]));
           },
           {rand_t({1, C, 6, 6}, s + 1), rand_t({1, C, 6, 6}, s + 2)});
  } else if (name == "cos") {
    Cos<double> cos(store, "cos", C, {3, 5}, FusionMode::kAdd, CosFlags{}, rng);
    ck.run(store, [&](Binder<double>& p, const Vs& in) { return cos.forward(p, in[0]).fused; },
           {rand_t({1, C, 8, 8}, s + 1)});
  } else if (name == "ard_step") {
    ArdStep<double> ps(store, "ard_ps", C, {2, 4}, ExpandMode::kPixelShuffle, rng);
    ArdStep<double> bl(store, "ard_bl", C, {2, 4}, ExpandMode::kBilinear, rng);
    ArdStep<double> one(store, "ard_one", C, {1}, ExpandMode::kPixelShuffle, rng);
    ck.run(store,
           [&](Binder<double>& p, const Vs& in) {
             V a = ps.forward(p, in[0], in[1], in[2]);
             V b = bl.forward(p, in[0], in[1], in[2]);
             V c = resize_bilinear(one.forward(p, in[3], in[2], std::nullopt), 8, 8);
             return add(add(a, b), c);
           },
           {rand_t({1, C, 8, 8}, s + 1), rand_t({1, 1, 4, 4}, s + 2, -2, 2), rand_t({1, 1, 2, 2}, s + 3, -2, 2),
            rand_t({1, C, 2, 2}, s + 4)});
  } else if (name == "fpn_step") {
    FpnStep<double> fpn(store, "fpn", C, 2, ExpandMode::kPixelShuffle, rng);
    ck.run(store, [&](Binder<double>& p, const Vs& in) { return fpn.forward(p, in[0], in[1]); },
           {rand_t({1, C, 8, 8}, s + 1), rand_t({1, 1, 4, 4}, s + 2, -2, 2)});
  } else if (name == "head_d6") {
    HeadD6<double> head(store, "head", C, true, true, {3, 5, 7}, rng);
    ck.run(store, [&](Binder<double>& p, const Vs& in) { return head.forward(p, in[0], in[1]); },
           {rand_t({1, C, 4, 4}, s + 1), rand_t({1, C, 4, 4}, s + 2)});
  } else if (name == "weighted_bce" || name == "weighted_iou") {
    const Tensor<double> g = detail::rand_mask({2, 1, 16, 16}, s + 5);
    const Tensor<double> w = weight_map(g);
    const bool bce = name == "weighted_bce";
    ck.run_scalar(
        [&](Graph<double>&, V x) { return bce ? weighted_bce(x, g, w) : weighted_iou(sigmoid(x), g, w); },
        rand_t({2, 1, 16, 16}, s + 1, -3, 3));
  } else if (name == "total_loss") {
    const Tensor<double> g = detail::rand_mask({2, 1, 32, 32}, s + 5);
    const std::array<std::size_t, 5> ext{8, 4, 2, 1, 1};
    std::array<Tensor<double>, 5> maps;
    for (std::size_t k = 0; k < 5; ++k) maps[k] = rand_t({2, 1, ext[k], ext[k]}, s + 10 + k, -2, 2);
    for (std::size_t k = 0; k < 5; ++k)
      ck.run_scalar(
          [&, k](Graph<double>& gr, V x) {
            std::array<V, 5> vs;
            for (std::size_t j = 0; j < 5; ++j) vs[j] = j == k ? x : gr.constant(maps[j]);
            return total_loss(vs, g).total;
          },
          maps[k]);
  } else {
    throw ConfigError("unknown gradcheck component '" + name + "'");
  }
  return ck.result();
}

inline std::vector<BatteryResult> run_battery(const BatteryOptions& opt) {
  std::vector<BatteryResult> out;
  for (const auto& name : battery_components()) out.push_back(run_component(name, opt));
  return out;
}

}  // namespace glco
