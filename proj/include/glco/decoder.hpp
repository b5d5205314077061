#pragma once

// Adjacent reverse decoder, the coarse D6 head, the stand-in convolutional
// encoder and the assembled five-output network.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "glco/autograd.hpp"
#include "glco/cos.hpp"
#include "glco/error.hpp"
#include "glco/params.hpp"

namespace glco {

enum class ExpandMode { kPixelShuffle, kBilinear };

struct ModelConfig {
  std::size_t channels = 128;
  std::vector<std::size_t> scales{3, 5, 7};
  FusionMode fusion = FusionMode::kAdd;
  bool gpm = true;
  bool lrm = true;
  bool ghim = true;
  bool ard = true;
  bool mtb_head = true;
  std::array<std::size_t, 5> encoder_widths{16, 32, 64, 128, 160};
  std::size_t in_channels = 3;
  ExpandMode expand = ExpandMode::kPixelShuffle;

  void validate() const {
    if (channels == 0) throw ConfigError("channels must be positive");
    validate_scales(scales);
    if (gpm && lrm && ghim && channels % 4 != 0)
      throw ConfigError("GHIM needs channels divisible by 4");
    for (std::size_t w : encoder_widths)
      if (w == 0) throw ConfigError("encoder widths must be positive");
  }
};

/// Five stride-2 3x3 conv + GELU stages; stage i emits E_i at extent/2^i.
template <class T>
class EncoderStub {
 public:
  EncoderStub() = default;
  EncoderStub(ParamStore<T>& store, std::size_t in_channels, const std::array<std::size_t, 5>& widths,
              Rng& rng) {
    std::size_t in = in_channels;
    for (std::size_t i = 0; i < 5; ++i) {
      stages_[i] = Conv<T>(store, "encoder.stage" + std::to_string(i + 1),
                           ConvSpec{in, widths[i], 3, 2, 1, 1}, rng);
      in = widths[i];
    }
  }

  std::array<Var<T>, 5> forward(Binder<T>& p, Var<T> image) const {
    std::array<Var<T>, 5> out{};
    Var<T> x = image;
    for (std::size_t i = 0; i < 5; ++i) out[i] = x = gelu(stages_[i](p, x));
    return out;
  }

 private:
  std::array<Conv<T>, 5> stages_;
};

/// Upsampling plus dimension extension of a 1-channel map to `channels`
/// channels at `factor` times its resolution (factor in {1, 2, 4}).
template <class T>
class Expand {
 public:
  Expand() = default;
  Expand(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t factor,
         ExpandMode mode, Rng& rng)
      : channels_(channels), factor_(factor), mode_(mode) {
    if (factor != 1 && factor != 2 && factor != 4)
      throw ConfigError("expand factor must be 1, 2 or 4");
    if (mode == ExpandMode::kBilinear || factor == 1) {
      convs_.push_back(Conv<T>(store, prefix + ".pw", ConvSpec::dense(1, channels, 1), rng));
      return;
    }
    std::size_t in = 1;
    for (std::size_t f = factor, k = 1; f > 1; f /= 2, ++k) {
      convs_.push_back(Conv<T>(store, prefix + ".shuffle" + std::to_string(k),
                               ConvSpec::dense(in, 4 * channels, 1), rng));
      in = channels;
    }
  }

  Var<T> operator()(Binder<T>& p, Var<T> d) const {
    const std::size_t h = d.dim(2) * factor_, w = d.dim(3) * factor_;
    if (mode_ == ExpandMode::kBilinear || factor_ == 1)
      return convs_[0](p, resize_bilinear(d, h, w));
    Var<T> x = d;
    for (const auto& c : convs_) x = pixel_shuffle(c(p, x), 2);
    return x;
  }

  std::size_t factor() const noexcept { return factor_; }

 private:
  std::size_t channels_ = 0;
  std::size_t factor_ = 1;
  ExpandMode mode_ = ExpandMode::kPixelShuffle;
  std::vector<Conv<T>> convs_;
};

namespace detail {
template <class T>
std::size_t resolution_factor(Var<T> f, Var<T> d, const char* what) {
  const std::size_t fh = f.dim(2), fw = f.dim(3), dh = d.dim(2), dw = d.dim(3);
  if (d.dim(1) != 1 || fh % dh != 0 || fw % dw != 0 || fh / dh != fw / dw)
    throw DimensionError(std::string(what) + ": map " + shape_str(d.shape()) +
                         " does not tile feature " + shape_str(f.shape()));
  return fh / dh;
}
}  // namespace detail

/// 1 - sigmoid(d): emphasises pixels a coarser prediction calls background.
template <class T>
Var<T> reverse_attention(Var<T> d) {
  return reverse_sigmoid(d);
}

/// One adjacent-reverse-decoder level: cross-layer aggregation of F_i with the
/// two coarser maps, reverse-attention refinement, and residual map addition.
template <class T>
class ArdStep {
 public:
  ArdStep() = default;
  /// `factors` are the expected resolution ratios F_i / D_{i+1} (and F_i / D_{i+2}).
  ArdStep(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
          std::vector<std::size_t> factors, ExpandMode mode, Rng& rng)
      : factors_(std::move(factors)) {
    if (factors_.empty() || factors_.size() > 2) throw ConfigError("ARD step takes one or two maps");
    for (std::size_t k = 0; k < factors_.size(); ++k)
      expand_.push_back(Expand<T>(store, prefix + ".expand" + std::to_string(k + 1), channels,
                                  factors_[k], mode, rng));
    const std::size_t C = channels;
    rho1_ = Conv<T>(store, prefix + ".rho1", ConvSpec::dense(C * (1 + factors_.size()), C, 3), rng);
    rho2_ = Conv<T>(store, prefix + ".rho2", ConvSpec::dense(C, C, 3), rng);
    out_ = Conv<T>(store, prefix + ".out", ConvSpec::dense(2 * C, 1, 3), rng);
  }

  /// If `lambda_out` is given the reverse-attention map is written there.
  Var<T> forward(Binder<T>& p, Var<T> f, Var<T> d_next, std::optional<Var<T>> d_next2,
                 Tensor<T>* lambda_out = nullptr) const {
    std::vector<Var<T>> maps{d_next};
    if (d_next2) maps.push_back(*d_next2);
    if (maps.size() != factors_.size())
      throw DimensionError("ard_step: expected " + std::to_string(factors_.size()) + " coarser maps");
    const std::size_t h = f.dim(2), w = f.dim(3);
    std::vector<Var<T>> agg{f};
    std::optional<Var<T>> lambda, skip;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      if (detail::resolution_factor(f, maps[k], "ard_step") != factors_[k])
        throw DimensionError("ard_step: resolution chain violated for map " + std::to_string(k + 1));
      agg.push_back(expand_[k](p, maps[k]));
      Var<T> ra = resize_bilinear(reverse_attention(maps[k]), h, w);
      lambda = lambda ? add(*lambda, ra) : ra;
      Var<T> up = resize_bilinear(maps[k], h, w);
      skip = skip ? add(*skip, up) : up;
    }
    if (lambda_out) *lambda_out = lambda->value();
    Var<T> fc = gelu(rho2_(p, gelu(rho1_(p, concat_channels(agg)))));
    Var<T> fr = mul_channel_broadcast(f, *lambda);
    return add(out_(p, concat_channels<T>({fc, fr})), *skip);
  }

 private:
  std::vector<std::size_t> factors_;
  std::vector<Expand<T>> expand_;
  Conv<T> rho1_, rho2_, out_;
};

/// Plain top-down decoder used when the ARD is ablated: concat with the
/// expanded coarser map, conv, predict, add the upsampled coarser map.
template <class T>
class FpnStep {
 public:
  FpnStep() = default;
  FpnStep(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t factor,
          ExpandMode mode, Rng& rng)
      : expand_(store, prefix + ".expand", channels, factor, mode, rng),
        mix_(store, prefix + ".mix", ConvSpec::dense(2 * channels, channels, 3), rng),
        out_(store, prefix + ".out", ConvSpec::dense(channels, 1, 3), rng) {}

  Var<T> forward(Binder<T>& p, Var<T> f, Var<T> d_next) const {
    if (detail::resolution_factor(f, d_next, "fpn_step") != expand_.factor())
      throw DimensionError("fpn_step: resolution chain violated");
    Var<T> x = gelu(mix_(p, concat_channels<T>({f, expand_(p, d_next)})));
    return add(out_(p, x), resize_bilinear(d_next, f.dim(2), f.dim(3)));
  }

 private:
  Expand<T> expand_;
  Conv<T> mix_, out_;
};

/// Coarse map D6 = C3 C1 MTB(C1 concat(E5, G5)).
template <class T>
class HeadD6 {
 public:
  HeadD6() = default;
  HeadD6(ParamStore<T>& store, const std::string& prefix, std::size_t channels, bool with_global,
         bool with_mtb, const std::vector<std::size_t>& scales, Rng& rng)
      : with_global_(with_global), with_mtb_(with_mtb) {
    const std::size_t C = channels;
    reduce_ = Conv<T>(store, prefix + ".reduce", ConvSpec::dense(with_global ? 2 * C : C, C, 1), rng);
    if (with_mtb) mtb_ = Mtb<T>(store, prefix + ".mtb", C, scales, rng);
    c1_ = Conv<T>(store, prefix + ".c1", ConvSpec::dense(C, C, 1), rng);
    c3_ = Conv<T>(store, prefix + ".c3", ConvSpec::dense(C, 1, 3), rng);
  }

  Var<T> forward(Binder<T>& p, Var<T> e5, std::optional<Var<T>> g5,
                 std::vector<Tensor<T>>* maps = nullptr) const {
    Var<T> x = e5;
    if (with_global_) {
      if (!g5) throw ContractError("head_d6: configured with G5 but none given");
      if (g5->dim(2) != e5.dim(2) || g5->dim(3) != e5.dim(3))
        throw DimensionError("head_d6: E5 " + shape_str(e5.shape()) + " vs G5 " + shape_str(g5->shape()));
      x = concat_channels<T>({e5, *g5});
    }
    x = reduce_(p, x);
    if (with_mtb_) x = mtb_.forward(p, x, maps);
    return c3_(p, c1_(p, x));
  }

 private:
  bool with_global_ = false;
  bool with_mtb_ = false;
  Conv<T> reduce_;
  Mtb<T> mtb_;
  Conv<T> c1_, c3_;
};

template <class T>
struct ModelOutput {
  std::array<Var<T>, 5> maps;  // logits D2, D3, D4, D5, D6
  Var<T> map(std::size_t level) const { return maps.at(level - 2); }
};

/// Optional diagnostics collected during a forward pass.
template <class T>
struct ForwardTrace {
  std::vector<Tensor<T>> attention;          // every transposed-attention matrix
  std::array<Tensor<T>, 4> lambda;           // reverse-attention maps, levels 2..5
  std::array<std::optional<Var<T>>, 4> fused;  // F_2..F_5
};

template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t C = cfg_.channels;
    encoder_ = EncoderStub<T>(store_, cfg_.in_channels, cfg_.encoder_widths, rng);
    const CosFlags flags{cfg_.gpm, cfg_.lrm, cfg_.ghim};
    for (std::size_t i = 2; i <= 5; ++i) {
      const std::string s = "s" + std::to_string(i);
      reduce_[i - 2] = Conv<T>(store_, "reduce." + s, ConvSpec::dense(cfg_.encoder_widths[i - 1], C, 3), rng);
      cos_[i - 2] = Cos<T>(store_, "cos." + s, C, cfg_.scales, cfg_.fusion, flags, rng);
    }
    head_ = HeadD6<T>(store_, "decoder.head6", C, cfg_.gpm, cfg_.mtb_head, cfg_.scales, rng);
    // F5 shares D6's resolution; every other step doubles, so D_{i+2} is x4
    // away except at level 4 where D6 is also only x2 away.
    const std::array<std::vector<std::size_t>, 4> factors{
        std::vector<std::size_t>{2, 4}, {2, 4}, {2, 2}, {1}};
    for (std::size_t i = 2; i <= 5; ++i) {
      const std::string name = "l" + std::to_string(i);
      if (cfg_.ard)
        ard_[i - 2] = ArdStep<T>(store_, "decoder.ard." + name, C, factors[i - 2], cfg_.expand, rng);
      else
        fpn_[i - 2] = FpnStep<T>(store_, "decoder.fpn." + name, C, factors[i - 2][0], cfg_.expand, rng);
    }
  }

  ModelOutput<T> forward(Binder<T>& p, Var<T> image, ForwardTrace<T>* trace = nullptr) const {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[1] != cfg_.in_channels)
      throw DimensionError("model input must be [b," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                           shape_str(s));
    if (s[2] % 32 != 0 || s[3] % 32 != 0)
      throw ConfigError("input extent " + shape_str(s) + " must be divisible by 32");
    auto* maps = trace ? &trace->attention : nullptr;
    const auto enc = encoder_.forward(p, image);
    std::array<Var<T>, 4> reduced{}, fused{};
    std::optional<Var<T>> g5;
    for (std::size_t i = 2; i <= 5; ++i) {
      reduced[i - 2] = gelu(reduce_[i - 2](p, enc[i - 1]));
      auto out = cos_[i - 2].forward(p, reduced[i - 2], maps);
      fused[i - 2] = out.fused;
      if (trace) trace->fused[i - 2] = out.fused;
      if (i == 5) g5 = out.global;
    }
    ModelOutput<T> result{};
    Var<T> d6 = head_.forward(p, reduced[3], g5, maps);
    result.maps[4] = d6;
    for (std::size_t i = 5; i >= 2; --i) {
      Var<T> next = result.maps[i - 1];
      std::optional<Var<T>> next2;
      if (i + 2 <= 6) next2 = result.maps[i];
      Tensor<T>* lam = trace ? &trace->lambda[i - 2] : nullptr;
      result.maps[i - 2] = cfg_.ard ? ard_[i - 2].forward(p, fused[i - 2], next, next2, lam)
                                    : fpn_[i - 2].forward(p, fused[i - 2], next);
    }
    return result;
  }

  /// sigmoid(up(D2)) at the input resolution.
  Var<T> predict(Binder<T>& p, Var<T> image) const {
    auto out = forward(p, image);
    return sigmoid(resize_bilinear(out.maps[0], image.dim(2), image.dim(3)));
  }

  ParamStore<T>& params() noexcept { return store_; }
  const ParamStore<T>& params() const noexcept { return store_; }
  const ModelConfig& config() const noexcept { return cfg_; }
  const Cos<T>& cos(std::size_t level) const { return cos_.at(level - 2); }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  EncoderStub<T> encoder_;
  std::array<Conv<T>, 4> reduce_;
  std::array<Cos<T>, 4> cos_;
  HeadD6<T> head_;
  std::array<ArdStep<T>, 4> ard_;
  std::array<FpnStep<T>, 4> fpn_;
};

}  // namespace glco
