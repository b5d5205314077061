#pragma once

// Collaborative optimization blocks: the multi-scale transformer block (global
// branch), the progressive convolution block (local branch) and the group-wise
// hybrid interaction that fuses them.

#include <cmath>
#include <string>
#include <vector>

#include "glco/autograd.hpp"
#include "glco/error.hpp"
#include "glco/params.hpp"

namespace glco {

enum class FusionMode { kAdd, kConcat };

inline void validate_scales(const std::vector<std::size_t>& scales) {
  if (scales.empty()) throw ConfigError("scale set must be non-empty");
  for (std::size_t s : scales)
    if (s != 3 && s != 5 && s != 7) throw ConfigError("scale set must be a subset of {3,5,7}");
}

namespace detail {
template <class T>
void require_channels(Var<T> x, std::size_t c, const char* what) {
  if (x.shape().size() != 4 || x.dim(1) != c)
    throw DimensionError(std::string(what) + ": expected " + std::to_string(c) + " channels, got " +
                         shape_str(x.shape()));
}
}  // namespace detail

/// Multi-scale transformer block: transposed (channel x channel) attention at
/// each depthwise scale, a gated multi-scale feed-forward stage, and a final
/// 3x3 fusion with the block input.
template <class T>
class Mtb {
 public:
  struct Branch {
    std::size_t scale;
    Conv<T> q_pw, q_dw, k_pw, k_dw, v_pw, v_dw;  // attention projections
    Conv<T> gate_pw, gate_dw, value_pw, value_dw;  // feed-forward factors
  };

  Mtb() = default;
  Mtb(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
      const std::vector<std::size_t>& scales, Rng& rng)
      : channels_(channels) {
    validate_scales(scales);
    const std::size_t C = channels;
    norm1_ = LayerNorm<T>(store, prefix + ".ln1", C);
    norm2_ = LayerNorm<T>(store, prefix + ".ln2", C);
    for (std::size_t n : scales) {
      const std::string s = std::to_string(n);
      auto pw = [&](const std::string& name) {
        return Conv<T>(store, prefix + "." + name + ".pw" + s, ConvSpec::dense(C, C, 1), rng);
      };
      auto dw = [&](const std::string& name) {
        return Conv<T>(store, prefix + "." + name + ".dw" + s, ConvSpec::depthwise_of(C, n), rng);
      };
      Branch b{n, pw("q"), dw("q"), pw("k"), dw("k"), pw("v"), dw("v"),
               pw("ffn.gate"), dw("ffn.gate"), pw("ffn.value"), dw("ffn.value")};
      branches_.push_back(std::move(b));
    }
    attn_fuse_ = Conv<T>(store, prefix + ".attn.fuse", ConvSpec::dense(scales.size() * C, C, 1), rng);
    ffn_fuse_ = Conv<T>(store, prefix + ".ffn.fuse", ConvSpec::dense(scales.size() * C, C, 1), rng);
    out_ = Conv<T>(store, prefix + ".out", ConvSpec::dense(2 * C, C, 3), rng);
  }

  /// First stage (attention + residual). If `maps` is given, every attention
  /// matrix [b, C, C] is appended to it.
  Var<T> attention(Binder<T>& p, Var<T> x, std::vector<Tensor<T>>* maps = nullptr) const {
    detail::require_channels(x, channels_, "mtb_attention");
    const std::size_t B = x.dim(0), C = channels_, HW = x.dim(2) * x.dim(3);
    const T temperature = T(1) / std::sqrt(T(HW));
    Var<T> xn = norm1_(p, x);
    std::vector<Var<T>> outs;
    for (const auto& br : branches_) {
      Var<T> q = reshape(br.q_dw(p, br.q_pw(p, xn)), {B, C, HW});
      Var<T> k = reshape(br.k_dw(p, br.k_pw(p, xn)), {B, C, HW});
      Var<T> v = reshape(br.v_dw(p, br.v_pw(p, xn)), {B, C, HW});
      Var<T> attn = softmax(scale(matmul(q, transpose(k)), temperature), 2);
      if (maps) maps->push_back(attn.value());
      outs.push_back(reshape(matmul(attn, v), x.shape()));
    }
    return add(attn_fuse_(p, concat_channels(outs)), x);
  }

  /// Second stage: GELU(C1 DCn x) * C1 DCn x per scale, fused, plus residual.
  Var<T> ffn(Binder<T>& p, Var<T> g1) const {
    detail::require_channels(g1, channels_, "mtb_ffn");
    Var<T> xn = norm2_(p, g1);
    std::vector<Var<T>> outs;
    for (const auto& br : branches_) {
      Var<T> gate = gelu(br.gate_dw(p, br.gate_pw(p, xn)));
      Var<T> value = br.value_dw(p, br.value_pw(p, xn));
      outs.push_back(mul(gate, value));
    }
    return add(ffn_fuse_(p, concat_channels(outs)), g1);
  }

  Var<T> forward(Binder<T>& p, Var<T> x, std::vector<Tensor<T>>* maps = nullptr) const {
    Var<T> g2 = ffn(p, attention(p, x, maps));
    return add(out_(p, concat_channels<T>({g2, x})), x);
  }

  std::size_t channels() const noexcept { return channels_; }

 private:
  std::size_t channels_ = 0;
  LayerNorm<T> norm1_, norm2_;
  std::vector<Branch> branches_;
  Conv<T> attn_fuse_, ffn_fuse_, out_;
};

/// Progressive convolution block. Stage one uses 3x3 atrous convolutions at
/// each rate, stage two depthwise convolutions at each size; within a stage
/// the smallest-scale feature is paired progressively with every other one.
template <class T>
class Pcb {
 public:
  struct Branch {
    Conv<T> spatial, pw1, pw2;
  };
  struct Stage {
    std::vector<Branch> branches;
    std::vector<Conv<T>> pair_fuse;  // one per non-leading scale
    Conv<T> fuse;
  };

  Pcb() = default;
  Pcb(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
      const std::vector<std::size_t>& scales, Rng& rng)
      : channels_(channels) {
    validate_scales(scales);
    stage1_ = make_stage(store, prefix + ".stage1", scales, true, rng);
    stage2_ = make_stage(store, prefix + ".stage2", scales, false, rng);
    out_ = Conv<T>(store, prefix + ".out", ConvSpec::dense(2 * channels, channels, 3), rng);
  }

  /// One C1 C1 (spatial) branch in isolation; exposed for receptive-field probes.
  Var<T> branch(Binder<T>& p, Var<T> x, std::size_t stage, std::size_t index) const {
    const Branch& b = (stage == 1 ? stage1_ : stage2_).branches.at(index);
    return b.pw2(p, gelu(b.pw1(p, b.spatial(p, x))));
  }

  Var<T> forward(Binder<T>& p, Var<T> x) const {
    detail::require_channels(x, channels_, "pcb_forward");
    Var<T> l1 = run_stage(p, stage1_, x);
    Var<T> l2 = run_stage(p, stage2_, l1);
    return add(out_(p, concat_channels<T>({l2, x})), x);
  }

 private:
  Stage make_stage(ParamStore<T>& store, const std::string& prefix,
                   const std::vector<std::size_t>& scales, bool atrous, Rng& rng) {
    const std::size_t C = channels_;
    Stage st;
    for (std::size_t n : scales) {
      const std::string s = std::to_string(n);
      const ConvSpec spatial = atrous ? ConvSpec::dense(C, C, 3, n) : ConvSpec::depthwise_of(C, n);
      st.branches.push_back(Branch{
          Conv<T>(store, prefix + (atrous ? ".ac" : ".dw") + s, spatial, rng),
          Conv<T>(store, prefix + ".b" + s + ".pw1", ConvSpec::dense(C, C, 1), rng),
          Conv<T>(store, prefix + ".b" + s + ".pw2", ConvSpec::dense(C, C, 1), rng)});
    }
    for (std::size_t i = 1; i < scales.size(); ++i)
      st.pair_fuse.push_back(Conv<T>(store, prefix + ".pair" + std::to_string(scales[i]),
                                     ConvSpec::dense(3 * C, C, 3), rng));
    st.fuse = Conv<T>(store, prefix + ".fuse", ConvSpec::dense(scales.size() * C, C, 3), rng);
    return st;
  }

  Var<T> run_stage(Binder<T>& p, const Stage& st, Var<T> x) const {
    std::vector<Var<T>> feats;
    for (const auto& b : st.branches) feats.push_back(b.pw2(p, gelu(b.pw1(p, b.spatial(p, x)))));
    std::vector<Var<T>> fused;
    for (std::size_t i = 1; i < feats.size(); ++i)
      fused.push_back(st.pair_fuse[i - 1](p, concat_channels<T>({feats[0], feats[i], x})));
    fused.push_back(feats[0]);
    return add(st.fuse(p, concat_channels(fused)), x);
  }

  std::size_t channels_ = 0;
  Stage stage1_, stage2_;
  Conv<T> out_;
};

/// Group-wise hybrid interaction of a global map G and a local map L.
template <class T>
class Ghim {
 public:
  static constexpr std::size_t kGroups = 4;

  Ghim() = default;
  Ghim(ParamStore<T>& store, const std::string& prefix, std::size_t channels, FusionMode mode, Rng& rng)
      : channels_(channels), mode_(mode) {
    if (channels % kGroups != 0)
      throw ConfigError("GHIM needs a channel count divisible by 4, got " + std::to_string(channels));
    const std::size_t gw = channels / kGroups;
    const std::size_t in = mode == FusionMode::kAdd ? gw : 2 * gw;
    for (std::size_t m = 0; m < kGroups; ++m)
      groups_.push_back(Conv<T>(store, prefix + ".group" + std::to_string(m + 1),
                                ConvSpec::dense(in, gw, 3), rng));
    mix_ = Conv<T>(store, prefix + ".mix", ConvSpec::dense(3 * channels, channels, 3), rng);
    gate_ = Conv<T>(store, prefix + ".gate", ConvSpec::dense(channels, channels, 3), rng);
    post3_ = Conv<T>(store, prefix + ".post3", ConvSpec::dense(channels, channels, 3), rng);
    post1_ = Conv<T>(store, prefix + ".post1", ConvSpec::dense(channels, channels, 1), rng);
  }

  Var<T> forward(Binder<T>& p, Var<T> g, Var<T> l) const {
    if (g.shape() != l.shape())
      throw DimensionError("ghim_forward: G " + shape_str(g.shape()) + " vs L " + shape_str(l.shape()));
    detail::require_channels(g, channels_, "ghim_forward");
    const std::size_t gw = channels_ / kGroups;
    std::vector<Var<T>> parts;
    for (std::size_t m = 0; m < kGroups; ++m) {
      Var<T> gm = slice_channels(g, m * gw, gw);
      Var<T> lm = slice_channels(l, m * gw, gw);
      Var<T> merged = mode_ == FusionMode::kAdd ? add(lm, gm) : concat_channels<T>({lm, gm});
      parts.push_back(groups_[m](p, merged));
    }
    parts.push_back(g);
    parts.push_back(l);
    Var<T> mixed = mix_(p, concat_channels(parts));
    Var<T> gated = mul(gated_conv(p, mixed), mixed);
    return post1_(p, post3_(p, add(gated, mixed)));
  }

  /// 3x3 convolution squashed to (0, 1).
  Var<T> gated_conv(Binder<T>& p, Var<T> x) const { return sigmoid(gate_(p, x)); }

 private:
  std::size_t channels_ = 0;
  FusionMode mode_ = FusionMode::kAdd;
  std::vector<Conv<T>> groups_;
  Conv<T> mix_, gate_, post3_, post1_;
};

struct CosFlags {
  bool gpm = true;
  bool lrm = true;
  bool ghim = true;
};

template <class T>
struct CosOutput {
  std::optional<Var<T>> global;  // G
  std::optional<Var<T>> local;   // L
  Var<T> fused;                  // F
};

/// Per-level collaborative optimization. With GHIM disabled but both branches
/// active, G and L are fused by concatenation and a 3x3 convolution. With one
/// branch disabled, F is the remaining branch (or E when both are off).
template <class T>
class Cos {
 public:
  Cos() = default;
  Cos(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
      const std::vector<std::size_t>& scales, FusionMode mode, CosFlags flags, Rng& rng)
      : flags_(flags) {
    if (flags.gpm) mtb_ = Mtb<T>(store, prefix + ".mtb", channels, scales, rng);
    if (flags.lrm) pcb_ = Pcb<T>(store, prefix + ".pcb", channels, scales, rng);
    if (flags.gpm && flags.lrm) {
      if (flags.ghim)
        ghim_ = Ghim<T>(store, prefix + ".ghim", channels, mode, rng);
      else
        concat_fuse_ = Conv<T>(store, prefix + ".catfuse", ConvSpec::dense(2 * channels, channels, 3), rng);
    }
  }

  CosOutput<T> forward(Binder<T>& p, Var<T> e, std::vector<Tensor<T>>* maps = nullptr) const {
    CosOutput<T> out{{}, {}, e};
    if (flags_.gpm) out.global = mtb_.forward(p, e, maps);
    if (flags_.lrm) out.local = pcb_.forward(p, e);
    if (out.global && out.local)
      out.fused = flags_.ghim ? ghim_.forward(p, *out.global, *out.local)
                              : concat_fuse_(p, concat_channels<T>({*out.global, *out.local}));
    else if (out.global)
      out.fused = *out.global;
    else if (out.local)
      out.fused = *out.local;
    return out;
  }

  const Mtb<T>& mtb() const noexcept { return mtb_; }
  const Pcb<T>& pcb() const noexcept { return pcb_; }
  const Ghim<T>& ghim() const noexcept { return ghim_; }

 private:
  CosFlags flags_;
  Mtb<T> mtb_;
  Pcb<T> pcb_;
  Ghim<T> ghim_;
  Conv<T> concat_fuse_;
};

}  // namespace glco
