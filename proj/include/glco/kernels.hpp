#pragma once

// Raw forward/backward kernels on Tensor values. The differentiable wrappers
// in autograd.hpp register these on the tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "glco/error.hpp"
#include "glco/parallel.hpp"
#include "glco/tensor.hpp"

namespace glco {

/// Convolution geometry. Padding defaults to the extent-preserving
/// dilation*(kernel-1)/2.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t groups = 1;

  std::size_t padding() const { return dilation * (kernel - 1) / 2; }
  bool depthwise() const { return groups == in_channels && groups == out_channels; }

  Shape weight_shape() const {
    return {out_channels, in_channels / groups, kernel, kernel};
  }

  std::size_t out_extent(std::size_t in) const {
    const long num = long(in) + 2 * long(padding()) - long(dilation * (kernel - 1)) - 1;
    if (num < 0) return 0;
    return std::size_t(num) / stride + 1;
  }

  void validate() const {
    if (kernel == 0 || kernel % 2 == 0)
      throw ContractError("conv kernel must be odd and positive, got " + std::to_string(kernel));
    if (stride == 0 || dilation == 0 || groups == 0)
      throw ContractError("conv stride, dilation and groups must be >= 1");
    if (in_channels % groups != 0 || out_channels % groups != 0)
      throw DimensionError("conv channels (" + std::to_string(in_channels) + " -> " +
                           std::to_string(out_channels) + ") not divisible by groups " +
                           std::to_string(groups));
  }

  static ConvSpec dense(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation = 1) {
    return {in, out, k, 1, dilation, 1};
  }
  static ConvSpec depthwise_of(std::size_t channels, std::size_t k, std::size_t dilation = 1) {
    return {channels, channels, k, 1, dilation, channels};
  }
};

namespace kernels {

namespace detail {
// Output columns ox whose input column ox*s - p + off lies in [0, w).
inline void valid_range(long w, long out_w, long s, long p, long off, long& lo, long& hi) {
  const long a = p - off;  // need ox*s >= a
  lo = a <= 0 ? 0 : (a + s - 1) / s;
  const long b = w - 1 + p - off;  // need ox*s <= b
  hi = b < 0 ? 0 : b / s + 1;
  lo = std::max(0L, lo);
  hi = std::min(out_w, hi);
}
}  // namespace detail

template <class T>
void check_conv_args(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& w,
                     const Tensor<T>* bias) {
  spec.validate();
  require_rank(x, 4, "conv2d input");
  if (x.dim(1) != spec.in_channels)
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) +
                         " channels, spec expects " + std::to_string(spec.in_channels));
  if (w.shape() != spec.weight_shape())
    throw DimensionError("conv2d: weight shape " + shape_str(w.shape()) + " expected " +
                         shape_str(spec.weight_shape()));
  if (bias && !bias->empty() && bias->shape() != Shape{spec.out_channels})
    throw DimensionError("conv2d: bias shape " + shape_str(bias->shape()));
  if (spec.out_extent(x.dim(2)) == 0 || spec.out_extent(x.dim(3)) == 0)
    throw DimensionError("conv2d: input " + shape_str(x.shape()) +
                         " smaller than the receptive extent");
}

/// Zero-padded cross-correlation.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& w,
                 const Tensor<T>* bias) {
  check_conv_args(x, spec, w, bias);
  const long B = long(x.dim(0)), H = long(x.dim(2)), W = long(x.dim(3));
  const long OH = long(spec.out_extent(H)), OW = long(spec.out_extent(W));
  const long K = long(spec.kernel), S = long(spec.stride), D = long(spec.dilation),
             P = long(spec.padding());
  const long IC = long(spec.in_channels), OC = long(spec.out_channels);
  const long icpg = IC / long(spec.groups), ocpg = OC / long(spec.groups);
  Tensor<T> y({std::size_t(B), std::size_t(OC), std::size_t(OH), std::size_t(OW)});
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  T* yp = y.ptr();
  const bool has_bias = bias && !bias->empty();

  parallel_for(std::size_t(B * OC), [&](std::size_t job) {
    const long b = long(job) / OC, oc = long(job) % OC;
    const long g = oc / ocpg;
    T* out = yp + (b * OC + oc) * OH * OW;
    std::fill(out, out + OH * OW, has_bias ? (*bias)[std::size_t(oc)] : T(0));
    for (long icl = 0; icl < icpg; ++icl) {
      const long ic = g * icpg + icl;
      const T* in = xp + (b * IC + ic) * H * W;
      const T* wk = wp + (oc * icpg + icl) * K * K;
      for (long kh = 0; kh < K; ++kh) {
        for (long oy = 0; oy < OH; ++oy) {
          const long iy = oy * S - P + kh * D;
          if (iy < 0 || iy >= H) continue;
          const T* row = in + iy * W;
          T* orow = out + oy * OW;
          for (long kw = 0; kw < K; ++kw) {
            const T wv = wk[kh * K + kw];
            long lo, hi;
            detail::valid_range(W, OW, S, P, kw * D, lo, hi);
            const long off = kw * D - P;
            for (long ox = lo; ox < hi; ++ox) orow[ox] += wv * row[ox * S + off];
          }
        }
      }
    }
  });
  return y;
}

/// Gradients of conv2d. Any of gx/gw/gb may be null.
template <class T>
void conv2d_backward(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& w,
                     const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const long B = long(x.dim(0)), H = long(x.dim(2)), W = long(x.dim(3));
  const long OH = long(gy.dim(2)), OW = long(gy.dim(3));
  const long K = long(spec.kernel), S = long(spec.stride), D = long(spec.dilation),
             P = long(spec.padding());
  const long IC = long(spec.in_channels), OC = long(spec.out_channels);
  const long icpg = IC / long(spec.groups), ocpg = OC / long(spec.groups);
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  const T* gyp = gy.ptr();

  if (gb) {
    for (long oc = 0; oc < OC; ++oc) {
      T acc = 0;
      for (long b = 0; b < B; ++b) {
        const T* g = gyp + (b * OC + oc) * OH * OW;
        for (long i = 0; i < OH * OW; ++i) acc += g[i];
      }
      (*gb)[std::size_t(oc)] += acc;
    }
  }

  if (gw) {
    T* gwp = gw->ptr();
    parallel_for(std::size_t(OC), [&](std::size_t ocs) {
      const long oc = long(ocs);
      const long g = oc / ocpg;
      for (long b = 0; b < B; ++b) {
        const T* go = gyp + (b * OC + oc) * OH * OW;
        for (long icl = 0; icl < icpg; ++icl) {
          const long ic = g * icpg + icl;
          const T* in = xp + (b * IC + ic) * H * W;
          T* gk = gwp + (oc * icpg + icl) * K * K;
          for (long kh = 0; kh < K; ++kh) {
            for (long kw = 0; kw < K; ++kw) {
              long lo, hi;
              detail::valid_range(W, OW, S, P, kw * D, lo, hi);
              const long off = kw * D - P;
              T acc = 0;
              for (long oy = 0; oy < OH; ++oy) {
                const long iy = oy * S - P + kh * D;
                if (iy < 0 || iy >= H) continue;
                const T* row = in + iy * W;
                const T* grow = go + oy * OW;
                for (long ox = lo; ox < hi; ++ox) acc += grow[ox] * row[ox * S + off];
              }
              gk[kh * K + kw] += acc;
            }
          }
        }
      }
    });
  }

  if (gx) {
    T* gxp = gx->ptr();
    parallel_for(std::size_t(B * IC), [&](std::size_t job) {
      const long b = long(job) / IC, ic = long(job) % IC;
      const long g = ic / icpg, icl = ic % icpg;
      T* gin = gxp + (b * IC + ic) * H * W;
      for (long ocl = 0; ocl < ocpg; ++ocl) {
        const long oc = g * ocpg + ocl;
        const T* go = gyp + (b * OC + oc) * OH * OW;
        const T* wk = wp + (oc * icpg + icl) * K * K;
        for (long kh = 0; kh < K; ++kh) {
          for (long oy = 0; oy < OH; ++oy) {
            const long iy = oy * S - P + kh * D;
            if (iy < 0 || iy >= H) continue;
            T* row = gin + iy * W;
            const T* grow = go + oy * OW;
            for (long kw = 0; kw < K; ++kw) {
              const T wv = wk[kh * K + kw];
              long lo, hi;
              detail::valid_range(W, OW, S, P, kw * D, lo, hi);
              const long off = kw * D - P;
              for (long ox = lo; ox < hi; ++ox) row[ox * S + off] += wv * grow[ox];
            }
          }
        }
      }
    });
  }
}

/// [b, c*r*r, h, w] -> [b, c, h*r, w*r]
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  require_rank(x, 4, "pixel_shuffle");
  if (r == 0 || x.dim(1) % (r * r) != 0)
    throw DimensionError("pixel_shuffle: " + std::to_string(x.dim(1)) +
                         " channels not divisible by r^2 = " + std::to_string(r * r));
  const std::size_t B = x.dim(0), C = x.dim(1) / (r * r), H = x.dim(2), W = x.dim(3);
  Tensor<T> y({B, C, H * r, W * r});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
              y.at(b, c, h * r + i, w * r + j) = x.at(b, c * r * r + i * r + j, h, w);
  return y;
}

/// Inverse of pixel_shuffle: [b, c, h*r, w*r] -> [b, c*r*r, h, w]
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& y, std::size_t r) {
  require_rank(y, 4, "pixel_unshuffle");
  if (r == 0 || y.dim(2) % r != 0 || y.dim(3) % r != 0)
    throw DimensionError("pixel_unshuffle: extents not divisible by r");
  const std::size_t B = y.dim(0), C = y.dim(1), H = y.dim(2) / r, W = y.dim(3) / r;
  Tensor<T> x({B, C * r * r, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
              x.at(b, c * r * r + i * r + j, h, w) = y.at(b, c, h * r + i, w * r + j);
  return x;
}

namespace detail {
struct LerpTap {
  std::size_t i0, i1;
  double frac;
};

// Half-pixel-centre sampling positions (align_corners = false).
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = double(in) / double(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = std::min(std::size_t(src), in - 1);
    std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - double(i0)};
  }
  return taps;
}
}  // namespace detail

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require_rank(x, 4, "resize_bilinear");
  if (oh == 0 || ow == 0) throw ContractError("resize_bilinear: target extent must be >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (oh == H && ow == W) return x;
  const auto ty = detail::lerp_taps(H, oh), tx = detail::lerp_taps(W, ow);
  Tensor<T> y({B, C, oh, ow});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* in = x.ptr() + bc * H * W;
    T* out = y.ptr() + bc * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto& a = ty[oy];
      const T fy = T(a.frac);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto& c = tx[ox];
        const T fx = T(c.frac);
        const T top = in[a.i0 * W + c.i0] * (1 - fx) + in[a.i0 * W + c.i1] * fx;
        const T bot = in[a.i1 * W + c.i0] * (1 - fx) + in[a.i1 * W + c.i1] * fx;
        out[oy * ow + ox] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return y;
}

template <class T>
void resize_bilinear_backward(const Tensor<T>& gy, Tensor<T>& gx) {
  const std::size_t B = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const std::size_t oh = gy.dim(2), ow = gy.dim(3);
  if (oh == H && ow == W) {
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    return;
  }
  const auto ty = detail::lerp_taps(H, oh), tx = detail::lerp_taps(W, ow);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    T* gin = gx.ptr() + bc * H * W;
    const T* go = gy.ptr() + bc * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto& a = ty[oy];
      const T fy = T(a.frac);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto& c = tx[ox];
        const T fx = T(c.frac);
        const T g = go[oy * ow + ox];
        gin[a.i0 * W + c.i0] += g * (1 - fy) * (1 - fx);
        gin[a.i0 * W + c.i1] += g * (1 - fy) * fx;
        gin[a.i1 * W + c.i0] += g * fy * (1 - fx);
        gin[a.i1 * W + c.i1] += g * fy * fx;
      }
    }
  }
}

/// k x k mean pooling, stride 1, zero padding counted in the divisor.
template <class T>
Tensor<T> mean_pool_same(const Tensor<T>& x, std::size_t k) {
  require_rank(x, 4, "mean_pool_same");
  if (k % 2 == 0) throw ContractError("mean_pool_same: kernel must be odd");
  const long B = long(x.dim(0) * x.dim(1)), H = long(x.dim(2)), W = long(x.dim(3));
  const long r = long(k) / 2;
  // Separable box sums.
  Tensor<T> tmp(x.shape()), y(x.shape());
  for (long bc = 0; bc < B; ++bc) {
    const T* in = x.ptr() + bc * H * W;
    T* t = tmp.ptr() + bc * H * W;
    for (long yy = 0; yy < H; ++yy)
      for (long xx = 0; xx < W; ++xx) {
        T acc = 0;
        for (long d = -r; d <= r; ++d) {
          const long c = xx + d;
          if (c >= 0 && c < W) acc += in[yy * W + c];
        }
        t[yy * W + xx] = acc;
      }
    T* out = y.ptr() + bc * H * W;
    for (long yy = 0; yy < H; ++yy)
      for (long xx = 0; xx < W; ++xx) {
        T acc = 0;
        for (long d = -r; d <= r; ++d) {
          const long rr = yy + d;
          if (rr >= 0 && rr < H) acc += t[rr * W + xx];
        }
        out[yy * W + xx] = acc / T(k * k);
      }
  }
  return y;
}

inline constexpr double kLayerNormEps = 1e-6;

template <class T>
struct LayerNormResult {
  Tensor<T> y;
  Tensor<T> xhat;     // normalised input
  Tensor<T> inv_std;  // [b, 1, h, w]
};

/// Normalises across channels at every (b, y, x), then per-channel affine.
template <class T>
LayerNormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset) {
  require_rank(x, 4, "layer_norm");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gain.shape() != Shape{C} || offset.shape() != Shape{C})
    throw DimensionError("layer_norm: affine parameters must have shape [" + std::to_string(C) + "]");
  LayerNormResult<T> r{Tensor<T>(x.shape()), Tensor<T>(x.shape()),
                       Tensor<T>({B, 1, x.dim(2), x.dim(3)})};
  for (std::size_t b = 0; b < B; ++b) {
    const T* in = x.ptr() + b * C * HW;
    T* xh = r.xhat.ptr() + b * C * HW;
    T* out = r.y.ptr() + b * C * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      T mu = 0;
      for (std::size_t c = 0; c < C; ++c) mu += in[c * HW + p];
      mu /= T(C);
      T var = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const T d = in[c * HW + p] - mu;
        var += d * d;
      }
      var /= T(C);
      const T inv = T(1) / std::sqrt(var + T(kLayerNormEps));
      r.inv_std[b * HW + p] = inv;
      for (std::size_t c = 0; c < C; ++c) {
        const T v = (in[c * HW + p] - mu) * inv;
        xh[c * HW + p] = v;
        out[c * HW + p] = gain[c] * v + offset[c];
      }
    }
  }
  return r;
}

template <class T>
void layer_norm_backward(const LayerNormResult<T>& fw, const Tensor<T>& gain, const Tensor<T>& gy,
                         Tensor<T>* gx, Tensor<T>* ggain, Tensor<T>* goffset) {
  const std::size_t B = gy.dim(0), C = gy.dim(1), HW = gy.dim(2) * gy.dim(3);
  for (std::size_t b = 0; b < B; ++b) {
    const T* go = gy.ptr() + b * C * HW;
    const T* xh = fw.xhat.ptr() + b * C * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      T m1 = 0, m2 = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const T gh = go[c * HW + p] * gain[c];
        m1 += gh;
        m2 += gh * xh[c * HW + p];
        if (ggain) (*ggain)[c] += go[c * HW + p] * xh[c * HW + p];
        if (goffset) (*goffset)[c] += go[c * HW + p];
      }
      if (!gx) continue;
      m1 /= T(C);
      m2 /= T(C);
      const T inv = fw.inv_std[b * HW + p];
      T* gi = gx->ptr() + b * C * HW;
      for (std::size_t c = 0; c < C; ++c) {
        const T gh = go[c * HW + p] * gain[c];
        gi[c * HW + p] += inv * (gh - m1 - xh[c * HW + p] * m2);
      }
    }
  }
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

template <class T>
T gelu(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
T gelu_grad(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  const T t = std::tanh(u);
  const T du = T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace kernels
}  // namespace glco
