#pragma once

// Binary-segmentation evaluation: MAE, precision/recall and F-measure
// curves, adaptive F, weighted F, S-measure and E-measure.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "glco/error.hpp"

namespace glco::metrics {

inline constexpr double kBetaSq = 0.3;        // F-measure precision emphasis
inline constexpr double kStructureAlpha = 0.5;  // S-measure object/region balance
inline constexpr double kEps = 2.220446049250313e-16;

/// Prediction in [0,1] and binary ground truth of equal extent, row-major.
class MaskPair {
 public:
  MaskPair(std::size_t height, std::size_t width, std::vector<double> pred, std::vector<double> gt)
      : h_(height), w_(width), pred_(std::move(pred)), gt_(std::move(gt)) {
    if (h_ == 0 || w_ == 0) throw DimensionError("MaskPair: empty extent");
    if (pred_.size() != h_ * w_ || gt_.size() != h_ * w_)
      throw DimensionError("MaskPair: prediction (" + std::to_string(pred_.size()) + ") and mask (" +
                           std::to_string(gt_.size()) + ") do not match " + std::to_string(h_) + "x" +
                           std::to_string(w_));
    for (double v : pred_)
      if (!(v >= 0 && v <= 1)) throw ContractError("MaskPair: prediction outside [0,1]");
    for (double v : gt_)
      if (v != 0 && v != 1) throw ContractError("MaskPair: mask must be binary");
  }

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t size() const noexcept { return pred_.size(); }
  const std::vector<double>& pred() const noexcept { return pred_; }
  const std::vector<double>& gt() const noexcept { return gt_; }
  double p(std::size_t y, std::size_t x) const { return pred_[y * w_ + x]; }
  double g(std::size_t y, std::size_t x) const { return gt_[y * w_ + x]; }

  MaskPair transposed() const {
    std::vector<double> p(size()), g(size());
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x) {
        p[x * h_ + y] = pred_[y * w_ + x];
        g[x * h_ + y] = gt_[y * w_ + x];
      }
    return MaskPair(w_, h_, std::move(p), std::move(g));
  }

 private:
  std::size_t h_, w_;
  std::vector<double> pred_, gt_;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Empty prediction counts as precision 1; empty mask as recall 1.
inline double precision_of(const Confusion& c) {
  return c.tp + c.fp == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fp);
}
inline double recall_of(const Confusion& c) {
  return c.tp + c.fn == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fn);
}
inline double f_measure(double precision, double recall, double beta_sq = kBetaSq) {
  const double den = beta_sq * precision + recall;
  return den <= 0 ? 0.0 : (1 + beta_sq) * precision * recall / den;
}

inline double mae(const MaskPair& m) {
  double acc = 0;
  for (std::size_t i = 0; i < m.size(); ++i) acc += std::abs(m.pred()[i] - m.gt()[i]);
  return acc / double(m.size());
}

struct CurvePoint {
  double threshold;
  double precision;
  double recall;
  double f;
  Confusion counts;
};

/// Rows k = 0..255 with threshold k/255; a pixel is positive when P >= threshold.
struct CurveTable {
  std::array<CurvePoint, 256> rows;
};

/// Highest k with k/255 <= v.
inline std::size_t threshold_bin(double v) {
  long k = std::clamp(long(std::floor(v * 255.0)), 0L, 255L);
  while (k < 255 && double(k + 1) / 255.0 <= v) ++k;
  while (k > 0 && double(k) / 255.0 > v) --k;
  return std::size_t(k);
}

inline CurveTable pr_curve(const MaskPair& m) {
  // Histogram of threshold bins per class, then suffix sums.
  std::array<std::size_t, 256> fg{}, bg{};
  std::size_t n_fg = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::size_t k = threshold_bin(m.pred()[i]);
    if (m.gt()[i] == 1) {
      ++fg[k];
      ++n_fg;
    } else {
      ++bg[k];
    }
  }
  const std::size_t n_bg = m.size() - n_fg;
  CurveTable table{};
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 256; k-- > 0;) {
    tp += fg[k];
    fp += bg[k];
    Confusion c{tp, fp, n_fg - tp, n_bg - fp};
    const double pr = precision_of(c), rc = recall_of(c);
    table.rows[k] = CurvePoint{double(k) / 255.0, pr, rc, f_measure(pr, rc), c};
  }
  return table;
}

/// Threshold used by adaptive_f: min(1, 2 mean(P)).
inline double adaptive_threshold(const MaskPair& m) {
  double s = 0;
  for (double v : m.pred()) s += v;
  return std::min(1.0, 2.0 * s / double(m.size()));
}

/// F-measure at the adaptive threshold. Pixels with P = 0 are never positive.
inline double adaptive_f(const MaskPair& m) {
  const double t = adaptive_threshold(m);
  Confusion c;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const bool pos = m.pred()[i] >= t && m.pred()[i] > 0;
    const bool obj = m.gt()[i] == 1;
    if (pos && obj) ++c.tp;
    else if (pos) ++c.fp;
    else if (obj) ++c.fn;
    else ++c.tn;
  }
  return f_measure(precision_of(c), recall_of(c));
}

struct WeightedFConfig {
  std::size_t gaussian_size = 7;
  double gaussian_sigma = 5.0;
  double decay_distance = 5.0;  // background weight reaches 1.5 at this distance
  double beta_sq = 1.0;
};

namespace detail {

struct NearestForeground {
  std::vector<double> distance;     // Euclidean distance to nearest mask pixel
  std::vector<std::size_t> index;   // row-major index of that pixel
};

/// Exact Euclidean distance transform with nearest-site indices (separable
/// lower-envelope method). Requires at least one foreground pixel.
inline NearestForeground nearest_foreground(const std::vector<double>& gt, std::size_t h, std::size_t w) {
  constexpr long kNone = -1;
  std::vector<long> col_near(h * w, kNone);
  for (std::size_t x = 0; x < w; ++x) {
    long last = kNone;
    for (std::size_t y = 0; y < h; ++y) {
      if (gt[y * w + x] == 1) last = long(y);
      col_near[y * w + x] = last;
    }
    last = kNone;
    for (std::size_t y = h; y-- > 0;) {
      if (gt[y * w + x] == 1) last = long(y);
      if (last == kNone) continue;
      const long cur = col_near[y * w + x];
      if (cur == kNone || (last - long(y)) < (long(y) - cur)) col_near[y * w + x] = last;
    }
  }
  NearestForeground out{std::vector<double>(h * w), std::vector<std::size_t>(h * w)};
  std::vector<long> v(w);
  std::vector<double> z(w + 1);
  std::vector<double> f(w);
  for (std::size_t y = 0; y < h; ++y) {
    long k = -1;
    for (std::size_t x = 0; x < w; ++x) {
      const long r = col_near[y * w + x];
      if (r == kNone) continue;
      const double dy = double(r) - double(y);
      f[x] = dy * dy;
      const double q = double(x);
      if (k < 0) {
        k = 0;
        v[0] = long(x);
        z[0] = -std::numeric_limits<double>::infinity();
        z[1] = std::numeric_limits<double>::infinity();
        continue;
      }
      auto meet = [&](long site) {
        const double vk = double(site);
        return ((f[x] + q * q) - (f[std::size_t(site)] + vk * vk)) / (2 * q - 2 * vk);
      };
      double s = meet(v[std::size_t(k)]);
      while (s <= z[std::size_t(k)]) s = meet(v[std::size_t(--k)]);
      ++k;
      v[std::size_t(k)] = long(x);
      z[std::size_t(k)] = s;
      z[std::size_t(k) + 1] = std::numeric_limits<double>::infinity();
    }
    if (k < 0) continue;  // unreachable when the mask is non-empty
    long j = 0;
    for (std::size_t x = 0; x < w; ++x) {
      while (z[std::size_t(j) + 1] < double(x)) ++j;
      const std::size_t sx = std::size_t(v[std::size_t(j)]);
      const double dx = double(x) - double(sx);
      out.distance[y * w + x] = std::sqrt(dx * dx + f[sx]);
      out.index[y * w + x] = std::size_t(col_near[y * w + sx]) * w + sx;
    }
  }
  return out;
}

inline std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  std::vector<double> k(size * size);
  const double c = double(size - 1) / 2;
  double s = 0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = double(y) - c, dx = double(x) - c;
      s += k[y * size + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
  for (auto& v : k) v /= s;
  return k;
}

// Zero-padded 'same' correlation.
inline std::vector<double> filter_same(const std::vector<double>& img, std::size_t h, std::size_t w,
                                       const std::vector<double>& kernel, std::size_t ks) {
  std::vector<double> out(h * w, 0.0);
  const long r = long(ks / 2);
  for (long y = 0; y < long(h); ++y)
    for (long x = 0; x < long(w); ++x) {
      double acc = 0;
      for (long dy = -r; dy <= r; ++dy) {
        const long yy = y + dy;
        if (yy < 0 || yy >= long(h)) continue;
        for (long dx = -r; dx <= r; ++dx) {
          const long xx = x + dx;
          if (xx < 0 || xx >= long(w)) continue;
          acc += kernel[std::size_t((dy + r) * long(ks) + dx + r)] * img[std::size_t(yy) * w + std::size_t(xx)];
        }
      }
      out[std::size_t(y) * w + std::size_t(x)] = acc;
    }
  return out;
}

/// Largest err over the object pixels at exactly `dist` from pixel i.
inline double max_tied_error(const std::vector<double>& err, const std::vector<double>& gt, std::size_t h,
                             std::size_t w, std::size_t i, double dist) {
  const long d2 = std::lround(dist * dist);
  const long y = long(i / w), x = long(i % w);
  double best = -1;
  for (long dy = 0; dy * dy <= d2; ++dy) {
    const long dx = std::lround(std::sqrt(double(d2 - dy * dy)));
    if (dx * dx + dy * dy != d2) continue;
    for (long sy : {y - dy, y + dy})
      for (long sx : {x - dx, x + dx}) {
        if (sy < 0 || sy >= long(h) || sx < 0 || sx >= long(w)) continue;
        const std::size_t j = std::size_t(sy) * w + std::size_t(sx);
        if (gt[j] == 1) best = std::max(best, err[j]);
      }
  }
  return best;
}

}  // namespace detail

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

/// Dependency-weighted F-measure. An all-background mask scores 1 - mean(P).
inline double weighted_f(const MaskPair& m, const WeightedFConfig& cfg = {}) {
  const std::size_t h = m.height(), w = m.width(), n = m.size();
  const auto& gt = m.gt();
  double n_fg = 0;
  for (double v : gt) n_fg += v;
  if (n_fg == 0) return 1.0 - mean_of(m.pred());

  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = std::abs(m.pred()[i] - gt[i]);
  const auto nearest = detail::nearest_foreground(gt, h, w);

  // Background pixels inherit the error of their nearest object pixel (the
  // largest one among equidistant pixels, so the field does not depend on scan
  // order), then the field is smoothed to model pixel dependency.
  std::vector<double> et = err;
  for (std::size_t i = 0; i < n; ++i)
    if (gt[i] == 0) et[i] = detail::max_tied_error(err, gt, h, w, i, nearest.distance[i]);
  const auto ea = detail::filter_same(et, h, w, detail::gaussian_kernel(cfg.gaussian_size, cfg.gaussian_sigma),
                                      cfg.gaussian_size);
  double tp_w = n_fg, fp_w = 0, fg_err = 0;
  const double decay = std::log(0.5) / cfg.decay_distance;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i] == 1) {
      const double e = std::min(err[i], ea[i]);
      tp_w -= e;
      fg_err += e;
    } else {
      fp_w += err[i] * (2.0 - std::exp(decay * nearest.distance[i]));
    }
  }
  const double recall = 1.0 - fg_err / n_fg;
  const double precision = tp_w / (kEps + tp_w + fp_w);
  return (1 + cfg.beta_sq) * recall * precision / (kEps + recall + cfg.beta_sq * precision);
}

namespace detail {

inline double object_score(const std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  const double mu = mean_of(vals);
  double sd = 0;
  if (vals.size() > 1) {
    for (double v : vals) sd += (v - mu) * (v - mu);
    sd = std::sqrt(sd / double(vals.size() - 1));
  }
  return 2.0 * mu / (mu * mu + 1.0 + sd + kEps);
}

inline double s_object(const MaskPair& m) {
  std::vector<double> fg, bg;
  double u = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.gt()[i] == 1) {
      fg.push_back(m.pred()[i]);
      u += 1;
    } else {
      bg.push_back(1.0 - m.pred()[i]);
    }
  }
  u /= double(m.size());
  return u * object_score(fg) + (1 - u) * object_score(bg);
}

// Region similarity of one block [y0,y1) x [x0,x1).
inline double block_ssim(const MaskPair& m, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
  const double n = double((y1 - y0) * (x1 - x0));
  if (n == 0) return 0.0;
  double mx = 0, my = 0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      mx += m.p(y, x);
      my += m.g(y, x);
    }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const double a = m.p(y, x) - mx, b = m.g(y, x) - my;
      sxx += a * a;
      syy += b * b;
      sxy += a * b;
    }
  const double den = n - 1 + kEps;
  sxx /= den;
  syy /= den;
  sxy /= den;
  const double alpha = 4 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sxx + syy);
  if (alpha != 0) return alpha / (beta + kEps);
  return beta == 0 ? 1.0 : 0.0;
}

inline double s_region(const MaskPair& m) {
  const std::size_t h = m.height(), w = m.width();
  double cy = 0, cx = 0, area = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (m.g(y, x) == 1) {
        cy += double(y);
        cx += double(x);
        area += 1;
      }
  // Split after the (rounded) centroid row/column.
  std::size_t sy, sx;
  if (area == 0) {
    sy = std::size_t(std::round(double(h) / 2)) + 1;
    sx = std::size_t(std::round(double(w) / 2)) + 1;
  } else {
    sy = std::size_t(std::round(cy / area)) + 1;
    sx = std::size_t(std::round(cx / area)) + 1;
  }
  sy = std::min(sy, h);
  sx = std::min(sx, w);
  const double total = double(h * w);
  const double w1 = double(sx * sy) / total;
  const double w2 = double(sy * (w - sx)) / total;
  const double w3 = double((h - sy) * sx) / total;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * block_ssim(m, 0, sy, 0, sx) + w2 * block_ssim(m, 0, sy, sx, w) +
         w3 * block_ssim(m, sy, h, 0, sx) + w4 * block_ssim(m, sy, h, sx, w);
}

}  // namespace detail

/// Structure measure alpha*S_object + (1-alpha)*S_region, clamped to [0,1].
/// All-background mask: 1 - mean(P); all-object mask: mean(P).
inline double s_measure(const MaskPair& m) {
  const double y = mean_of(m.gt());
  if (y == 0) return 1.0 - mean_of(m.pred());
  if (y == 1) return mean_of(m.pred());
  const double s = kStructureAlpha * detail::s_object(m) + (1 - kStructureAlpha) * detail::s_region(m);
  return std::clamp(s, 0.0, 1.0);
}

/// Alignment term 2 a b / (a^2 + b^2 + eps) of two bias-removed values.
inline double alignment(double phi_p, double phi_g) {
  return 2 * phi_p * phi_g / (phi_p * phi_p + phi_g * phi_g + kEps);
}

/// Enhanced-alignment measure on the continuous map. All-background mask
/// scores mean(1 - P); all-object mask mean(P).
inline double e_measure(const MaskPair& m) {
  const double mg = mean_of(m.gt());
  if (mg == 0) return 1.0 - mean_of(m.pred());
  if (mg == 1) return mean_of(m.pred());
  const double mp = mean_of(m.pred());
  double acc = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double xi = alignment(m.pred()[i] - mp, m.gt()[i] - mg);
    acc += (xi + 1) * (xi + 1) / 4;
  }
  return acc / double(m.size());
}

struct Scores {
  double mae = 0, adaptive_f = 0, weighted_f = 0, s_measure = 0, e_measure = 0;
};

inline Scores score_all(const MaskPair& m) {
  return {mae(m), adaptive_f(m), weighted_f(m), s_measure(m), e_measure(m)};
}

}  // namespace glco::metrics
