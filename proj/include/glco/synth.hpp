#pragma once

// Synthetic camouflage scenes: a textured object on a textured background,
// with the object texture blended toward the background by `strength`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "glco/error.hpp"
#include "glco/image_io.hpp"
#include "glco/parallel.hpp"
#include "glco/tensor.hpp"

namespace glco {

enum class ShapeFamily { kBlob, kRing, kMultiBlob };

inline ShapeFamily parse_family(const std::string& s) {
  if (s == "blob") return ShapeFamily::kBlob;
  if (s == "ring") return ShapeFamily::kRing;
  if (s == "multi-blob") return ShapeFamily::kMultiBlob;
  throw ConfigError("unknown object family '" + s + "' (blob|ring|multi-blob)");
}

inline std::string family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kBlob: return "blob";
    case ShapeFamily::kRing: return "ring";
    case ShapeFamily::kMultiBlob: return "multi-blob";
  }
  return "blob";
}

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t count = 8;
  std::size_t extent = 64;
  ShapeFamily family = ShapeFamily::kBlob;
  double strength = 0.0;   // 0 = easily separable, 1 = object texture equals background
  double occlusion = 0.0;  // fraction of object rows hidden, [0, 1)

  void validate() const {
    if (count == 0) throw ConfigError("synth: count must be positive");
    if (extent < 8) throw ConfigError("synth: extent must be at least 8");
    if (!(strength >= 0 && strength <= 1)) throw ConfigError("synth: strength must lie in [0,1]");
    if (!(occlusion >= 0 && occlusion < 1)) throw ConfigError("synth: occlusion must lie in [0,1)");
  }
};

struct SynthSample {
  Image image;  // 3 channels
  Image mask;   // 1 channel, 0 or 255
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Bilinearly interpolated lattice noise in [0,1].
class ValueNoise {
 public:
  ValueNoise(std::size_t extent, std::size_t cell, Rng& rng) : cell_(double(cell)) {
    n_ = extent / cell + 2;
    lattice_.resize(n_ * n_);
    for (auto& v : lattice_) v = rng.uniform();
  }

  double operator()(double y, double x) const {
    const double fy = y / cell_, fx = x / cell_;
    const std::size_t y0 = std::size_t(fy), x0 = std::size_t(fx);
    const double ty = fy - double(y0), tx = fx - double(x0);
    auto at = [&](std::size_t yy, std::size_t xx) { return lattice_[yy * n_ + xx]; };
    const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
    const double bot = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
    return top * (1 - ty) + bot * ty;
  }

 private:
  double cell_;
  std::size_t n_ = 0;
  std::vector<double> lattice_;
};

struct Lobe {
  double cy, cx, r, amp, freq, phase;

  double radius(double theta) const { return r * (1 + amp * std::sin(freq * theta + phase)); }
  bool inside(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    return std::hypot(dy, dx) <= radius(std::atan2(dy, dx));
  }
};

inline Lobe random_lobe(Rng& rng, double extent, double scale) {
  const double r = extent * rng.uniform(0.15, 0.26) * scale;
  const double margin = r * 1.3;
  return Lobe{rng.uniform(margin, extent - margin), rng.uniform(margin, extent - margin), r,
              rng.uniform(0.05, 0.25), double(2 + rng.index(3)), rng.uniform(0, 6.283185307179586)};
}

}  // namespace detail

/// Deterministic in (spec, index).
inline SynthSample synth_sample(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng(detail::splitmix(spec.seed * 0x100000001B3ull + index));
  const std::size_t E = spec.extent;
  const double e = double(E);

  std::vector<detail::Lobe> lobes;
  double inner = 0;
  switch (spec.family) {
    case ShapeFamily::kBlob: lobes.push_back(detail::random_lobe(rng, e, 1.0)); break;
    case ShapeFamily::kRing:
      lobes.push_back(detail::random_lobe(rng, e, 1.3));
      lobes.back().amp *= 0.4;
      inner = rng.uniform(0.45, 0.6);
      break;
    case ShapeFamily::kMultiBlob: {
      const std::size_t n = 2 + rng.index(2);
      for (std::size_t k = 0; k < n; ++k) lobes.push_back(detail::random_lobe(rng, e, 0.7));
      break;
    }
  }

  std::vector<std::uint8_t> fg(E * E, 0);
  for (std::size_t y = 0; y < E; ++y)
    for (std::size_t x = 0; x < E; ++x) {
      const double py = double(y) + 0.5, px = double(x) + 0.5;
      for (const auto& l : lobes) {
        bool in = l.inside(py, px);
        if (in && inner > 0) {
          const double dy = py - l.cy, dx = px - l.cx;
          in = std::hypot(dy, dx) > inner * l.radius(std::atan2(dy, dx));
        }
        if (in) fg[y * E + x] = 1;
      }
    }
  if (std::find(fg.begin(), fg.end(), 1) == fg.end()) fg[(E / 2) * E + E / 2] = 1;

  // Hide the top `occlusion` share of the object's rows; the lowest object
  // row always stays visible.
  if (spec.occlusion > 0) {
    std::size_t top = E, bottom = 0;
    for (std::size_t y = 0; y < E; ++y)
      for (std::size_t x = 0; x < E; ++x)
        if (fg[y * E + x]) top = std::min(top, y), bottom = std::max(bottom, y);
    const std::size_t rows = bottom - top + 1;
    const std::size_t hidden = std::min(rows - 1, std::size_t(std::floor(spec.occlusion * double(rows))));
    for (std::size_t y = top; y < top + hidden; ++y)
      for (std::size_t x = 0; x < E; ++x) fg[y * E + x] = 0;
  }

  const std::size_t cell = std::max<std::size_t>(4, E / 8);
  detail::ValueNoise bg_noise(E, cell, rng), obj_noise(E, std::max<std::size_t>(2, cell / 2), rng);
  const bool bright_object = rng.uniform() < 0.5;
  const double bg_base = bright_object ? 0.25 : 0.75;
  const double obj_base = bright_object ? 0.75 : 0.25;
  double tint[3];
  for (double& t : tint) t = rng.uniform(-0.08, 0.08);

  SynthSample s;
  s.image = Image{E, E, 3, std::vector<std::uint8_t>(E * E * 3)};
  s.mask = Image{E, E, 1, std::vector<std::uint8_t>(E * E)};
  for (std::size_t y = 0; y < E; ++y)
    for (std::size_t x = 0; x < E; ++x) {
      const double py = double(y), px = double(x);
      const double bg = bg_base + 0.3 * (bg_noise(py, px) - 0.5);
      const double obj = obj_base + 0.3 * (obj_noise(py, px) - 0.5);
      const bool is_fg = fg[y * E + x] != 0;
      const double v = is_fg ? (1 - spec.strength) * obj + spec.strength * bg : bg;
      for (std::size_t c = 0; c < 3; ++c) s.image.at(y, x, c) = quantize_unit(v + tint[c]);
      s.mask.at(y, x) = is_fg ? 255 : 0;
    }
  return s;
}

inline std::string synth_image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%04zu.ppm", i);
  return buf;
}

inline std::string synth_mask_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "gt_%04zu.pgm", i);
  return buf;
}

/// Writes img_%04d.ppm + gt_%04d.pgm for every index into `dir`.
inline void synth_generate(const SynthSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw DataError("synth: cannot create output directory '" + dir.string() + "'");
  parallel_for(spec.count, [&](std::size_t i) {
    const SynthSample s = synth_sample(spec, i);
    write_pnm((dir / synth_image_name(i)).string(), s.image);
    write_pnm((dir / synth_mask_name(i)).string(), s.mask);
  });
}

}  // namespace glco
