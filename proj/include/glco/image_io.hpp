#pragma once

// Binary PGM (P5) / PPM (P6) with maxval <= 255.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "glco/error.hpp"
#include "glco/tensor.hpp"

namespace glco {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 (PGM) or 3 (PPM), interleaved
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

namespace detail {
inline std::size_t read_header_int(std::istream& is, const std::string& path) {
  int c = is.get();
  while (is && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (is && c != '\n') c = is.get();
    c = is.get();
  }
  if (!is || !std::isdigit(c)) throw DataError("malformed PNM header in '" + path + "'");
  std::size_t v = 0;
  while (is && std::isdigit(c)) {
    v = v * 10 + std::size_t(c - '0');
    c = is.get();
  }
  return v;  // the single whitespace after the value is consumed
}
}  // namespace detail

inline Image read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image '" + path + "'");
  char magic[2];
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw DataError("'" + path + "' is not a binary PGM/PPM file");
  Image img;
  img.channels = magic[1] == '5' ? 1 : 3;
  img.width = detail::read_header_int(is, path);
  img.height = detail::read_header_int(is, path);
  const std::size_t maxval = detail::read_header_int(is, path);
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 255)
    throw DataError("unsupported PNM geometry or maxval in '" + path + "'");
  img.pixels.resize(img.width * img.height * img.channels);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size())))
    throw DataError("truncated pixel data in '" + path + "'");
  if (maxval != 255)
    for (auto& p : img.pixels) p = std::uint8_t(std::lround(double(p) * 255.0 / double(maxval)));
  return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("write_pnm: 1 or 3 channels only");
  if (img.pixels.size() != img.width * img.height * img.channels)
    throw ContractError("write_pnm: pixel buffer does not match geometry");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (!os) throw DataError("failed writing '" + path + "'");
}

/// Rounds half away from zero after clamping to [0, 1].
inline std::uint8_t quantize_unit(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return std::uint8_t(std::lround(v * 255.0));
}

/// Image -> [1, channels, h, w] with values v / 255.
template <class T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t({1, img.channels, img.height, img.width});
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) t.at(0, c, y, x) = T(img.at(y, x, c)) / T(255);
  return t;
}

/// Single-channel map in [0,1] -> 8-bit PGM image.
template <class T>
Image map_to_image(const Tensor<T>& t) {
  require_rank(t, 4, "map_to_image");
  if (t.dim(0) != 1 || t.dim(1) != 1) throw DimensionError("map_to_image: expects [1,1,h,w]");
  Image img{t.dim(3), t.dim(2), 1, {}};
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = quantize_unit(double(t[i]));
  return img;
}

}  // namespace glco
