#pragma once

// Binary tensor format:
//   "TNSR" | u8 version | u8 rank | rank x u64 extents (LE) | u8 dtype (4|8) | payload (LE floats)
// Named archive:
//   "GLCA" | u8 version | u64 count | count x (u32 name length | name bytes | TNSR record)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>

#include "glco/error.hpp"
#include "glco/tensor.hpp"

namespace glco {

inline constexpr std::uint8_t kTensorFormatVersion = 1;
inline constexpr std::uint8_t kArchiveFormatVersion = 1;

namespace detail {

template <class U>
void write_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = char((v >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <class U>
U read_le(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U)))
    throw DataError("unexpected end of tensor stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(buf[i]) << (8 * i);
  return v;
}

inline void expect_magic(std::istream& is, const char* magic) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw DataError(std::string("bad magic, expected '") + magic + "'");
}

}  // namespace detail

enum class DType : std::uint8_t { kF32 = 4, kF64 = 8 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
}

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("TNSR", 4);
  detail::write_le<std::uint8_t>(os, kTensorFormatVersion);
  if (t.rank() > 255) throw ContractError("write_tensor: rank exceeds 255");
  detail::write_le<std::uint8_t>(os, std::uint8_t(t.rank()));
  for (std::size_t e : t.shape()) detail::write_le<std::uint64_t>(os, std::uint64_t(e));
  detail::write_le<std::uint8_t>(os, std::uint8_t(dtype_of<T>()));
  for (T v : t.data()) {
    if constexpr (std::is_same_v<T, float>)
      detail::write_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
    else
      detail::write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
}

/// Reads one record; converts precision when the stored dtype differs from T.
template <class T>
Tensor<T> read_tensor(std::istream& is) {
  detail::expect_magic(is, "TNSR");
  const auto version = detail::read_le<std::uint8_t>(is);
  if (version != kTensorFormatVersion)
    throw DataError("unsupported tensor format version " + std::to_string(version));
  const auto rank = detail::read_le<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& e : shape) {
    e = std::size_t(detail::read_le<std::uint64_t>(is));
    if (e == 0) throw DataError("tensor record has a zero extent");
  }
  const auto dtype = detail::read_le<std::uint8_t>(is);
  Tensor<T> t(shape);
  if (dtype == std::uint8_t(DType::kF32)) {
    for (auto& v : t.data()) v = T(std::bit_cast<float>(detail::read_le<std::uint32_t>(is)));
  } else if (dtype == std::uint8_t(DType::kF64)) {
    for (auto& v : t.data()) v = T(std::bit_cast<double>(detail::read_le<std::uint64_t>(is)));
  } else {
    throw DataError("unknown tensor dtype byte " + std::to_string(dtype));
  }
  return t;
}

template <class T>
using NamedTensors = std::map<std::string, Tensor<T>>;

template <class T>
void write_archive(std::ostream& os, const NamedTensors<T>& tensors) {
  os.write("GLCA", 4);
  detail::write_le<std::uint8_t>(os, kArchiveFormatVersion);
  detail::write_le<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail::write_le<std::uint32_t>(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_tensor(os, t);
  }
}

template <class T>
NamedTensors<T> read_archive(std::istream& is) {
  detail::expect_magic(is, "GLCA");
  const auto version = detail::read_le<std::uint8_t>(is);
  if (version != kArchiveFormatVersion)
    throw DataError("unsupported archive version " + std::to_string(version));
  const auto count = detail::read_le<std::uint64_t>(is);
  NamedTensors<T> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated archive entry name");
    out.emplace(std::move(name), read_tensor<T>(is));
  }
  return out;
}

template <class T>
void save_archive(const std::string& path, const NamedTensors<T>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_archive(os, tensors);
  if (!os) throw DataError("failed writing '" + path + "'");
}

template <class T>
NamedTensors<T> load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  return read_archive<T>(is);
}

}  // namespace glco
