#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ituner/tensor.hpp"

namespace ituner {

// TAR1 tensor archive.
//
//   magic "TAR1"
//   u32 LE tensor count
//   per tensor, in sorted-name order:
//     u32 LE name length, UTF-8 name
//     u32 LE rank, rank x u64 LE dims
//     u8 dtype code (0 = f32 little-endian)
//     raw f32 LE data
//
// Writers always emit sorted names so identical states produce identical
// bytes.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("archive: truncated file: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("archive: truncated file: " + path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <class Real>
void write_archive(const std::string& path,
                   std::vector<std::pair<std::string, Tensor<Real>>> tensors) {
  std::sort(tensors.begin(), tensors.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < tensors.size(); ++i)
    if (tensors[i].first == tensors[i - 1].first)
      throw std::invalid_argument("archive: duplicate tensor name '" + tensors[i].first + "'");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("archive: cannot open for writing: " + path);
  os.write("TAR1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u64(os, d);
    os.put(static_cast<char>(0));  // dtype 0 = f32
    std::vector<float> buf(t.numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(t.data()[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("archive: write failed: " + path);
}

template <class Real = float>
std::map<std::string, Tensor<Real>> read_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("archive: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "TAR1", 4) != 0)
    throw std::runtime_error("archive: bad magic, not a TAR1 file: " + path);
  const std::uint32_t count = detail::get_u32(is, path);
  std::map<std::string, Tensor<Real>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw std::runtime_error("archive: truncated file: " + path);
    const std::uint32_t rank = detail::get_u32(is, path);
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<std::size_t>(detail::get_u64(is, path));
    const int dtype = is.get();
    if (dtype == EOF) throw std::runtime_error("archive: truncated file: " + path);
    if (dtype != 0)
      throw std::runtime_error("archive: unsupported dtype code " + std::to_string(dtype) +
                               " for tensor '" + name + "' in " + path);
    std::vector<float> buf(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float))))
      throw std::runtime_error("archive: truncated file: " + path);
    std::vector<Real> data(buf.size());
    for (std::size_t j = 0; j < buf.size(); ++j) data[j] = static_cast<Real>(buf[j]);
    out.emplace(name, Tensor<Real>::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace ituner
