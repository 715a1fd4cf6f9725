#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ituner {

// Interleaved 8-bit RGB buffer, row-major.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  std::uint8_t* pixel(std::size_t y, std::size_t x) { return rgb.data() + (y * width + x) * 3; }
  const std::uint8_t* pixel(std::size_t y, std::size_t x) const {
    return rgb.data() + (y * width + x) * 3;
  }
};

namespace detail {

// PNM headers allow comments and arbitrary whitespace between fields.
inline std::uint64_t pnm_field(std::istream& is, const std::string& path) {
  int c = is.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = is.get();
    c = is.get();
  }
  std::uint64_t v = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw std::runtime_error("image: malformed PNM header: " + path);
  return v;
}

}  // namespace detail

inline void save_ppm(const std::string& path, const RawImage& img) {
  if (img.width == 0 || img.height == 0) throw std::invalid_argument("image: empty image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("image: cannot open for writing: " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw std::runtime_error("image: write failed: " + path);
}

inline RawImage load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("image: cannot open: " + path);
  char m0 = 0, m1 = 0;
  is.get(m0).get(m1);
  if (m0 != 'P' || m1 != '6') throw std::runtime_error("image: not a binary PPM (P6): " + path);
  RawImage img;
  img.width = static_cast<std::size_t>(detail::pnm_field(is, path));
  img.height = static_cast<std::size_t>(detail::pnm_field(is, path));
  const std::uint64_t maxval = detail::pnm_field(is, path);
  if (maxval != 255) throw std::runtime_error("image: only maxval 255 PPM supported: " + path);
  img.rgb.resize(img.width * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(img.rgb.data()),
               static_cast<std::streamsize>(img.rgb.size())))
    throw std::runtime_error("image: truncated PPM: " + path);
  return img;
}

// Grayscale PGM (P5), used by the attention-heatmap exporter.
inline void save_pgm(const std::string& path, std::size_t width, std::size_t height,
                     const std::vector<std::uint8_t>& gray) {
  if (gray.size() != width * height) throw std::invalid_argument("image: PGM size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("image: cannot open for writing: " + path);
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!os) throw std::runtime_error("image: write failed: " + path);
}

inline std::vector<std::uint8_t> load_pgm(const std::string& path, std::size_t& width,
                                          std::size_t& height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("image: cannot open: " + path);
  char m0 = 0, m1 = 0;
  is.get(m0).get(m1);
  if (m0 != 'P' || m1 != '5') throw std::runtime_error("image: not a binary PGM (P5): " + path);
  width = static_cast<std::size_t>(detail::pnm_field(is, path));
  height = static_cast<std::size_t>(detail::pnm_field(is, path));
  const std::uint64_t maxval = detail::pnm_field(is, path);
  if (maxval != 255) throw std::runtime_error("image: only maxval 255 PGM supported: " + path);
  std::vector<std::uint8_t> gray(width * height);
  if (!is.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size())))
    throw std::runtime_error("image: truncated PGM: " + path);
  return gray;
}

}  // namespace ituner
