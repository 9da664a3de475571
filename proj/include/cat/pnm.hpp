#ifndef CAT_PNM_HPP
#define CAT_PNM_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cat/tensor.hpp"

namespace cat {

// Binary PGM (P5) / PPM (P6) with maxval 255.

struct GrayImage {
  int w = 0, h = 0;
  std::vector<std::uint8_t> pix;  // row-major
};

struct RgbImage {
  int w = 0, h = 0;
  std::vector<std::uint8_t> pix;  // row-major, interleaved rgb
};

namespace detail {
inline int read_pnm_int(std::istream& is) {
  int c = is.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#')
      while (c != '\n' && c != EOF) c = is.get();
    c = is.get();
  }
  int v = 0;
  bool any = false;
  while (c >= '0' && c <= '9') {
    v = v * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw IoError("pnm: malformed header");
  return v;
}
}  // namespace detail

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("pnm: cannot write " + path);
  os << "P5\n" << img.w << " " << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pix.data()),
           static_cast<std::streamsize>(img.pix.size()));
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("pnm: cannot write " + path);
  os << "P6\n" << img.w << " " << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pix.data()),
           static_cast<std::streamsize>(img.pix.size()));
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("pnm: cannot open " + path);
  char m0 = static_cast<char>(is.get()), m1 = static_cast<char>(is.get());
  if (m0 != 'P' || m1 != '5') throw IoError("pnm: not a binary PGM: " + path);
  GrayImage img;
  img.w = detail::read_pnm_int(is);
  img.h = detail::read_pnm_int(is);
  int maxval = detail::read_pnm_int(is);
  if (maxval != 255) throw IoError("pnm: unsupported maxval in " + path);
  img.pix.resize(static_cast<size_t>(img.w) * img.h);
  is.read(reinterpret_cast<char*>(img.pix.data()),
          static_cast<std::streamsize>(img.pix.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.pix.size()))
    throw IoError("pnm: truncated pixel data in " + path);
  return img;
}

inline RgbImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("pnm: cannot open " + path);
  char m0 = static_cast<char>(is.get()), m1 = static_cast<char>(is.get());
  if (m0 != 'P' || m1 != '6') throw IoError("pnm: not a binary PPM: " + path);
  RgbImage img;
  img.w = detail::read_pnm_int(is);
  img.h = detail::read_pnm_int(is);
  int maxval = detail::read_pnm_int(is);
  if (maxval != 255) throw IoError("pnm: unsupported maxval in " + path);
  img.pix.resize(static_cast<size_t>(img.w) * img.h * 3);
  is.read(reinterpret_cast<char*>(img.pix.data()),
          static_cast<std::streamsize>(img.pix.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.pix.size()))
    throw IoError("pnm: truncated pixel data in " + path);
  return img;
}

// [C,H,W] float tensor in [0,1] from 8-bit images.
template <typename S>
Tensor<S> rgb_to_tensor(const RgbImage& img) {
  Tensor<S> t({3, img.h, img.w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t.data[(c * img.h + y) * img.w + x] =
            S(img.pix[(y * img.w + x) * 3 + c]) / S(255);
  return t;
}

template <typename S>
Tensor<S> gray_to_tensor(const GrayImage& img) {
  Tensor<S> t({1, img.h, img.w});
  for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = S(img.pix[i]) / S(255);
  return t;
}

}  // namespace cat

#endif
