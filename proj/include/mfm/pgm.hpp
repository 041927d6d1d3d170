#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "mfm/core.hpp"

namespace mfm {

struct PgmBounds {
  double min = 0.0;
  double max = 0.0;
};

// Writes a binary (P5) 8-bit PGM, min-max normalised over the whole image. A constant
// image maps to 0. Returns the bounds used.
template <class T>
PgmBounds write_pgm(const std::filesystem::path& path, const Mat<T>& img) {
  require(img.size() > 0, ErrorKind::invalid_range, "cannot write an empty image");
  const double lo = double(img.minCoeff()), hi = double(img.maxCoeff());
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  os << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  for (Eigen::Index i = 0; i < img.rows(); ++i)
    for (Eigen::Index j = 0; j < img.cols(); ++j) {
      const double v = hi > lo ? (double(img(i, j)) - lo) / (hi - lo) : 0.0;
      const auto b = static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L));
      os.put(static_cast<char>(b));
    }
  require(static_cast<bool>(os), ErrorKind::io, "write failed: " + path.string());
  return {lo, hi};
}

// Reads back a P5 PGM as values in [0, 255].
inline Mat<double> read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  is >> magic >> w >> h >> maxv;
  require(magic == "P5" && w > 0 && h > 0 && maxv == 255, ErrorKind::format, "unsupported PGM header");
  is.get();
  Mat<double> m(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int c = is.get();
      require(c != EOF, ErrorKind::format, "truncated PGM payload");
      m(i, j) = double(c);
    }
  return m;
}

}  // namespace mfm
