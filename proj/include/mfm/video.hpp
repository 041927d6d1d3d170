#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "mfm/core.hpp"

namespace mfm {

// F x H x W x C video. `data` has one row per (frame, y, x) site in frame-major then
// row-major order and one column per channel, which is exactly the on-disk order.
template <class T>
struct LatentVideo {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  int fps = 8;
  Mat<T> data;

  LatentVideo() = default;
  LatentVideo(int f, int h, int w, int c, int fps_ = 8)
      : frames(f), height(h), width(w), channels(c), fps(fps_), data(Mat<T>::Zero(Eigen::Index(f) * h * w, c)) {
    require(f >= 1 && h >= 1 && w >= 1 && c >= 1, ErrorKind::invalid_range, "video dimensions must be >= 1");
  }

  static LatentVideo like(const LatentVideo& o) { return LatentVideo(o.frames, o.height, o.width, o.channels, o.fps); }

  static LatentVideo from(const LatentVideo& shape, Mat<T> m) {
    LatentVideo v = like(shape);
    require(m.rows() == v.data.rows() && m.cols() == v.data.cols(), ErrorKind::shape_mismatch,
            "video payload shape differs");
    v.data = std::move(m);
    return v;
  }

  static LatentVideo randn(int f, int h, int w, int c, Rng& rng) {
    LatentVideo v(f, h, w, c);
    v.data = rng.normal_matrix<T>(v.data.rows(), c);
    return v;
  }

  Eigen::Index sites() const { return Eigen::Index(frames) * height * width; }
  Eigen::Index size() const { return data.size(); }
  Eigen::Index site(int f, int y, int x) const { return (Eigen::Index(f) * height + y) * width + x; }
  T& at(int f, int y, int x, int c) { return data(site(f, y, x), c); }
  T at(int f, int y, int x, int c) const { return data(site(f, y, x), c); }

  bool same_shape(const LatentVideo& o) const {
    return frames == o.frames && height == o.height && width == o.width && channels == o.channels;
  }
  bool finite() const { return data.allFinite(); }

  template <class U>
  LatentVideo<U> cast() const {
    LatentVideo<U> v(frames, height, width, channels, fps);
    v.data = data.template cast<U>();
    return v;
  }
};

template <class T>
void require_same_shape(const LatentVideo<T>& a, const LatentVideo<T>& b, const char* what) {
  require(a.same_shape(b), ErrorKind::shape_mismatch, what);
}

namespace detail {

inline void write_f32_le(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u;
      std::memcpy(&u, p + i, 4);
      u = __builtin_bswap32(u);
      os.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
}

inline void read_f32_le(std::istream& is, float* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
  require(static_cast<std::size_t>(is.gcount()) == n * sizeof(float), ErrorKind::format, "truncated f32 payload");
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u;
      std::memcpy(&u, p + i, 4);
      u = __builtin_bswap32(u);
      std::memcpy(p + i, &u, 4);
    }
  }
}

inline nlohmann::json read_header_line(std::istream& is, const std::string& what) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), ErrorKind::format, what + ": missing header line");
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, what + ": bad header: " + e.what());
  }
}

}  // namespace detail

// .lvid: one JSON header line, then F*H*W*C little-endian f32 values.
template <class T>
void write_lvid(const std::filesystem::path& path, const LatentVideo<T>& v) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  nlohmann::ordered_json h;
  h["F"] = v.frames;
  h["H"] = v.height;
  h["W"] = v.width;
  h["C"] = v.channels;
  h["fps"] = v.fps;
  h["dtype"] = "f32";
  os << h.dump() << '\n';
  const Mat<float> f = v.data.template cast<float>();
  detail::write_f32_le(os, f.data(), static_cast<std::size_t>(f.size()));
  require(static_cast<bool>(os), ErrorKind::io, "write failed: " + path.string());
}

template <class T = float>
LatentVideo<T> read_lvid(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
  const auto h = detail::read_header_line(is, path.string());
  require(h.value("dtype", "") == "f32", ErrorKind::format, "unsupported lvid dtype");
  LatentVideo<float> v(h.at("F").get<int>(), h.at("H").get<int>(), h.at("W").get<int>(), h.at("C").get<int>(),
                       h.value("fps", 8));
  detail::read_f32_le(is, v.data.data(), static_cast<std::size_t>(v.data.size()));
  if constexpr (std::is_same_v<T, float>) {
    return v;
  } else {
    return v.template cast<T>();
  }
}

}  // namespace mfm
