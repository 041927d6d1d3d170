#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mfm {

// Row-major dynamic matrix; the value type of every tensor in the library.
// Videos, activations and attention maps are all stored as (rows = sites, cols = features).
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorKind {
  invalid_range,
  shape_mismatch,
  timestep_out_of_range,
  degenerate_coefficient,
  sigma_out_of_range,
  unknown_token,
  unknown_target,
  rank_too_large,
  invalid_config,
  block_out_of_range,
  empty_set,
  divergence,
  io,
  format,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) throw Error(kind, what);
}

// Thin seeded generator. libstdc++ distributions are deterministic for a fixed seed,
// which is all the reproducibility contract needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Inclusive range.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  template <class T>
  Mat<T> normal_matrix(Eigen::Index rows, Eigen::Index cols, double std = 1.0) {
    Mat<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(std * normal());
    return m;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Stable 64-bit mixing for deriving independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <class T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

// Keeps large tensor buffers on the heap instead of mmap/munmap per allocation; the
// page faults otherwise cost about a third of a forward pass. Call once from main.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace mfm
