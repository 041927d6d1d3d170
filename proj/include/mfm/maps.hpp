#pragma once

#include "mfm/core.hpp"

namespace mfm {

// Intermediate activation at one attention layer. Rows are (frame, y, x) sites of the
// block's resolution, columns are model channels.
template <class T>
struct Activation {
  int frames = 0;
  int height = 0;
  int width = 0;
  Mat<T> values;

  int sites() const { return height * width; }
};

// Cross-attention map: rows (frame, y, x), columns prompt words. Padding words carry 0.
template <class T>
struct CAMap {
  int frames = 0;
  int height = 0;
  int width = 0;
  int words = 0;
  Mat<T> values;

  T at(int f, int y, int x, int l) const { return values((Eigen::Index(f) * height + y) * width + x, l); }
};

// Temporal self-attention map: rows (y, x, query frame), columns key frames.
template <class T>
struct TSAMap {
  int height = 0;
  int width = 0;
  int frames = 0;
  Mat<T> values;

  T at(int y, int x, int fq, int fk) const { return values((Eigen::Index(y) * width + x) * frames + fq, fk); }
};

// Query/key projections of one attention layer (effective weights, adapters included).
template <class T>
struct AttentionProjection {
  Mat<T> query;  // d_in x D
  Mat<T> key;    // d_ctx x D
  int heads = 1;
};

}  // namespace mfm
