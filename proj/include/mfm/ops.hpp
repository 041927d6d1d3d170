#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "mfm/autodiff.hpp"

namespace mfm::ops {

namespace detail {
template <class T>
bool any_grad(std::initializer_list<Var<T>> vs) {
  for (const auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

inline void check(bool ok, const char* what) { require(ok, ErrorKind::shape_mismatch, what); }
}  // namespace detail

template <class T>
Var<T> matmul(Var<T> x, Var<T> w) {
  detail::check(x.cols() == w.rows(), "matmul: inner dimensions differ");
  Tape<T>& tp = *x.tape;
  tp.flops += 2ull * x.rows() * x.cols() * w.cols();
  Mat<T> out;
  out.noalias() = x.value() * w.value();
  return tp.record(std::move(out), detail::any_grad({x, w}), [x, w](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    if (x.requires_grad()) tp.accumulate(x, (g * w.value().transpose()).eval());
    if (w.requires_grad()) tp.accumulate(w, (x.value().transpose() * g).eval());
  });
}

// x * w^T
template <class T>
Var<T> matmul_nt(Var<T> x, Var<T> w) {
  detail::check(x.cols() == w.cols(), "matmul_nt: inner dimensions differ");
  Tape<T>& tp = *x.tape;
  tp.flops += 2ull * x.rows() * x.cols() * w.rows();
  Mat<T> out;
  out.noalias() = x.value() * w.value().transpose();
  return tp.record(std::move(out), detail::any_grad({x, w}), [x, w](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    if (x.requires_grad()) tp.accumulate(x, (g * w.value()).eval());
    if (w.requires_grad()) tp.accumulate(w, (g.transpose() * x.value()).eval());
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  Mat<T> out = a.value() + b.value();
  return a.tape->record(std::move(out), detail::any_grad({a, b}), [a, b](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

// sa * a + sb * b
template <class T>
Var<T> affine(Var<T> a, T sa, Var<T> b, T sb) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "affine: shapes differ");
  Mat<T> out = sa * a.value() + sb * b.value();
  return a.tape->record(std::move(out), detail::any_grad({a, b}),
                        [a, b, sa, sb](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
                          if (a.requires_grad()) tp.accumulate(a, (sa * g).eval());
                          if (b.requires_grad()) tp.accumulate(b, (sb * g).eval());
                        });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Mat<T> out = s * a.value();
  return a.tape->record(std::move(out), a.requires_grad(),
                        [a, s](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) { tp.accumulate(a, (s * g).eval()); });
}

// Adds a 1 x C row to every row of x.
template <class T>
Var<T> add_row(Var<T> x, Var<T> r) {
  detail::check(r.rows() == 1 && r.cols() == x.cols(), "add_row: row width differs");
  Mat<T> out = x.value().rowwise() + r.value().row(0);
  return x.tape->record(std::move(out), detail::any_grad({x, r}), [x, r](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    tp.accumulate(x, g);
    if (r.requires_grad()) tp.accumulate(r, g.colwise().sum().eval());
  });
}

// Row i of x receives row (i / rows_per_group) of table. Used for per-frame embeddings.
template <class T>
Var<T> add_grouped_rows(Var<T> x, Var<T> table, Eigen::Index rows_per_group) {
  detail::check(table.cols() == x.cols() && table.rows() * rows_per_group == x.rows(),
                "add_grouped_rows: shapes differ");
  Mat<T> out = x.value();
  const auto& tb = table.value();
  for (Eigen::Index g = 0; g < tb.rows(); ++g)
    out.middleRows(g * rows_per_group, rows_per_group).rowwise() += tb.row(g);
  return x.tape->record(std::move(out), detail::any_grad({x, table}),
                        [x, table, rows_per_group](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
                          tp.accumulate(x, g);
                          if (table.requires_grad()) {
                            Mat<T> dt(table.rows(), table.cols());
                            for (Eigen::Index k = 0; k < dt.rows(); ++k)
                              dt.row(k) = g.middleRows(k * rows_per_group, rows_per_group).colwise().sum();
                            tp.accumulate(table, dt);
                          }
                        });
}

template <class T>
Var<T> silu(Var<T> x) {
  const auto& xv = x.value();
  auto sig = std::make_shared<Mat<T>>((T(1) / (T(1) + (-xv.array()).exp())).matrix());
  Mat<T> out = (xv.array() * sig->array()).matrix();
  return x.tape->record(std::move(out), x.requires_grad(), [x, sig](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    const auto s = sig->array();
    tp.accumulate(x, (g.array() * s * (T(1) + x.value().array() * (T(1) - s))).matrix().eval());
  });
}

// Per-row layer normalisation with learned 1 x C gain and shift.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const Eigen::Index n = xv.rows(), c = xv.cols();
  detail::check(gamma.cols() == c && beta.cols() == c, "layer_norm: gain width differs");
  auto xhat = std::make_shared<Mat<T>>(n, c);
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = xv.row(i).mean();
    const T var = (xv.row(i).array() - mean).square().mean();
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[static_cast<std::size_t>(i)] = rs;
    xhat->row(i) = (xv.row(i).array() - mean) * rs;
  }
  Mat<T> out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return x.tape->record(std::move(out), detail::any_grad({x, gamma, beta}),
                        [x, gamma, beta, xhat, rstd](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
                          if (gamma.requires_grad())
                            tp.accumulate(gamma, (g.array() * xhat->array()).colwise().sum().matrix().eval());
                          if (beta.requires_grad()) tp.accumulate(beta, g.colwise().sum().eval());
                          if (!x.requires_grad()) return;
                          const Eigen::Index c = g.cols();
                          Mat<T> dxhat = g.array().rowwise() * gamma.value().row(0).array();
                          Mat<T> dx(g.rows(), c);
                          for (Eigen::Index i = 0; i < g.rows(); ++i) {
                            const T m1 = dxhat.row(i).mean();
                            const T m2 = (dxhat.row(i).array() * xhat->row(i).array()).mean();
                            dx.row(i) = (*rstd)[static_cast<std::size_t>(i)] *
                                        (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
                          }
                          tp.accumulate(x, dx);
                        });
}

template <class T>
Var<T> gather_rows(Var<T> table, const std::vector<int>& ids) {
  const auto& tb = table.value();
  Mat<T> out(static_cast<Eigen::Index>(ids.size()), tb.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::check(ids[i] >= 0 && ids[i] < tb.rows(), "gather_rows: id out of table");
    out.row(static_cast<Eigen::Index>(i)) = tb.row(ids[i]);
  }
  return table.tape->record(std::move(out), table.requires_grad(), [table, ids](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    Mat<T> dt = Mat<T>::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) dt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(table, dt);
  });
}

// 3x3 zero-padded patches per frame. Rows are (frame, y, x) sites; columns are
// (ky, kx, channel) with channel fastest.
template <class T>
Var<T> im2col3x3(Var<T> x, int frames, int height, int width) {
  const auto& xv = x.value();
  const Eigen::Index c = xv.cols();
  detail::check(xv.rows() == Eigen::Index(frames) * height * width, "im2col3x3: site count differs");
  Mat<T> out(xv.rows(), 9 * c);
  const std::size_t bytes = static_cast<std::size_t>(c) * sizeof(T);
  for (int f = 0; f < frames; ++f)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx) {
        T* dst = out.data() + ((Eigen::Index(f) * height + y) * width + xx) * 9 * c;
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx, dst += c) {
            const int sx = xx + kx - 1;
            if (sy < 0 || sy >= height || sx < 0 || sx >= width) {
              std::memset(dst, 0, bytes);
            } else {
              std::memcpy(dst, xv.data() + ((Eigen::Index(f) * height + sy) * width + sx) * c, bytes);
            }
          }
        }
      }
  return x.tape->record(std::move(out), x.requires_grad(),
                        [x, frames, height, width](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
                          const Eigen::Index c = x.cols();
                          Mat<T> dx = Mat<T>::Zero(x.rows(), c);
                          for (int f = 0; f < frames; ++f)
                            for (int y = 0; y < height; ++y)
                              for (int xx = 0; xx < width; ++xx) {
                                const T* src = g.data() + ((Eigen::Index(f) * height + y) * width + xx) * 9 * c;
                                for (int ky = 0; ky < 3; ++ky) {
                                  const int sy = y + ky - 1;
                                  for (int kx = 0; kx < 3; ++kx, src += c) {
                                    const int sx = xx + kx - 1;
                                    if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
                                    T* d = dx.data() + ((Eigen::Index(f) * height + sy) * width + sx) * c;
                                    for (Eigen::Index i = 0; i < c; ++i) d[i] += src[i];
                                  }
                                }
                              }
                          tp.accumulate(x, dx);
                        });
}

template <class T>
Var<T> avg_pool2(Var<T> x, int frames, int height, int width) {
  const auto& xv = x.value();
  const int h2 = height / 2, w2 = width / 2;
  detail::check(height % 2 == 0 && width % 2 == 0, "avg_pool2: odd spatial size");
  detail::check(xv.rows() == Eigen::Index(frames) * height * width, "avg_pool2: site count differs");
  Mat<T> out = Mat<T>::Zero(Eigen::Index(frames) * h2 * w2, xv.cols());
  for (int f = 0; f < frames; ++f)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx)
        out.row((Eigen::Index(f) * h2 + y / 2) * w2 + xx / 2) +=
            T(0.25) * xv.row((Eigen::Index(f) * height + y) * width + xx);
  return x.tape->record(std::move(out), x.requires_grad(),
                        [x, frames, height, width](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
                          const int h2 = height / 2, w2 = width / 2;
                          Mat<T> dx(x.rows(), x.cols());
                          for (int f = 0; f < frames; ++f)
                            for (int y = 0; y < height; ++y)
                              for (int xx = 0; xx < width; ++xx)
                                dx.row((Eigen::Index(f) * height + y) * width + xx) =
                                    T(0.25) * g.row((Eigen::Index(f) * h2 + y / 2) * w2 + xx / 2);
                          tp.accumulate(x, dx);
                        });
}

// Nearest-neighbour 2x upsampling; height/width are the low-resolution sizes.
template <class T>
Var<T> upsample2(Var<T> x, int frames, int height, int width) {
  const auto& xv = x.value();
  detail::check(xv.rows() == Eigen::Index(frames) * height * width, "upsample2: site count differs");
  const int h2 = height * 2, w2 = width * 2;
  Mat<T> out(Eigen::Index(frames) * h2 * w2, xv.cols());
  for (int f = 0; f < frames; ++f)
    for (int y = 0; y < h2; ++y)
      for (int xx = 0; xx < w2; ++xx)
        out.row((Eigen::Index(f) * h2 + y) * w2 + xx) = xv.row((Eigen::Index(f) * height + y / 2) * width + xx / 2);
  return x.tape->record(std::move(out), x.requires_grad(),
                        [x, frames, height, width](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
                          const int h2 = height * 2, w2 = width * 2;
                          Mat<T> dx = Mat<T>::Zero(x.rows(), x.cols());
                          for (int f = 0; f < frames; ++f)
                            for (int y = 0; y < h2; ++y)
                              for (int xx = 0; xx < w2; ++xx)
                                dx.row((Eigen::Index(f) * height + y / 2) * width + xx / 2) +=
                                    g.row((Eigen::Index(f) * h2 + y) * w2 + xx);
                          tp.accumulate(x, dx);
                        });
}

// Row-wise softmax over scores with masked columns pinned to probability zero.
template <class T>
void softmax_rows_inplace(Eigen::Ref<Mat<T>> s, const std::vector<char>* mask = nullptr) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (!mask || (*mask)[static_cast<std::size_t>(j)]) mx = std::max(mx, s(i, j));
    T sum = 0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const T e = (!mask || (*mask)[static_cast<std::size_t>(j)]) ? std::exp(s(i, j) - mx) : T(0);
      s(i, j) = e;
      sum += e;
    }
    s.row(i) /= sum;
  }
}

// Backward of a row softmax: dS = P * (dP - rowsum(dP * P)).
template <class T>
Mat<T> softmax_rows_backward(const Mat<T>& p, const Mat<T>& dp) {
  Mat<T> ds = p.array() * dp.array();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> inner = ds.rowwise().sum();
  ds -= (p.array().colwise() * inner.array()).matrix();
  return ds;
}

// Multi-head attention probabilities of every query row against one shared key set.
// Output rows are (head, query); columns are keys. Keys with mask == 0 get probability 0.
template <class T>
Var<T> cross_attn_probs(Var<T> q, Var<T> k, int heads, const std::vector<char>& mask) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  detail::check(qv.cols() == kv.cols() && qv.cols() % heads == 0, "cross_attn_probs: head width differs");
  detail::check(static_cast<Eigen::Index>(mask.size()) == kv.rows(), "cross_attn_probs: mask length differs");
  const Eigen::Index n = qv.rows(), l = kv.rows(), dh = qv.cols() / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  Mat<T> p(heads * n, l);
  for (int h = 0; h < heads; ++h) {
    auto blk = p.middleRows(h * n, n);
    blk.noalias() = sc * (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose());
    softmax_rows_inplace<T>(blk, &mask);
  }
  q.tape->flops += 2ull * n * l * qv.cols();
  return q.tape->record(std::move(p), detail::any_grad({q, k}),
                        [q, k, heads, sc](Tape<T>& tp, const Mat<T>& g, const Mat<T>& p) {
                          const auto& qv = q.value();
                          const auto& kv = k.value();
                          const Eigen::Index n = qv.rows(), dh = qv.cols() / heads;
                          Mat<T> dq(qv.rows(), qv.cols());
                          Mat<T> dk(kv.rows(), kv.cols());
                          for (int h = 0; h < heads; ++h) {
                            const Mat<T> ds = softmax_rows_backward<T>(p.middleRows(h * n, n), g.middleRows(h * n, n));
                            dq.middleCols(h * dh, dh).noalias() = sc * (ds * kv.middleCols(h * dh, dh));
                            dk.middleCols(h * dh, dh).noalias() = sc * (ds.transpose() * qv.middleCols(h * dh, dh));
                          }
                          if (q.requires_grad()) tp.accumulate(q, dq);
                          if (k.requires_grad()) tp.accumulate(k, dk);
                        });
}

// Applies (head, query) x key probabilities to per-head value slices.
template <class T>
Var<T> cross_attn_apply(Var<T> p, Var<T> v, int heads) {
  const auto& pv = p.value();
  const auto& vv = v.value();
  detail::check(pv.cols() == vv.rows() && pv.rows() % heads == 0 && vv.cols() % heads == 0,
                "cross_attn_apply: shapes differ");
  const Eigen::Index n = pv.rows() / heads, dh = vv.cols() / heads;
  Mat<T> out(n, vv.cols());
  for (int h = 0; h < heads; ++h)
    out.middleCols(h * dh, dh).noalias() = pv.middleRows(h * n, n) * vv.middleCols(h * dh, dh);
  p.tape->flops += 2ull * n * pv.cols() * vv.cols();
  return p.tape->record(std::move(out), detail::any_grad({p, v}), [p, v, heads](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    const auto& pv = p.value();
    const auto& vv = v.value();
    const Eigen::Index n = pv.rows() / heads, dh = vv.cols() / heads;
    if (p.requires_grad()) {
      Mat<T> dp(pv.rows(), pv.cols());
      for (int h = 0; h < heads; ++h)
        dp.middleRows(h * n, n).noalias() = g.middleCols(h * dh, dh) * vv.middleCols(h * dh, dh).transpose();
      tp.accumulate(p, dp);
    }
    if (v.requires_grad()) {
      Mat<T> dv(vv.rows(), vv.cols());
      for (int h = 0; h < heads; ++h)
        dv.middleCols(h * dh, dh).noalias() = pv.middleRows(h * n, n).transpose() * g.middleCols(h * dh, dh);
      tp.accumulate(v, dv);
    }
  });
}

// Self-attention along the frame axis, independently at each spatial site. Input rows are
// (frame, site). Output rows are (head, site, query frame); columns are key frames.
template <class T>
Var<T> temporal_attn_probs(Var<T> q, Var<T> k, int heads, int frames, int sites) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  detail::check(qv.rows() == Eigen::Index(frames) * sites && kv.rows() == qv.rows() && kv.cols() == qv.cols() &&
                    qv.cols() % heads == 0,
                "temporal_attn_probs: shapes differ");
  const Eigen::Index dh = qv.cols() / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  Mat<T> p(Eigen::Index(heads) * sites * frames, frames);
  for (int h = 0; h < heads; ++h)
    for (int s = 0; s < sites; ++s) {
      auto blk = p.middleRows((Eigen::Index(h) * sites + s) * frames, frames);
      for (int fq = 0; fq < frames; ++fq)
        for (int fk = 0; fk < frames; ++fk)
          blk(fq, fk) = sc * qv.row(Eigen::Index(fq) * sites + s).segment(h * dh, dh).dot(
                                 kv.row(Eigen::Index(fk) * sites + s).segment(h * dh, dh));
      softmax_rows_inplace<T>(blk);
    }
  q.tape->flops += 2ull * sites * frames * frames * qv.cols();
  return q.tape->record(
      std::move(p), detail::any_grad({q, k}),
      [q, k, heads, frames, sites, sc](Tape<T>& tp, const Mat<T>& g, const Mat<T>& p) {
        const auto& qv = q.value();
        const auto& kv = k.value();
        const Eigen::Index dh = qv.cols() / heads;
        Mat<T> dq = Mat<T>::Zero(qv.rows(), qv.cols());
        Mat<T> dk = Mat<T>::Zero(kv.rows(), kv.cols());
        for (int h = 0; h < heads; ++h)
          for (int s = 0; s < sites; ++s) {
            const Eigen::Index r0 = (Eigen::Index(h) * sites + s) * frames;
            const Mat<T> ds = softmax_rows_backward<T>(p.middleRows(r0, frames), g.middleRows(r0, frames));
            for (int fq = 0; fq < frames; ++fq)
              for (int fk = 0; fk < frames; ++fk) {
                const T w = sc * ds(fq, fk);
                if (w == T(0)) continue;
                dq.row(Eigen::Index(fq) * sites + s).segment(h * dh, dh) +=
                    w * kv.row(Eigen::Index(fk) * sites + s).segment(h * dh, dh);
                dk.row(Eigen::Index(fk) * sites + s).segment(h * dh, dh) +=
                    w * qv.row(Eigen::Index(fq) * sites + s).segment(h * dh, dh);
              }
          }
        if (q.requires_grad()) tp.accumulate(q, dq);
        if (k.requires_grad()) tp.accumulate(k, dk);
      });
}

template <class T>
Var<T> temporal_attn_apply(Var<T> p, Var<T> v, int heads, int frames, int sites) {
  const auto& pv = p.value();
  const auto& vv = v.value();
  detail::check(pv.rows() == Eigen::Index(heads) * sites * frames && pv.cols() == frames &&
                    vv.rows() == Eigen::Index(frames) * sites && vv.cols() % heads == 0,
                "temporal_attn_apply: shapes differ");
  const Eigen::Index dh = vv.cols() / heads;
  Mat<T> out = Mat<T>::Zero(vv.rows(), vv.cols());
  for (int h = 0; h < heads; ++h)
    for (int s = 0; s < sites; ++s) {
      const Eigen::Index r0 = (Eigen::Index(h) * sites + s) * frames;
      for (int fq = 0; fq < frames; ++fq)
        for (int fk = 0; fk < frames; ++fk)
          out.row(Eigen::Index(fq) * sites + s).segment(h * dh, dh) +=
              pv(r0 + fq, fk) * vv.row(Eigen::Index(fk) * sites + s).segment(h * dh, dh);
    }
  p.tape->flops += 2ull * sites * frames * frames * vv.cols();
  return p.tape->record(std::move(out), detail::any_grad({p, v}),
                        [p, v, heads, frames, sites](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
                          const auto& pv = p.value();
                          const auto& vv = v.value();
                          const Eigen::Index dh = vv.cols() / heads;
                          Mat<T> dp(pv.rows(), pv.cols());
                          Mat<T> dv = Mat<T>::Zero(vv.rows(), vv.cols());
                          for (int h = 0; h < heads; ++h)
                            for (int s = 0; s < sites; ++s) {
                              const Eigen::Index r0 = (Eigen::Index(h) * sites + s) * frames;
                              for (int fq = 0; fq < frames; ++fq) {
                                const auto grow = g.row(Eigen::Index(fq) * sites + s).segment(h * dh, dh);
                                for (int fk = 0; fk < frames; ++fk) {
                                  const auto vrow = vv.row(Eigen::Index(fk) * sites + s).segment(h * dh, dh);
                                  dp(r0 + fq, fk) = grow.dot(vrow);
                                  dv.row(Eigen::Index(fk) * sites + s).segment(h * dh, dh) += pv(r0 + fq, fk) * grow;
                                }
                              }
                            }
                          if (p.requires_grad()) tp.accumulate(p, dp);
                          if (v.requires_grad()) tp.accumulate(v, dv);
                        });
}

// Averages `heads` stacked row blocks.
template <class T>
Var<T> head_mean(Var<T> p, int heads) {
  const auto& pv = p.value();
  detail::check(pv.rows() % heads == 0, "head_mean: rows not divisible by heads");
  const Eigen::Index n = pv.rows() / heads;
  Mat<T> out = pv.topRows(n);
  for (int h = 1; h < heads; ++h) out += pv.middleRows(h * n, n);
  out /= T(heads);
  return p.tape->record(std::move(out), p.requires_grad(), [p, heads](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    const Eigen::Index n = g.rows();
    Mat<T> dp(n * heads, g.cols());
    for (int h = 0; h < heads; ++h) dp.middleRows(h * n, n) = g / T(heads);
    tp.accumulate(p, dp);
  });
}

// Flattens sa*a and sb*b (row-major) into a single 1 x (|a|+|b|) row.
template <class T>
Var<T> concat_scaled(Var<T> a, T sa, Var<T> b, T sb) {
  const Eigen::Index na = a.value().size(), nb = b.value().size();
  Mat<T> out(1, na + nb);
  for (Eigen::Index i = 0; i < na; ++i) out(0, i) = sa * a.value().data()[i];
  for (Eigen::Index i = 0; i < nb; ++i) out(0, na + i) = sb * b.value().data()[i];
  return a.tape->record(std::move(out), detail::any_grad({a, b}),
                        [a, b, sa, sb, na, nb](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
                          if (a.requires_grad()) {
                            Mat<T> da(a.rows(), a.cols());
                            for (Eigen::Index i = 0; i < na; ++i) da.data()[i] = sa * g(0, i);
                            tp.accumulate(a, da);
                          }
                          if (b.requires_grad()) {
                            Mat<T> db(b.rows(), b.cols());
                            for (Eigen::Index i = 0; i < nb; ++i) db.data()[i] = sb * g(0, na + i);
                            tp.accumulate(b, db);
                          }
                        });
}

// Sum of squared differences to a constant target, as a 1 x 1 node.
template <class T>
Var<T> sum_sq_diff(Var<T> x, const Mat<T>& target) {
  detail::check(x.rows() == target.rows() && x.cols() == target.cols(), "sum_sq_diff: shapes differ");
  auto diff = std::make_shared<Mat<T>>(x.value() - target);
  Mat<T> out(1, 1);
  out(0, 0) = diff->squaredNorm();
  return x.tape->record(std::move(out), x.requires_grad(), [x, diff](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    tp.accumulate(x, (T(2) * g(0, 0) * *diff).eval());
  });
}

// Differences between consecutive frames; rows are grouped into `frames` equal blocks.
template <class T>
Var<T> frame_diff(Var<T> x, int frames) {
  const auto& xv = x.value();
  detail::check(frames >= 2 && xv.rows() % frames == 0, "frame_diff: rows not divisible into frames");
  const Eigen::Index r = xv.rows() / frames;
  Mat<T> out = xv.bottomRows(r * (frames - 1)) - xv.topRows(r * (frames - 1));
  return x.tape->record(std::move(out), x.requires_grad(), [x](Tape<T>& tp, const Mat<T>& g, const Mat<T>&) {
    Mat<T> dx = Mat<T>::Zero(x.rows(), x.cols());
    dx.bottomRows(g.rows()) += g;
    dx.topRows(g.rows()) -= g;
    tp.accumulate(x, dx);
  });
}

}  // namespace mfm::ops
