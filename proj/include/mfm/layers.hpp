#pragma once

#include <optional>
#include <string>

#include "mfm/ops.hpp"

namespace mfm {

// Low-rank increment on a linear map. In the row-vector convention used here the layer
// computes y = x W + b with W of shape d_in x d_out, and the adapter adds
// scale * (x down^T) up^T, i.e. delta W^T = scale * up * down.
template <class T>
struct LoraAdapter {
  Param<T> down;  // r x d_in, Gaussian init
  Param<T> up;    // d_out x r, zero init
  T scale = T(1);

  int rank() const { return static_cast<int>(down.value.rows()); }
  // Increment in the stored (d_in x d_out) orientation.
  Mat<T> delta() const { return scale * (down.value.transpose() * up.value.transpose()); }
};

template <class T>
struct Linear {
  Param<T> weight;  // d_in x d_out
  Param<T> bias;    // 1 x d_out, or empty
  std::optional<LoraAdapter<T>> lora;
  // Original weight while a merged increment is baked into `weight`.
  std::optional<Mat<T>> premerge_weight;

  Linear() = default;
  Linear(int in, int out, bool with_bias, Rng& rng, double gain = 1.0) {
    weight.value = rng.normal_matrix<T>(in, out, gain / std::sqrt(double(in)));
    if (with_bias) bias.value = Mat<T>::Zero(1, out);
  }

  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }
  bool has_bias() const { return bias.value.size() != 0; }

  Mat<T> effective_weight() const { return lora ? Mat<T>(weight.value + lora->delta()) : weight.value; }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    Var<T> y = ops::matmul(x, tape.param(weight));
    if (has_bias()) y = ops::add_row(y, tape.param(bias));
    if (lora) {
      Var<T> h = ops::matmul_nt(x, tape.param(lora->down));
      y = ops::affine(y, T(1), ops::matmul_nt(h, tape.param(lora->up)), lora->scale);
    }
    return y;
  }
};

template <class T>
struct LayerNorm {
  Param<T> gamma;
  Param<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(int dim) {
    gamma.value = Mat<T>::Ones(1, dim);
    beta.value = Mat<T>::Zero(1, dim);
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return ops::layer_norm(x, tape.param(gamma), tape.param(beta));
  }
};

}  // namespace mfm
