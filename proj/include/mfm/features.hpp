#pragma once

#include <string>
#include <vector>

#include "mfm/lora.hpp"

namespace mfm {

// Flat (lambda_ca * CA) ++ (lambda_tsa * TSA) vector.
template <class T>
struct MotionFeatures {
  Mat<T> vector;  // 1 x n
  T lambda_ca = T(1);
  T lambda_tsa = T(1);
  Eigen::Index ca_length = 0;
  Eigen::Index tsa_length = 0;

  Eigen::Index size() const { return vector.size(); }
  auto ca_segment() const { return vector.leftCols(ca_length); }
  auto tsa_segment() const { return vector.rightCols(tsa_length); }
};

// CA map from an activation Phi ((F H' W') x D), text embedding tau (L x D_txt) and the
// layer's query/key projections. An empty mask treats every word as valid.
template <class T>
CAMap<T> cross_attention_map(const Activation<T>& phi, const Mat<T>& tau, const AttentionProjection<T>& proj,
                             std::vector<char> mask = {}) {
  require(phi.values.rows() == Eigen::Index(phi.frames) * phi.sites() && phi.values.cols() == proj.query.rows() &&
              tau.cols() == proj.key.rows() && proj.query.cols() == proj.key.cols(),
          ErrorKind::shape_mismatch, "cross_attention_map: incompatible widths");
  if (mask.empty()) mask.assign(static_cast<std::size_t>(tau.rows()), 1);
  require(static_cast<Eigen::Index>(mask.size()) == tau.rows(), ErrorKind::shape_mismatch,
          "cross_attention_map: mask length differs from word count");
  Tape<T> tape(false);
  Var<T> q = tape.constant(phi.values * proj.query);
  Var<T> k = tape.constant(tau * proj.key);
  Var<T> p = ops::head_mean(ops::cross_attn_probs(q, k, proj.heads, mask), proj.heads);
  return {phi.frames, phi.height, phi.width, static_cast<int>(tau.rows()), p.value()};
}

template <class T>
TSAMap<T> temporal_self_attention_map(const Activation<T>& phi, const AttentionProjection<T>& proj) {
  require(phi.values.rows() == Eigen::Index(phi.frames) * phi.sites() && phi.values.cols() == proj.query.rows() &&
              phi.values.cols() == proj.key.rows() && proj.query.cols() == proj.key.cols(),
          ErrorKind::shape_mismatch, "temporal_self_attention_map: incompatible widths");
  Tape<T> tape(false);
  Var<T> q = tape.constant(phi.values * proj.query);
  Var<T> k = tape.constant(phi.values * proj.key);
  Var<T> p = ops::head_mean(ops::temporal_attn_probs(q, k, proj.heads, phi.frames, phi.sites()), proj.heads);
  return {phi.height, phi.width, phi.frames, p.value()};
}

template <class T>
MotionFeatures<T> combine_maps(const CAMap<T>& ca, const TSAMap<T>& tsa, T lambda_ca, T lambda_tsa) {
  require(lambda_ca >= T(0) && lambda_tsa >= T(0), ErrorKind::invalid_range, "feature weights must be >= 0");
  MotionFeatures<T> f;
  f.lambda_ca = lambda_ca;
  f.lambda_tsa = lambda_tsa;
  f.ca_length = ca.values.size();
  f.tsa_length = tsa.values.size();
  f.vector.resize(1, f.ca_length + f.tsa_length);
  f.vector.leftCols(f.ca_length) = lambda_ca * ca.values.template reshaped<Eigen::RowMajor>().transpose();
  f.vector.rightCols(f.tsa_length) = lambda_tsa * tsa.values.template reshaped<Eigen::RowMajor>().transpose();
  return f;
}

// Copy of a base model with adapters stripped and every parameter frozen. Features are
// differentiable with respect to the input video only.
template <class T>
class FrozenExtractor {
 public:
  explicit FrozenExtractor(const Denoiser<T>& base) : model_(base) {
    detach_lora(model_);
    model_.set_trainable(false);
  }

  const Denoiser<T>& model() const { return model_; }
  int block() const { return model_.config().feature_block; }

  Var<T> features(Tape<T>& tape, Var<T> video, int t, const PromptTokens& prompt, T lambda_ca, T lambda_tsa) const {
    require(lambda_ca >= T(0) && lambda_tsa >= T(0), ErrorKind::invalid_range, "feature weights must be >= 0");
    auto r = model_.forward(tape, video, t, prompt, true, block());
    const auto& c = r.captures.back();
    return ops::concat_scaled(c.ca_map, lambda_ca, c.tsa_map, lambda_tsa);
  }

  MotionFeatures<T> extract(const LatentVideo<T>& noisy, int t, const PromptTokens& prompt, T lambda_ca,
                            T lambda_tsa) const {
    const auto maps = model_.denoise_until_block(noisy, t, prompt, block());
    return combine_maps(maps.back().ca, maps.back().tsa, lambda_ca, lambda_tsa);
  }

 private:
  Denoiser<T> model_;
};

template <class T>
MotionFeatures<T> extract_motion_features(const FrozenExtractor<T>& extractor, const LatentVideo<T>& noisy, int t,
                                          const PromptTokens& prompt, T lambda_ca, T lambda_tsa) {
  return extractor.extract(noisy, t, prompt, lambda_ca, lambda_tsa);
}

// w * |f_gt - f_pred|^2 (sum over all entries).
template <class T>
T motion_feature_matching_loss(const MotionFeatures<T>& f_gt, const MotionFeatures<T>& f_pred, T w) {
  require(f_gt.size() == f_pred.size(), ErrorKind::shape_mismatch, "feature lengths differ");
  return w * (f_gt.vector - f_pred.vector).squaredNorm();
}

template <class T>
Var<T> motion_feature_matching_loss(const Mat<T>& f_gt, Var<T> f_pred, T w) {
  require(f_gt.size() == f_pred.value().size(), ErrorKind::shape_mismatch, "feature lengths differ");
  return ops::scale(ops::sum_sq_diff(f_pred, f_gt), w);
}

}  // namespace mfm
