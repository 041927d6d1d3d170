#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mfm/video.hpp"

namespace mfm {

// Linear-beta noise schedule. Tables are indexed by timestep t = 1..T; index 0 holds
// the clean-video convention bar_alpha(0) = 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule linear(int steps, double beta_start, double beta_end) {
    require(steps >= 1, ErrorKind::invalid_range, "schedule needs T >= 1");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::invalid_range,
            "schedule needs 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps_ = steps;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    s.betas_.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    s.alphas_.assign(static_cast<std::size_t>(steps) + 1, 1.0);
    s.bar_alphas_.assign(static_cast<std::size_t>(steps) + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : double(t - 1) / double(steps - 1);
      const double b = beta_start + (beta_end - beta_start) * frac;
      s.betas_[t] = b;
      s.alphas_[t] = 1.0 - b;
      s.bar_alphas_[t] = s.bar_alphas_[t - 1] * s.alphas_[t];
    }
    return s;
  }

  static NoiseSchedule standard(int steps = 1000) { return linear(steps, 1e-4, 0.02); }

  int steps() const { return steps_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  double beta(int t) const { return betas_.at(check(t, 1)); }
  double alpha(int t) const { return alphas_.at(check(t, 1)); }
  double bar_alpha(int t) const { return bar_alphas_.at(check(t, 0)); }

  void require_timestep(int t, int lo = 1) const { check(t, lo); }

 private:
  std::size_t check(int t, int lo) const {
    require(t >= lo && t <= steps_, ErrorKind::timestep_out_of_range,
            "timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " + std::to_string(steps_) + "]");
    return static_cast<std::size_t>(t);
  }

  int steps_ = 0;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> bar_alphas_;
};

// z_t = sqrt(bar_alpha_t) z0 + sqrt(1 - bar_alpha_t) eps. t = 0 returns z0.
template <class T>
LatentVideo<T> forward_noise(const LatentVideo<T>& z0, int t, const LatentVideo<T>& eps, const NoiseSchedule& s) {
  require_same_shape(z0, eps, "forward_noise: z0 and eps shapes differ");
  const double ab = s.bar_alpha(t);
  return LatentVideo<T>::from(z0, (T(std::sqrt(ab)) * z0.data + T(std::sqrt(1.0 - ab)) * eps.data).eval());
}

// Coefficients of the deterministic previous-step estimate
//   v_t(z_t, eps) = signal * z_t + noise * eps.
struct PrevCoefficients {
  double signal = 0.0;
  double noise = 0.0;
};

inline PrevCoefficients prev_coefficients(int t, const NoiseSchedule& s) {
  s.require_timestep(t);
  const double a = s.alpha(t);
  const double inv_sqrt_a = 1.0 / std::sqrt(a);
  return {inv_sqrt_a, -std::sqrt(1.0 - s.bar_alpha(t)) * inv_sqrt_a + std::sqrt(1.0 - s.bar_alpha(t - 1))};
}

template <class T>
LatentVideo<T> predict_prev(const LatentVideo<T>& zt, const LatentVideo<T>& eps, int t, const NoiseSchedule& s) {
  require_same_shape(zt, eps, "predict_prev: z_t and eps shapes differ");
  const auto c = prev_coefficients(t, s);
  return LatentVideo<T>::from(zt, (T(c.signal) * zt.data + T(c.noise) * eps.data).eval());
}

// w'_t for the first 500 of 1000 sampling steps: sampling runs t = T..1, so the early
// (high-noise) half is t >= T/2.
inline double timestep_weight(int t, const NoiseSchedule& s) {
  s.require_timestep(t);
  return 2 * t >= s.steps() ? 1.0 : 0.0;
}

// Weight that makes w'_t |v_t(z,eps) - v_t(z,eps_theta)|^2 equal w_t |eps - eps_theta|^2.
// v_t is affine in eps with slope c_t, so w'_t = w_t / c_t^2.
inline double reparam_weight(int t, double w, const NoiseSchedule& s) {
  const double c = prev_coefficients(t, s).noise;
  require(std::abs(c) >= 1e-12, ErrorKind::degenerate_coefficient, "reparam_weight: |c_t| < 1e-12");
  return w / (c * c);
}

// One generalised DDIM update from t to t-1.
template <class T>
LatentVideo<T> ddim_step(const LatentVideo<T>& zt, const LatentVideo<T>& eps_pred, int t, double sigma,
                         const LatentVideo<T>& eps_rand, const NoiseSchedule& s) {
  require_same_shape(zt, eps_pred, "ddim_step: z_t and eps_pred shapes differ");
  s.require_timestep(t);
  const double ab_prev = s.bar_alpha(t - 1);
  require(sigma >= 0.0 && sigma * sigma <= 1.0 - ab_prev, ErrorKind::sigma_out_of_range,
          "ddim_step: sigma^2 must lie in [0, 1 - bar_alpha_{t-1}]");
  if (sigma == 0.0) return predict_prev(zt, eps_pred, t, s);
  require_same_shape(zt, eps_rand, "ddim_step: eps_rand shape differs");
  const double ab = s.bar_alpha(t);
  const Mat<T> z0_pred = (zt.data - T(std::sqrt(1.0 - ab)) * eps_pred.data) / T(std::sqrt(ab));
  Mat<T> out = T(std::sqrt(ab_prev)) * z0_pred + T(std::sqrt(1.0 - ab_prev - sigma * sigma)) * eps_pred.data +
               T(sigma) * eps_rand.data;
  return LatentVideo<T>::from(zt, std::move(out));
}

// Deterministic jump between two arbitrary timesteps (either direction), used by the
// strided sampler and by inversion. Equal to predict_prev when to == from - 1.
template <class T>
LatentVideo<T> ddim_transfer(const LatentVideo<T>& z, const LatentVideo<T>& eps_pred, int from, int to,
                             const NoiseSchedule& s) {
  if (to == from - 1 && from >= 1) return predict_prev(z, eps_pred, from, s);
  const double ab = s.bar_alpha(from);
  const double ab_to = s.bar_alpha(to);
  const Mat<T> z0_pred = (z.data - T(std::sqrt(1.0 - ab)) * eps_pred.data) / T(std::sqrt(ab));
  return LatentVideo<T>::from(z, (T(std::sqrt(ab_to)) * z0_pred + T(std::sqrt(1.0 - ab_to)) * eps_pred.data).eval());
}

// Timesteps visited by a `steps`-step sampler, descending from T, ending with 0.
inline std::vector<int> sampling_timesteps(int steps, const NoiseSchedule& s) {
  require(steps >= 1 && steps <= s.steps(), ErrorKind::invalid_range, "sampler steps must lie in [1, T]");
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps) + 1);
  for (int i = steps; i >= 0; --i)
    ts.push_back(static_cast<int>(std::llround(double(s.steps()) * double(i) / double(steps))));
  return ts;
}

// Deterministic (sigma = 0) sampling. `predict(z, t)` returns the noise estimate.
template <class T, class Predictor>
LatentVideo<T> ddim_sample(Predictor&& predict, LatentVideo<T> z, int steps, const NoiseSchedule& s) {
  const auto ts = sampling_timesteps(steps, s);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const LatentVideo<T> eps = predict(static_cast<const LatentVideo<T>&>(z), ts[i]);
    z = ddim_transfer(z, eps, ts[i], ts[i + 1], s);
  }
  return z;
}

// Runs the deterministic sampler backwards: z_{t_next} from z_{t_cur} using the noise
// predicted at (z_{t_cur}, t_next). Returns the inverted terminal noise.
template <class T, class Predictor>
LatentVideo<T> ddim_invert(Predictor&& predict, LatentVideo<T> z, int steps, const NoiseSchedule& s) {
  auto ts = sampling_timesteps(steps, s);
  for (std::size_t i = ts.size() - 1; i > 0; --i) {
    const int cur = ts[i], next = ts[i - 1];
    const LatentVideo<T> eps = predict(static_cast<const LatentVideo<T>&>(z), next);
    z = ddim_transfer(z, eps, cur, next, s);
  }
  return z;
}

// z_T = sqrt(beta) eps_inv + sqrt(1 - beta) eps.
template <class T>
LatentVideo<T> mix_noise(const LatentVideo<T>& eps_inv, const LatentVideo<T>& eps, double beta_mix) {
  require(beta_mix >= 0.0 && beta_mix <= 1.0, ErrorKind::invalid_range, "beta_mix must lie in [0, 1]");
  require_same_shape(eps_inv, eps, "mix_noise: shapes differ");
  if (beta_mix == 0.0) return eps;
  if (beta_mix == 1.0) return eps_inv;
  return LatentVideo<T>::from(
      eps, (T(std::sqrt(beta_mix)) * eps_inv.data + T(std::sqrt(1.0 - beta_mix)) * eps.data).eval());
}

}  // namespace mfm
