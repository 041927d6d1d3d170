#pragma once

#include <cmath>
#include <vector>

#include "mfm/autodiff.hpp"

namespace mfm {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; <= 0 disables it.
  double clip = 0.0;
};

// Adam over a fixed list of parameters. Gradients are read from the tape that recorded
// the loss; parameters the tape never reached count as zero-gradient.
template <class T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  int steps() const { return step_; }

  // Returns the global gradient norm before clipping.
  double step(const Tape<T>& tape) {
    double sq = 0.0;
    for (auto* p : params_)
      if (const Mat<T>* g = tape.grad_of(*p)) sq += double(g->squaredNorm());
    const double norm = std::sqrt(sq);
    const double mult = (cfg_.clip > 0.0 && norm > cfg_.clip) ? cfg_.clip / norm : 1.0;
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Mat<T>* g = tape.grad_of(*params_[i]);
      if (g) {
        m_[i] = T(cfg_.beta1) * m_[i] + T((1.0 - cfg_.beta1) * mult) * *g;
        v_[i] = T(cfg_.beta2) * v_[i] + T((1.0 - cfg_.beta2) * mult * mult) * g->cwiseAbs2();
      } else {
        m_[i] *= T(cfg_.beta1);
        v_[i] *= T(cfg_.beta2);
      }
      params_[i]->value.array() -=
          T(cfg_.lr) * (m_[i].array() / T(bc1)) / ((v_[i].array() / T(bc2)).sqrt() + T(cfg_.eps));
    }
    return norm;
  }

 private:
  std::vector<Param<T>*> params_;
  AdamConfig cfg_;
  std::vector<Mat<T>> m_, v_;
  int step_ = 0;
};

}  // namespace mfm
