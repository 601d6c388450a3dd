// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "patchflow/tensor.hpp"

namespace patchflow {

// Decoupled-weight-decay adaptive-moment optimizer with bias correction.
// Parameters that carry no gradient in a step are skipped entirely: their
// moments, step counts and values stay untouched, so a step over samples
// from one stage leaves every other stage's projections bit-identical.
template <typename S>
class AdamW {
 public:
  AdamW() = default;
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor<S>*>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      steps_.assign(params.size(), 0);
    }
    require(m_.size() == params.size(), ErrorKind::Contract,
            "optimizer: parameter list changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<S>& p = *params[i];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.mutable_data();
      if (m_[i].empty()) {
        m_[i].assign(w.size(), S(0));
        v_[i].assign(w.size(), S(0));
      }
      long t = ++steps_[i];
      S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
      S c1 = static_cast<S>(1.0 - std::pow(beta1_, static_cast<double>(t)));
      S c2 = static_cast<S>(1.0 - std::pow(beta2_, static_cast<double>(t)));
      S lr = static_cast<S>(lr_), wd = static_cast<S>(weight_decay_);
      S eps = static_cast<S>(eps_);
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (wd != S(0)) w[k] -= lr * wd * w[k];
        m_[i][k] = b1 * m_[i][k] + (S(1) - b1) * g[k];
        v_[i][k] = b2 * v_[i][k] + (S(1) - b2) * g[k] * g[k];
        S mhat = m_[i][k] / c1;
        S vhat = v_[i][k] / c2;
        w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // state access for checkpointing; moments are empty until a param is first
  // updated
  std::vector<std::vector<S>>& moments1() { return m_; }
  std::vector<std::vector<S>>& moments2() { return v_; }
  std::vector<long>& step_counts() { return steps_; }
  void reset() {
    m_.clear();
    v_.clear();
    steps_.clear();
  }

 private:
  double lr_ = 1e-4;
  double weight_decay_ = 0.0;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::vector<std::vector<S>> m_, v_;
  std::vector<long> steps_;
};

// ema <- decay * ema + (1 - decay) * params
template <typename S>
void ema_update(Tensor<S>& ema, const Tensor<S>& params, S decay) {
  require(ema.shape() == params.shape(), ErrorKind::Dimension, "ema_update: shape mismatch");
  auto e = ema.mutable_data();
  auto p = params.data();
  for (std::size_t k = 0; k < e.size(); ++k) e[k] = decay * e[k] + (S(1) - decay) * p[k];
}

template <typename S>
void ema_update(std::vector<Tensor<S>>& ema, const std::vector<Tensor<S>*>& params, S decay) {
  require(ema.size() == params.size(), ErrorKind::Dimension,
          "ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < ema.size(); ++i) ema_update(ema[i], *params[i], decay);
}

}  // namespace patchflow
