#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace vdc::nn {

// Plain (optionally momentum / L2) stochastic gradient descent.
class Sgd {
 public:
  explicit Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  template <class T>
  void step(std::span<T> params, std::span<const T> grads) {
    if (momentum_ != 0.0 && velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double g = static_cast<double>(grads[i]) + weight_decay_ * static_cast<double>(params[i]);
      if (momentum_ != 0.0) {
        velocity_[i] = momentum_ * velocity_[i] + g;
        g = velocity_[i];
      }
      params[i] = static_cast<T>(static_cast<double>(params[i]) - lr_ * g);
    }
  }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<double> velocity_;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.01,
                 double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

  template <class T>
  void step(std::span<T> params, std::span<const T> grads) {
    if (m_.size() != params.size()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]);
      m_[i] = beta1_ * m_[i] + (1 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1 - beta2_) * g * g;
      double p = static_cast<double>(params[i]);
      p -= lr_ * weight_decay_ * p;
      p -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
      params[i] = static_cast<T>(p);
    }
  }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, weight_decay_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Cosine decay from base_lr to 0 over total steps.
inline double cosine_lr(double base_lr, long step, long total) {
  if (total <= 0) return base_lr;
  const double u = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * u));
}

}  // namespace vdc::nn
