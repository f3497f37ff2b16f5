#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ftmamba/tensor.hpp"

namespace ftmamba {

// Adam over a fixed set of parameter tensors. Tensors are shared handles, so
// the optimizer mutates the same storage the model reads.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
                T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Tensor<T>& p : params_) {
      if (!p.grad) throw std::invalid_argument("adam: parameter without grad buffer");
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, T(t_));
    const T bc2 = T(1) - std::pow(beta2_, T(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor<T>& p = params_[pi];
      std::vector<T>& m = m_[pi];
      std::vector<T>& v = v_[pi];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const T g = (*p.grad)[i];
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g;
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g * g;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        (*p.data)[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (Tensor<T>& p : params_) p.zero_grad();
  }

  T lr() const { return lr_; }
  long steps_taken() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  T lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace ftmamba
