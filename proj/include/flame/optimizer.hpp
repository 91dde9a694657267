#pragma once

#include <vector>

#include "flame/nn.hpp"

namespace flame {

template <typename Scalar>
struct AdamState {
  long long step = 0;
  std::vector<MatX<Scalar>> m, v;  // parallel to the trainable parameter order
};

// Adam with bias correction. Operates on the trainable subset of the
// parameters it was constructed with, in collection order.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamRefs<Scalar>& params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params) {
      if (!p->trainable) continue;
      params_.push_back(p);
      state_.m.emplace_back(MatX<Scalar>::Zero(p->value.rows(), p->value.cols()));
      state_.v.emplace_back(MatX<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(double lr) {
    ++state_.step;
    const Scalar b1 = static_cast<Scalar>(beta1_);
    const Scalar b2 = static_cast<Scalar>(beta2_);
    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(beta1_, state_.step));
    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(beta2_, state_.step));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      m = b1 * m + (Scalar(1) - b1) * p.grad;
      v.array() = b2 * v.array() + (Scalar(1) - b2) * p.grad.array().square();
      p.value.array() -= static_cast<Scalar>(lr) * (m.array() / c1) /
                         ((v.array() / c2).sqrt() + static_cast<Scalar>(eps_));
    }
  }

  const AdamState<Scalar>& state() const { return state_; }

  void restore(const AdamState<Scalar>& s) {
    if (s.m.size() != params_.size() || s.v.size() != params_.size()) {
      throw std::invalid_argument("adam: state does not match parameter count");
    }
    state_ = s;
  }

 private:
  std::vector<Parameter<Scalar>*> params_;
  AdamState<Scalar> state_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

}  // namespace flame
