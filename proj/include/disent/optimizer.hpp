#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "disent/layers.hpp"

namespace disent {

// Adam over a fixed parameter group. Moment buffers live inside Param so
// they travel with the parameters through checkpoints; the optimizer itself
// only carries hyperparameters and the step counter.
template <typename Real>
class Adam {
 public:
  explicit Adam(std::vector<Param<Real>*> params, Real beta1 = Real(0.5),
                Real beta2 = Real(0.9), Real eps = Real(1e-8))
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step(Real lr) {
    ++t_;
    const Real c1 = Real(1) - std::pow(beta1_, Real(t_));
    const Real c2 = Real(1) - std::pow(beta2_, Real(t_));
    using Vec = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
    for (auto* p : params_) {
      const std::ptrdiff_t n = std::ptrdiff_t(p->size());
      Vec m(p->adam_m.data(), n), v(p->adam_v.data(), n);
      Vec g(p->grad.data(), n), x(p->value.data(), n);
      m = beta1_ * m + (Real(1) - beta1_) * g;
      v = beta2_ * v + (Real(1) - beta2_) * g * g;
      x -= lr * (m / c1) / ((v / c2).sqrt() + eps_);
    }
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const std::vector<Param<Real>*>& params() const { return params_; }

 private:
  std::vector<Param<Real>*> params_;
  Real beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// Linear decay from base_lr at step 0 to zero at total_steps.
template <typename Real>
Real decayed_lr(Real base_lr, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return base_lr;
  Real frac = Real(1) - Real(step) / Real(total_steps);
  if (frac < Real(0)) frac = Real(0);
  return base_lr * frac;
}

}  // namespace disent
