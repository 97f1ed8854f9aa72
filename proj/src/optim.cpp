#include "anomem/optim.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "anomem/errors.hpp"

namespace anomem {

double cosine_lr(const Schedule& schedule, long long step) {
  if (schedule.total_steps < 1) {
    throw ValidationError("cosine_lr: total_steps must be at least 1");
  }
  if (schedule.lr_min > schedule.lr_max) {
    throw ValidationError("cosine_lr: lr_min exceeds lr_max");
  }
  if (step < 0 || step > schedule.total_steps) {
    throw ValidationError("cosine_lr: step " + std::to_string(step) +
                          " outside [0, " + std::to_string(schedule.total_steps) + "]");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
  return schedule.lr_min +
         0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + std::cos(M_PI * frac));
}

SgdNesterov::SgdNesterov(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  if (momentum_ < 0.0 || momentum_ >= 1.0) {
    throw ValidationError("optimizer: momentum must lie in [0, 1)");
  }
  if (weight_decay_ < 0.0) {
    throw ValidationError("optimizer: weight decay must be non-negative");
  }
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.defined()) throw ValidationError("optimizer: undefined parameter tensor");
    velocity_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
  }
}

void SgdNesterov::step(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ValidationError("optimizer: learning rate must be finite and non-negative");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    const bool touched = std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
    if (!touched) continue;

    auto pv = p.mutable_values();
    std::vector<double>& v = velocity_[i];
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double geff = g[k] + weight_decay_ * pv[k];
      v[k] = momentum_ * v[k] - lr * geff;
      pv[k] += momentum_ * v[k] - lr * geff;
    }
  }
}

void SgdNesterov::zero_grads() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace anomem
