#pragma once

#include <vector>

#include "anomem/tensor.hpp"

namespace anomem {

struct Schedule {
  double lr_max = 0.05;
  double lr_min = 0.0;
  long long total_steps = 1;
};

// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2
double cosine_lr(const Schedule& schedule, long long step);

// SGD with nesterov momentum and coupled weight decay:
//   g' = g + wd * p;  v <- mu * v - lr * g';  p <- p + mu * v - lr * g'
// Parameters whose gradient buffer is absent or all-zero are left untouched,
// velocity included.
class SgdNesterov {
 public:
  SgdNesterov(std::vector<Tensor> params, double momentum = 0.9, double weight_decay = 5e-4);

  void step(double lr);
  void zero_grads();

  std::size_t size() const { return params_.size(); }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<double>& velocity(std::size_t i) { return velocity_[i]; }
  const std::vector<double>& velocity(std::size_t i) const { return velocity_[i]; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

}  // namespace anomem
