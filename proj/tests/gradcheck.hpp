#pragma once

// Central finite-difference oracle for recorded operations. Each case builds
// a random scalar loss from trainable leaves; the analytic gradient from one
// backward pass is compared element by element against (f(x+h) - f(x-h)) / 2h
// evaluated without a tape.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "anomem/ops.hpp"
#include "anomem/tensor.hpp"

namespace gradcheck {

struct FdCase {
  std::vector<anomem::Tensor> leaves;
  std::function<anomem::Tensor()> loss;  // scalar; re-evaluates from current leaf values
};

using CaseGen = std::function<FdCase(std::mt19937_64&)>;

inline double rel_err(double a, double b) {
  const double denom = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

inline anomem::Tensor rand_tensor(std::mt19937_64& eng, const anomem::Shape& shape, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(anomem::shape_size(shape));
  for (auto& x : v) x = u(eng);
  return anomem::Tensor(shape, std::move(v));
}

// Random positive weights keep reduction losses sensitive to every element.
inline anomem::Tensor probe_weights(std::mt19937_64& eng, const anomem::Shape& shape) {
  return rand_tensor(eng, shape, 0.25, 1.75);
}

inline anomem::Tensor weighted_sum(const anomem::Tensor& x, const anomem::Tensor& w) {
  return anomem::sum_all(anomem::mul(x, w));
}

// Returns the worst relative error across `cases` random instances.
inline double run_suite(const CaseGen& gen, int cases, std::uint64_t seed0, double fd_h = 1e-5) {
  double worst = 0.0;
  for (int c = 0; c < cases; ++c) {
    std::mt19937_64 eng(seed0 + 977u * static_cast<std::uint64_t>(c));
    FdCase fc = gen(eng);
    for (auto& leaf : fc.leaves) leaf.mark_trainable();

    {
      anomem::Tape tape;
      tape.backward(fc.loss());
    }
    for (auto& leaf : fc.leaves) {
      auto vals = leaf.mutable_values();
      auto grad = leaf.grad();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double keep = vals[i];
        const double h = fd_h * std::max(1.0, std::fabs(keep));
        vals[i] = keep + h;
        const double up = fc.loss().value();
        vals[i] = keep - h;
        const double dn = fc.loss().value();
        vals[i] = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double err = rel_err(grad[i], fd);
        worst = err > worst ? err : worst;
      }
    }
    for (auto& leaf : fc.leaves) leaf.zero_grad();
  }
  return worst;
}

}  // namespace gradcheck
