#pragma once

#include <utility>
#include <vector>

#include "anomem/tensor.hpp"

namespace anomem {

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double alpha, double beta);  // alpha * x + beta
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);  // gradient is defined as 0 where sqrt(x) <= 1e-12

// Reductions.
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);
Tensor variance(const Tensor& x, int axis);  // population variance along axis

// Structure.
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor vconcat(const Tensor& a, const Tensor& b);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor scatter_rows(const Tensor& rows, const std::vector<int>& indices, int n_rows);
Tensor gather_pairs(const Tensor& x, const std::vector<std::pair<int, int>>& at);
// Depth vector of every sample at spatial position (i, j): [B,H,W,C] -> [B,C].
Tensor select_position(const Tensor& maps, int i, int j);

// Normalization.
Tensor softmax(const Tensor& x, int axis);
// Unit-norm along axis; vectors with norm <= 1e-12 map to zero with zero gradient.
Tensor l2_normalize(const Tensor& x, int axis);

// Linear / spatial. Spatial tensors are NHWC ([B,H,W,C]) or HWC; conv padding
// is symmetric zero padding of floor(k/2) per side.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride);
Tensor bias_add(const Tensor& x, const Tensor& bias);
Tensor average_pool(const Tensor& x, int window);
Tensor adaptive_average_pool(const Tensor& x, int out_h, int out_w);

}  // namespace anomem
