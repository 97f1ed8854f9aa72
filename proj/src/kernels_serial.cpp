#include <vector>

#include "anomem/kernels.hpp"
#include "kernel_rows.hpp"

namespace anomem::kernels::serial {

using namespace detail;

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) mm_nn_row(a, b, c + 1LL * i * n, i, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) mm_nt_row(a, b, c + 1LL * i * n, i, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) mm_tn_row(a, b, c + 1LL * i * n, i, k, m, n);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) softmax_row(x + 1LL * r * cols, y + 1LL * r * cols, cols);
}

void conv2d_forward(const double* in, const double* kern, double* out, const Conv2dShape& s) {
  const long long in_sz = 1LL * s.in_h * s.in_w * s.in_c;
  const long long out_sz = 1LL * s.out_h() * s.out_w() * s.out_c;
  std::vector<double> col(1LL * s.out_h() * s.out_w() * s.col_width());
  for (int b = 0; b < s.batch; ++b) {
    conv_forward_image(in + b * in_sz, kern, out + b * out_sz, col.data(), s);
  }
}

void conv2d_grad_input(const double* kern, const double* dout, double* din, const Conv2dShape& s) {
  const long long in_sz = 1LL * s.in_h * s.in_w * s.in_c;
  const long long out_sz = 1LL * s.out_h() * s.out_w() * s.out_c;
  std::vector<double> dcol(1LL * s.out_h() * s.out_w() * s.col_width());
  for (int b = 0; b < s.batch; ++b) {
    conv_grad_input_image(kern, dout + b * out_sz, din + b * in_sz, dcol.data(), s);
  }
}

void conv2d_grad_kernel(const double* in, const double* dout, double* dkern, const Conv2dShape& s) {
  const int rows = static_cast<int>(s.col_width());
  for (int r = 0; r < rows; ++r) conv_grad_kernel_row(in, dout, dkern + 1LL * r * s.out_c, r, s);
}

}  // namespace anomem::kernels::serial
