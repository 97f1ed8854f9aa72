#pragma once

// Dense numeric kernels used by the tensor layer. Each kernel has a serial
// reference and an OpenMP variant; both produce bitwise-identical output
// because work is partitioned over output elements and every element keeps a
// fixed accumulation order. The top-level wrappers dispatch on the configured
// worker count, so results do not depend on threading at all.

namespace anomem::kernels {

// Worker cap. 0 means "use the hardware default". The CLI wires the
// ANOMEM_THREADS environment variable into set_threads().
void set_threads(int n);
int thread_cap();
int resolved_threads();

struct Conv2dShape {
  int batch = 1;
  int in_h = 0, in_w = 0, in_c = 0;
  int k_h = 0, k_w = 0, out_c = 0;
  int stride = 1;

  int pad_h() const { return k_h / 2; }
  int pad_w() const { return k_w / 2; }
  int out_h() const { return (in_h + 2 * pad_h() - k_h) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad_w() - k_w) / stride + 1; }
  long long col_width() const { return 1LL * k_h * k_w * in_c; }
};

namespace serial {
// c[m x n] = a[m x k] * b[k x n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
// c[m x n] = a[m x k] * b^T, b stored [n x k]
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// c[m x n] = a^T * b, a stored [k x m], b stored [k x n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
// row-wise softmax with max subtraction
void softmax_rows(const double* x, double* y, int rows, int cols);
// NHWC convolution, symmetric zero padding of k/2 on each side
void conv2d_forward(const double* in, const double* kern, double* out, const Conv2dShape& s);
void conv2d_grad_input(const double* kern, const double* dout, double* din, const Conv2dShape& s);
void conv2d_grad_kernel(const double* in, const double* dout, double* dkern, const Conv2dShape& s);
}  // namespace serial

namespace omp {
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void softmax_rows(const double* x, double* y, int rows, int cols);
void conv2d_forward(const double* in, const double* kern, double* out, const Conv2dShape& s);
void conv2d_grad_input(const double* kern, const double* dout, double* din, const Conv2dShape& s);
void conv2d_grad_kernel(const double* in, const double* dout, double* dkern, const Conv2dShape& s);
}  // namespace omp

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void softmax_rows(const double* x, double* y, int rows, int cols);
void conv2d_forward(const double* in, const double* kern, double* out, const Conv2dShape& s);
void conv2d_grad_input(const double* kern, const double* dout, double* din, const Conv2dShape& s);
void conv2d_grad_kernel(const double* in, const double* dout, double* dkern, const Conv2dShape& s);

}  // namespace anomem::kernels
