#include "anomem/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace anomem::kernels {

namespace {
std::atomic<int> g_thread_cap{0};
}

void set_threads(int n) { g_thread_cap.store(n < 0 ? 0 : n); }

int thread_cap() { return g_thread_cap.load(); }

int resolved_threads() {
  int cap = g_thread_cap.load();
  if (cap > 0) return cap;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (resolved_threads() > 1) {
    omp::matmul_nn(a, b, c, m, k, n);
  } else {
    serial::matmul_nn(a, b, c, m, k, n);
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  if (resolved_threads() > 1) {
    omp::matmul_nt(a, b, c, m, k, n);
  } else {
    serial::matmul_nt(a, b, c, m, k, n);
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (resolved_threads() > 1) {
    omp::matmul_tn(a, b, c, m, k, n);
  } else {
    serial::matmul_tn(a, b, c, m, k, n);
  }
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  if (resolved_threads() > 1) {
    omp::softmax_rows(x, y, rows, cols);
  } else {
    serial::softmax_rows(x, y, rows, cols);
  }
}

void conv2d_forward(const double* in, const double* kern, double* out, const Conv2dShape& s) {
  if (resolved_threads() > 1) {
    omp::conv2d_forward(in, kern, out, s);
  } else {
    serial::conv2d_forward(in, kern, out, s);
  }
}

void conv2d_grad_input(const double* kern, const double* dout, double* din, const Conv2dShape& s) {
  if (resolved_threads() > 1) {
    omp::conv2d_grad_input(kern, dout, din, s);
  } else {
    serial::conv2d_grad_input(kern, dout, din, s);
  }
}

void conv2d_grad_kernel(const double* in, const double* dout, double* dkern, const Conv2dShape& s) {
  if (resolved_threads() > 1) {
    omp::conv2d_grad_kernel(in, dout, dkern, s);
  } else {
    serial::conv2d_grad_kernel(in, dout, dkern, s);
  }
}

}  // namespace anomem::kernels
