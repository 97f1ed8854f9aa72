#pragma once

// Per-output-row bodies shared by the serial and OpenMP kernel variants.
// Keeping one body per output row guarantees that the accumulation order for
// any given element never depends on the number of workers.

#include <cmath>
#include <cstring>
#include <vector>

#include "anomem/kernels.hpp"

namespace anomem::kernels::detail {

inline void mm_nn_row(const double* a, const double* b, double* c_row, int i, int k, int n) {
  const double* ai = a + 1LL * i * k;
  std::memset(c_row, 0, sizeof(double) * n);
  for (int l = 0; l < k; ++l) {
    const double av = ai[l];
    const double* bl = b + 1LL * l * n;
    for (int j = 0; j < n; ++j) c_row[j] += av * bl[j];
  }
}

inline void mm_nt_row(const double* a, const double* b, double* c_row, int i, int k, int n) {
  const double* ai = a + 1LL * i * k;
  for (int j = 0; j < n; ++j) {
    const double* bj = b + 1LL * j * k;
    double acc = 0.0;
    for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
    c_row[j] = acc;
  }
}

inline void mm_tn_row(const double* a, const double* b, double* c_row, int i, int k, int m, int n) {
  // c[i, :] = sum_l a[l, i] * b[l, :]
  std::memset(c_row, 0, sizeof(double) * n);
  for (int l = 0; l < k; ++l) {
    const double av = a[1LL * l * m + i];
    const double* bl = b + 1LL * l * n;
    for (int j = 0; j < n; ++j) c_row[j] += av * bl[j];
  }
}

inline void softmax_row(const double* x, double* y, int cols) {
  double mx = x[0];
  for (int j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
  double denom = 0.0;
  for (int j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    denom += y[j];
  }
  const double inv = 1.0 / denom;
  for (int j = 0; j < cols; ++j) y[j] *= inv;
}

// Gathers the receptive fields of one image into a [out_h*out_w, k_h*k_w*in_c]
// matrix; out-of-bounds taps are zero.
inline void im2col(const double* img, double* col, const Conv2dShape& s) {
  const int oh = s.out_h(), ow = s.out_w();
  const int ph = s.pad_h(), pw = s.pad_w();
  const long long width = s.col_width();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* row = col + (1LL * oy * ow + ox) * width;
      for (int ky = 0; ky < s.k_h; ++ky) {
        const int iy = oy * s.stride + ky - ph;
        for (int kx = 0; kx < s.k_w; ++kx) {
          const int ix = ox * s.stride + kx - pw;
          double* dst = row + (1LL * ky * s.k_w + kx) * s.in_c;
          if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) {
            std::memset(dst, 0, sizeof(double) * s.in_c);
          } else {
            std::memcpy(dst, img + (1LL * iy * s.in_w + ix) * s.in_c, sizeof(double) * s.in_c);
          }
        }
      }
    }
  }
}

// Scatter-add of column gradients back into one image.
inline void col2im_add(const double* col, double* img, const Conv2dShape& s) {
  const int oh = s.out_h(), ow = s.out_w();
  const int ph = s.pad_h(), pw = s.pad_w();
  const long long width = s.col_width();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* row = col + (1LL * oy * ow + ox) * width;
      for (int ky = 0; ky < s.k_h; ++ky) {
        const int iy = oy * s.stride + ky - ph;
        if (iy < 0 || iy >= s.in_h) continue;
        for (int kx = 0; kx < s.k_w; ++kx) {
          const int ix = ox * s.stride + kx - pw;
          if (ix < 0 || ix >= s.in_w) continue;
          const double* src = row + (1LL * ky * s.k_w + kx) * s.in_c;
          double* dst = img + (1LL * iy * s.in_w + ix) * s.in_c;
          for (int ci = 0; ci < s.in_c; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

inline void conv_forward_image(const double* img, const double* kern, double* out, double* col,
                               const Conv2dShape& s) {
  im2col(img, col, s);
  const int rows = s.out_h() * s.out_w();
  const int width = static_cast<int>(s.col_width());
  for (int r = 0; r < rows; ++r) {
    mm_nn_row(col, kern, out + 1LL * r * s.out_c, r, width, s.out_c);
  }
}

inline void conv_grad_input_image(const double* kern, const double* dout, double* din, double* dcol,
                                  const Conv2dShape& s) {
  const int rows = s.out_h() * s.out_w();
  const int width = static_cast<int>(s.col_width());
  for (int r = 0; r < rows; ++r) {
    mm_nt_row(dout, kern, dcol + 1LL * r * width, r, s.out_c, width);
  }
  std::memset(din, 0, sizeof(double) * s.in_h * s.in_w * s.in_c);
  col2im_add(dcol, din, s);
}

// One row of the kernel gradient, r = (ky, kx, ci). The loop order over
// batch and output positions is fixed, so the result is worker-independent.
inline void conv_grad_kernel_row(const double* in, const double* dout, double* dk_row, int r,
                                 const Conv2dShape& s) {
  const int ci = r % s.in_c;
  const int kx = (r / s.in_c) % s.k_w;
  const int ky = r / (s.in_c * s.k_w);
  const int oh = s.out_h(), ow = s.out_w();
  const int ph = s.pad_h(), pw = s.pad_w();
  std::memset(dk_row, 0, sizeof(double) * s.out_c);
  for (int b = 0; b < s.batch; ++b) {
    const double* img = in + 1LL * b * s.in_h * s.in_w * s.in_c;
    const double* dob = dout + 1LL * b * oh * ow * s.out_c;
    for (int oy = 0; oy < oh; ++oy) {
      const int iy = oy * s.stride + ky - ph;
      if (iy < 0 || iy >= s.in_h) continue;
      for (int ox = 0; ox < ow; ++ox) {
        const int ix = ox * s.stride + kx - pw;
        if (ix < 0 || ix >= s.in_w) continue;
        const double v = img[(1LL * iy * s.in_w + ix) * s.in_c + ci];
        const double* dorow = dob + (1LL * oy * ow + ox) * s.out_c;
        for (int co = 0; co < s.out_c; ++co) dk_row[co] += v * dorow[co];
      }
    }
  }
}

}  // namespace anomem::kernels::detail
