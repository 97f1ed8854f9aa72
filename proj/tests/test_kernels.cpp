#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "anomem/kernels.hpp"

using namespace anomem;

namespace {

std::vector<double> randvec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(eng);
  return v;
}

// Plain triple loop, independent of the library's row decomposition.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, int m,
                                 int k, int n) {
  std::vector<double> c(1LL * m * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a[1LL * i * k + l] * b[1LL * l * n + j];
      c[1LL * i * n + j] = acc;
    }
  }
  return c;
}

std::vector<double> naive_conv(const std::vector<double>& in, const std::vector<double>& kern,
                               const kernels::Conv2dShape& s) {
  const int oh = s.out_h(), ow = s.out_w();
  std::vector<double> out(1LL * s.batch * oh * ow * s.out_c, 0.0);
  for (int b = 0; b < s.batch; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int co = 0; co < s.out_c; ++co) {
          double acc = 0.0;
          for (int ky = 0; ky < s.k_h; ++ky) {
            const int iy = oy * s.stride + ky - s.pad_h();
            if (iy < 0 || iy >= s.in_h) continue;
            for (int kx = 0; kx < s.k_w; ++kx) {
              const int ix = ox * s.stride + kx - s.pad_w();
              if (ix < 0 || ix >= s.in_w) continue;
              for (int ci = 0; ci < s.in_c; ++ci) {
                acc += in[(((1LL * b * s.in_h + iy) * s.in_w) + ix) * s.in_c + ci] *
                       kern[((1LL * ky * s.k_w + kx) * s.in_c + ci) * s.out_c + co];
              }
            }
          }
          out[(((1LL * b * oh + oy) * ow) + ox) * s.out_c + co] = acc;
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("matmul variants match a naive reference") {
  const int m = 7, k = 13, n = 5;
  auto a = randvec(1LL * m * k, 11);
  auto b = randvec(1LL * k * n, 22);
  auto expect = naive_matmul(a, b, m, k, n);

  std::vector<double> c(1LL * m * n);
  kernels::serial::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-13));

  // nt: feed b transposed
  std::vector<double> bt(b.size());
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) bt[1LL * j * k + i] = b[1LL * i * n + j];
  }
  kernels::serial::matmul_nt(a.data(), bt.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-13));

  // tn: feed a transposed
  std::vector<double> at(a.size());
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) at[1LL * l * m + i] = a[1LL * i * k + l];
  }
  kernels::serial::matmul_tn(at.data(), b.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("parallel kernels are bitwise identical to serial ones") {
  kernels::set_threads(3);  // oversubscription is fine; results must not depend on it
  const int m = 33, k = 17, n = 29;
  auto a = randvec(1LL * m * k, 7);
  auto b = randvec(1LL * k * n, 8);
  std::vector<double> cs(1LL * m * n), cp(1LL * m * n);

  kernels::serial::matmul_nn(a.data(), b.data(), cs.data(), m, k, n);
  kernels::omp::matmul_nn(a.data(), b.data(), cp.data(), m, k, n);
  CHECK(cs == cp);

  auto bnk = randvec(1LL * n * k, 9);  // [n x k] operand for the transposed form
  kernels::serial::matmul_nt(a.data(), bnk.data(), cs.data(), m, k, n);
  kernels::omp::matmul_nt(a.data(), bnk.data(), cp.data(), m, k, n);
  CHECK(cs == cp);

  auto bmn = randvec(1LL * m * n, 10);  // [m x n]; contracts against a's rows
  std::vector<double> ts(1LL * k * n), tp(1LL * k * n);
  kernels::serial::matmul_tn(a.data(), bmn.data(), ts.data(), k, m, n);
  kernels::omp::matmul_tn(a.data(), bmn.data(), tp.data(), k, m, n);
  CHECK(ts == tp);

  std::vector<double> ss(1LL * m * k), sp(1LL * m * k);
  kernels::serial::softmax_rows(a.data(), ss.data(), m, k);
  kernels::omp::softmax_rows(a.data(), sp.data(), m, k);
  CHECK(ss == sp);

  kernels::Conv2dShape shp{.batch = 4, .in_h = 9, .in_w = 7, .in_c = 3,
                           .k_h = 3, .k_w = 3, .out_c = 5, .stride = 2};
  auto in = randvec(1LL * shp.batch * shp.in_h * shp.in_w * shp.in_c, 31);
  auto kern = randvec(shp.col_width() * shp.out_c, 32);
  const long long osz = 1LL * shp.batch * shp.out_h() * shp.out_w() * shp.out_c;
  std::vector<double> os(osz), op(osz);
  kernels::serial::conv2d_forward(in.data(), kern.data(), os.data(), shp);
  kernels::omp::conv2d_forward(in.data(), kern.data(), op.data(), shp);
  CHECK(os == op);

  auto dout = randvec(osz, 33);
  std::vector<double> dis(in.size()), dip(in.size());
  kernels::serial::conv2d_grad_input(kern.data(), dout.data(), dis.data(), shp);
  kernels::omp::conv2d_grad_input(kern.data(), dout.data(), dip.data(), shp);
  CHECK(dis == dip);

  std::vector<double> dks(kern.size()), dkp(kern.size());
  kernels::serial::conv2d_grad_kernel(in.data(), dout.data(), dks.data(), shp);
  kernels::omp::conv2d_grad_kernel(in.data(), dout.data(), dkp.data(), shp);
  CHECK(dks == dkp);

  kernels::set_threads(0);
}

TEST_CASE("conv2d forward matches direct convolution on odd kernels") {
  for (int stride : {1, 2, 3}) {
    kernels::Conv2dShape s{.batch = 2, .in_h = 8, .in_w = 6, .in_c = 3,
                           .k_h = 3, .k_w = 3, .out_c = 4, .stride = stride};
    CHECK(s.out_h() == (s.in_h - 1) / stride + 1);
    CHECK(s.out_w() == (s.in_w - 1) / stride + 1);
    auto in = randvec(1LL * s.batch * s.in_h * s.in_w * s.in_c, 100 + stride);
    auto kern = randvec(s.col_width() * s.out_c, 200 + stride);
    auto expect = naive_conv(in, kern, s);
    std::vector<double> out(expect.size());
    kernels::serial::conv2d_forward(in.data(), kern.data(), out.data(), s);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d gradients are exact linear-map transposes") {
  // For fixed kernel K the forward map is linear in the input, so
  // <conv(x), u> must equal <x, grad_input(u)> exactly up to roundoff.
  kernels::Conv2dShape s{.batch = 1, .in_h = 5, .in_w = 5, .in_c = 2,
                         .k_h = 3, .k_w = 3, .out_c = 3, .stride = 2};
  auto x = randvec(1LL * s.in_h * s.in_w * s.in_c, 1);
  auto kern = randvec(s.col_width() * s.out_c, 2);
  const long long osz = 1LL * s.out_h() * s.out_w() * s.out_c;
  auto u = randvec(osz, 3);

  std::vector<double> fwd(osz);
  kernels::serial::conv2d_forward(x.data(), kern.data(), fwd.data(), s);
  double lhs = 0.0;
  for (long long i = 0; i < osz; ++i) lhs += fwd[i] * u[i];

  std::vector<double> dx(x.size());
  kernels::serial::conv2d_grad_input(kern.data(), u.data(), dx.data(), s);
  double rhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * dx[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

  // Same adjoint identity in the kernel argument.
  std::vector<double> dk(kern.size());
  kernels::serial::conv2d_grad_kernel(x.data(), u.data(), dk.data(), s);
  double rhs_k = 0.0;
  for (std::size_t i = 0; i < kern.size(); ++i) rhs_k += kern[i] * dk[i];
  CHECK(lhs == doctest::Approx(rhs_k).epsilon(1e-12));
}

TEST_CASE("softmax rows are normalized and shift invariant") {
  auto x = randvec(4 * 6, 55);
  std::vector<double> y(x.size()), y2(x.size());
  kernels::serial::softmax_rows(x.data(), y.data(), 4, 6);
  for (int r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 6; ++c) sum += y[r * 6 + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto shifted = x;
  for (auto& v : shifted) v += 123.0;
  kernels::serial::softmax_rows(shifted.data(), y2.data(), 4, 6);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(y2[i]).epsilon(1e-12));
}

TEST_CASE("thread cap resolves") {
  kernels::set_threads(2);
  CHECK(kernels::resolved_threads() == 2);
  kernels::set_threads(0);
  CHECK(kernels::resolved_threads() >= 1);
}
