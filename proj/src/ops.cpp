#include "anomem/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "anomem/errors.hpp"
#include "anomem/kernels.hpp"
#include "tensor_impl.hpp"

namespace anomem {

using detail::finalize_op;
using detail::grad_acc;
using detail::grad_of;
using detail::needs_grad;

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a.shape(), b.shape())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Decomposes a shape around `axis` so lines along the axis can be walked with
// a stride of `inner`.
struct AxisView {
  long long outer = 1;
  long long len = 1;
  long long inner = 1;
};

AxisView axis_view(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  }
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  v.len = s[axis];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) v.inner *= s[i];
  return v;
}

Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  return out;
}

Tensor unary_map(const Tensor& x, const char* name, double (*fwd)(double),
                 double (*bwd)(double x, double y)) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op(name, y, {&x}, [xi, yi, bwd]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += gy[i] * bwd(xi->values[i], yi->values[i]);
    }
  });
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  Tensor y(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  finalize_op("add", y, {&a, &b}, [ai, bi, yi]() {
    auto gy = grad_of(yi);
    if (needs_grad(*ai)) {
      auto g = grad_acc(ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (needs_grad(*bi)) {
      auto g = grad_acc(bi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  Tensor y(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  finalize_op("sub", y, {&a, &b}, [ai, bi, yi]() {
    auto gy = grad_of(yi);
    if (needs_grad(*ai)) {
      auto g = grad_acc(ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (needs_grad(*bi)) {
      auto g = grad_acc(bi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
    }
  });
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  Tensor y(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  finalize_op("mul", y, {&a, &b}, [ai, bi, yi]() {
    auto gy = grad_of(yi);
    if (needs_grad(*ai)) {
      auto g = grad_acc(ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bi->values[i];
    }
    if (needs_grad(*bi)) {
      auto g = grad_acc(bi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * ai->values[i];
    }
  });
  return y;
}

Tensor affine(const Tensor& x, double alpha, double beta) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = alpha * xv[i] + beta;
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("affine", y, {&x}, [xi, yi, alpha]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += alpha * gy[i];
  });
  return y;
}

Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }

Tensor relu(const Tensor& x) {
  return unary_map(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary_map(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_map(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_map(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 1e-12 ? 0.5 / y : 0.0; });
}

Tensor sum_all(const Tensor& x) {
  auto xv = x.values();
  double acc = 0.0;
  for (double v : xv) acc += v;
  Tensor y(Shape{}, {acc});
  auto xi = x.impl(), yi = y.impl();
  finalize_op("sum", y, {&x}, [xi, yi]() {
    if (!needs_grad(*xi)) return;
    const double g = grad_of(yi)[0];
    auto gx = grad_acc(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return y;
}

Tensor mean_all(const Tensor& x) {
  auto xv = x.values();
  double acc = 0.0;
  for (double v : xv) acc += v;
  const double inv = 1.0 / static_cast<double>(xv.size());
  Tensor y(Shape{}, {acc * inv});
  auto xi = x.impl(), yi = y.impl();
  finalize_op("mean", y, {&x}, [xi, yi, inv]() {
    if (!needs_grad(*xi)) return;
    const double g = grad_of(yi)[0] * inv;
    auto gx = grad_acc(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return y;
}

Tensor sum_axis(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "sum_axis");
  Shape out_shape = drop_axis(x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (long long o = 0; o < v.outer; ++o) {
    for (long long l = 0; l < v.len; ++l) {
      const double* src = xv.data() + (o * v.len + l) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (long long i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  Tensor y(std::move(out_shape), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("sum_axis", y, {&x}, [xi, yi, v]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (long long o = 0; o < v.outer; ++o) {
      for (long long l = 0; l < v.len; ++l) {
        double* dst = gx.data() + (o * v.len + l) * v.inner;
        const double* src = gy.data() + o * v.inner;
        for (long long i = 0; i < v.inner; ++i) dst[i] += src[i];
      }
    }
  });
  return y;
}

Tensor variance(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "variance");
  Shape out_shape = drop_axis(x.shape(), axis);
  auto xv = x.values();
  const double inv_len = 1.0 / static_cast<double>(v.len);
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (long long o = 0; o < v.outer; ++o) {
    for (long long i = 0; i < v.inner; ++i) {
      double m = 0.0;
      for (long long l = 0; l < v.len; ++l) m += xv[(o * v.len + l) * v.inner + i];
      m *= inv_len;
      double acc = 0.0;
      for (long long l = 0; l < v.len; ++l) {
        const double d = xv[(o * v.len + l) * v.inner + i] - m;
        acc += d * d;
      }
      out[o * v.inner + i] = acc * inv_len;
    }
  }
  Tensor y(std::move(out_shape), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("variance", y, {&x}, [xi, yi, v, inv_len]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    const auto& xvals = xi->values;
    for (long long o = 0; o < v.outer; ++o) {
      for (long long i = 0; i < v.inner; ++i) {
        double m = 0.0;
        for (long long l = 0; l < v.len; ++l) m += xvals[(o * v.len + l) * v.inner + i];
        m *= inv_len;
        const double g = gy[o * v.inner + i] * 2.0 * inv_len;
        for (long long l = 0; l < v.len; ++l) {
          const long long at = (o * v.len + l) * v.inner + i;
          gx[at] += g * (xvals[at] - m);
        }
      }
    }
  });
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  auto xv = x.values();
  Tensor y(std::move(shape), std::vector<double>(xv.begin(), xv.end()));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("reshape", y, {&x}, [xi, yi]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
  return y;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(x.shape()));
  const int m = x.shape()[0], n = x.shape()[1];
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[1LL * j * m + i] = xv[1LL * i * n + j];
  }
  Tensor y(Shape{n, m}, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("transpose", y, {&x}, [xi, yi, m, n]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) gx[1LL * i * n + j] += gy[1LL * j * m + i];
    }
  });
  return y;
}

Tensor vconcat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw DimensionError("vconcat expects rank-2 inputs with equal column count, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int d = a.shape()[1];
  const int na = a.shape()[0], nb = b.shape()[0];
  auto av = a.values(), bv = b.values();
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  out.insert(out.end(), av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  Tensor y(Shape{na + nb, d}, std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  finalize_op("vconcat", y, {&a, &b}, [ai, bi, yi]() {
    auto gy = grad_of(yi);
    if (needs_grad(*ai)) {
      auto g = grad_acc(ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (needs_grad(*bi)) {
      auto g = grad_acc(bi);
      const std::size_t off = ai->values.size();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[off + i];
    }
  });
  return y;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  if (x.rank() != 2) throw DimensionError("gather_rows expects rank 2");
  if (rows.empty()) throw ValidationError("gather_rows: empty row list");
  const int n = x.shape()[0], d = x.shape()[1];
  for (int r : rows) {
    if (r < 0 || r >= n) throw ValidationError("gather_rows: row index out of range");
  }
  auto xv = x.values();
  std::vector<double> out(rows.size() * static_cast<std::size_t>(d));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::memcpy(out.data() + k * d, xv.data() + 1LL * rows[k] * d, sizeof(double) * d);
  }
  Tensor y(Shape{static_cast<int>(rows.size()), d}, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("gather_rows", y, {&x}, [xi, yi, rows, d]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (int c = 0; c < d; ++c) gx[1LL * rows[k] * d + c] += gy[k * d + c];
    }
  });
  return y;
}

Tensor scatter_rows(const Tensor& rows, const std::vector<int>& indices, int n_rows) {
  if (rows.rank() != 2) throw DimensionError("scatter_rows expects rank 2");
  if (static_cast<int>(indices.size()) != rows.shape()[0]) {
    throw DimensionError("scatter_rows: index count does not match row count");
  }
  const int d = rows.shape()[1];
  for (int r : indices) {
    if (r < 0 || r >= n_rows) throw ValidationError("scatter_rows: index out of range");
  }
  auto rv = rows.values();
  std::vector<double> out(1LL * n_rows * d, 0.0);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    double* dst = out.data() + 1LL * indices[k] * d;
    for (int c = 0; c < d; ++c) dst[c] += rv[k * d + c];
  }
  Tensor y(Shape{n_rows, d}, std::move(out));
  auto ri = rows.impl(), yi = y.impl();
  finalize_op("scatter_rows", y, {&rows}, [ri, yi, indices, d]() {
    if (!needs_grad(*ri)) return;
    auto gy = grad_of(yi);
    auto gr = grad_acc(ri);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      for (int c = 0; c < d; ++c) gr[k * d + c] += gy[1LL * indices[k] * d + c];
    }
  });
  return y;
}

Tensor gather_pairs(const Tensor& x, const std::vector<std::pair<int, int>>& at) {
  if (x.rank() != 2) throw DimensionError("gather_pairs expects rank 2");
  if (at.empty()) throw ValidationError("gather_pairs: empty index list");
  const int n = x.shape()[0], m = x.shape()[1];
  auto xv = x.values();
  std::vector<double> out(at.size());
  for (std::size_t k = 0; k < at.size(); ++k) {
    const auto [i, j] = at[k];
    if (i < 0 || i >= n || j < 0 || j >= m) {
      throw ValidationError("gather_pairs: index out of range");
    }
    out[k] = xv[1LL * i * m + j];
  }
  Tensor y(Shape{static_cast<int>(at.size())}, std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("gather_pairs", y, {&x}, [xi, yi, at, m]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (std::size_t k = 0; k < at.size(); ++k) {
      gx[1LL * at[k].first * m + at[k].second] += gy[k];
    }
  });
  return y;
}

Tensor select_position(const Tensor& maps, int i, int j) {
  if (maps.rank() != 4) throw DimensionError("select_position expects [B,H,W,C]");
  const int b = maps.shape()[0], h = maps.shape()[1], w = maps.shape()[2], c = maps.shape()[3];
  if (i < 0 || i >= h || j < 0 || j >= w) {
    throw ValidationError("select_position: position out of range");
  }
  auto xv = maps.values();
  std::vector<double> out(1LL * b * c);
  for (int s = 0; s < b; ++s) {
    std::memcpy(out.data() + 1LL * s * c, xv.data() + ((1LL * s * h + i) * w + j) * c,
                sizeof(double) * c);
  }
  Tensor y(Shape{b, c}, std::move(out));
  auto xi = maps.impl(), yi = y.impl();
  finalize_op("select_position", y, {&maps}, [xi, yi, b, h, w, c, i, j]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (int s = 0; s < b; ++s) {
      double* dst = gx.data() + ((1LL * s * h + i) * w + j) * c;
      for (int ch = 0; ch < c; ++ch) dst[ch] += gy[1LL * s * c + ch];
    }
  });
  return y;
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  if (v.inner == 1) {
    kernels::softmax_rows(xv.data(), out.data(), static_cast<int>(v.outer),
                          static_cast<int>(v.len));
  } else {
    std::vector<double> line(v.len), sline(v.len);
    for (long long o = 0; o < v.outer; ++o) {
      for (long long i = 0; i < v.inner; ++i) {
        for (long long l = 0; l < v.len; ++l) line[l] = xv[(o * v.len + l) * v.inner + i];
        kernels::serial::softmax_rows(line.data(), sline.data(), 1, static_cast<int>(v.len));
        for (long long l = 0; l < v.len; ++l) out[(o * v.len + l) * v.inner + i] = sline[l];
      }
    }
  }
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("softmax", y, {&x}, [xi, yi, v]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    const auto& yv = yi->values;
    for (long long o = 0; o < v.outer; ++o) {
      for (long long i = 0; i < v.inner; ++i) {
        double dot = 0.0;
        for (long long l = 0; l < v.len; ++l) {
          const long long at = (o * v.len + l) * v.inner + i;
          dot += gy[at] * yv[at];
        }
        for (long long l = 0; l < v.len; ++l) {
          const long long at = (o * v.len + l) * v.inner + i;
          gx[at] += yv[at] * (gy[at] - dot);
        }
      }
    }
  });
  return y;
}

Tensor l2_normalize(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "l2_normalize");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (long long o = 0; o < v.outer; ++o) {
    for (long long i = 0; i < v.inner; ++i) {
      double sq = 0.0;
      for (long long l = 0; l < v.len; ++l) {
        const double val = xv[(o * v.len + l) * v.inner + i];
        sq += val * val;
      }
      const double norm = std::sqrt(sq);
      const double inv = norm > 1e-12 ? 1.0 / norm : 0.0;
      for (long long l = 0; l < v.len; ++l) {
        const long long at = (o * v.len + l) * v.inner + i;
        out[at] = xv[at] * inv;
      }
    }
  }
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("l2_normalize", y, {&x}, [xi, yi, v]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    const auto& xvals = xi->values;
    const auto& yv = yi->values;
    for (long long o = 0; o < v.outer; ++o) {
      for (long long i = 0; i < v.inner; ++i) {
        double sq = 0.0;
        for (long long l = 0; l < v.len; ++l) {
          const double val = xvals[(o * v.len + l) * v.inner + i];
          sq += val * val;
        }
        const double norm = std::sqrt(sq);
        if (norm <= 1e-12) continue;  // zero vector maps to zero with zero gradient
        double dot = 0.0;
        for (long long l = 0; l < v.len; ++l) {
          const long long at = (o * v.len + l) * v.inner + i;
          dot += gy[at] * yv[at];
        }
        const double inv = 1.0 / norm;
        for (long long l = 0; l < v.len; ++l) {
          const long long at = (o * v.len + l) * v.inner + i;
          gx[at] += (gy[at] - yv[at] * dot) * inv;
        }
      }
    }
  });
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(1LL * m * n);
  kernels::matmul_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  Tensor y(Shape{m, n}, std::move(out));
  auto ai = a.impl(), bi = b.impl(), yi = y.impl();
  finalize_op("matmul", y, {&a, &b}, [ai, bi, yi, m, k, n]() {
    auto gy = grad_of(yi);
    if (needs_grad(*ai)) {
      std::vector<double> tmp(1LL * m * k);
      kernels::matmul_nt(gy.data(), bi->values.data(), tmp.data(), m, n, k);
      auto g = grad_acc(ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += tmp[i];
    }
    if (needs_grad(*bi)) {
      std::vector<double> tmp(1LL * k * n);
      kernels::matmul_tn(ai->values.data(), gy.data(), tmp.data(), k, m, n);
      auto g = grad_acc(bi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += tmp[i];
    }
  });
  return y;
}

namespace {

kernels::Conv2dShape conv_shape(const Tensor& x, const Tensor& kernel, int stride, bool batched) {
  if (kernel.rank() != 4) throw DimensionError("conv2d kernel must be [kh,kw,ci,co]");
  if (stride < 1) throw ValidationError("conv2d stride must be >= 1");
  kernels::Conv2dShape s;
  const auto& xs = x.shape();
  s.batch = batched ? xs[0] : 1;
  s.in_h = xs[batched ? 1 : 0];
  s.in_w = xs[batched ? 2 : 1];
  s.in_c = xs[batched ? 3 : 2];
  s.k_h = kernel.shape()[0];
  s.k_w = kernel.shape()[1];
  s.out_c = kernel.shape()[3];
  s.stride = stride;
  if (kernel.shape()[2] != s.in_c) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.shape()[2]) +
                         " input channels, input has " + std::to_string(s.in_c));
  }
  return s;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride) {
  const bool batched = x.rank() == 4;
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("conv2d input must be [H,W,C] or [B,H,W,C]");
  }
  const kernels::Conv2dShape s = conv_shape(x, kernel, stride, batched);
  const int oh = s.out_h(), ow = s.out_w();
  std::vector<double> out(1LL * s.batch * oh * ow * s.out_c);
  kernels::conv2d_forward(x.values().data(), kernel.values().data(), out.data(), s);
  Shape out_shape = batched ? Shape{s.batch, oh, ow, s.out_c} : Shape{oh, ow, s.out_c};
  Tensor y(std::move(out_shape), std::move(out));
  auto xi = x.impl(), ki = kernel.impl(), yi = y.impl();
  finalize_op("conv2d", y, {&x, &kernel}, [xi, ki, yi, s]() {
    auto gy = grad_of(yi);
    if (needs_grad(*xi)) {
      std::vector<double> tmp(xi->values.size());
      kernels::conv2d_grad_input(ki->values.data(), gy.data(), tmp.data(), s);
      auto g = grad_acc(xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += tmp[i];
    }
    if (needs_grad(*ki)) {
      std::vector<double> tmp(ki->values.size());
      kernels::conv2d_grad_kernel(xi->values.data(), gy.data(), tmp.data(), s);
      auto g = grad_acc(ki);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += tmp[i];
    }
  });
  return y;
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1) throw DimensionError("bias_add: bias must be rank 1");
  const int c = bias.shape()[0];
  if (x.rank() < 1 || x.shape().back() != c) {
    throw DimensionError("bias_add: trailing dimension of " + shape_str(x.shape()) +
                         " does not match bias " + shape_str(bias.shape()));
  }
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<double> out(xv.size());
  const long long rows = static_cast<long long>(xv.size()) / c;
  for (long long r = 0; r < rows; ++r) {
    for (int ch = 0; ch < c; ++ch) out[r * c + ch] = xv[r * c + ch] + bv[ch];
  }
  Tensor y(x.shape(), std::move(out));
  auto xi = x.impl(), bi = bias.impl(), yi = y.impl();
  finalize_op("bias_add", y, {&x, &bias}, [xi, bi, yi, rows, c]() {
    auto gy = grad_of(yi);
    if (needs_grad(*xi)) {
      auto g = grad_acc(xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (needs_grad(*bi)) {
      auto g = grad_acc(bi);
      for (long long r = 0; r < rows; ++r) {
        for (int ch = 0; ch < c; ++ch) g[ch] += gy[r * c + ch];
      }
    }
  });
  return y;
}

namespace {

struct PoolDims {
  int batch, h, w, c;
  bool batched;
};

PoolDims pool_dims(const Tensor& x, const char* op) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError(std::string(op) + " input must be [H,W,C] or [B,H,W,C]");
  }
  const bool batched = x.rank() == 4;
  const auto& s = x.shape();
  return {batched ? s[0] : 1, s[batched ? 1 : 0], s[batched ? 2 : 1], s[batched ? 3 : 2], batched};
}

}  // namespace

Tensor average_pool(const Tensor& x, int window) {
  const PoolDims d = pool_dims(x, "average_pool");
  if (window < 1) throw ValidationError("average_pool: window must be >= 1");
  if (d.h % window != 0 || d.w % window != 0) {
    throw ValidationError("average_pool: window " + std::to_string(window) +
                          " must divide spatial dims " + shape_str(x.shape()));
  }
  const int oh = d.h / window, ow = d.w / window;
  const double inv = 1.0 / (static_cast<double>(window) * window);
  auto xv = x.values();
  std::vector<double> out(1LL * d.batch * oh * ow * d.c, 0.0);
  for (int b = 0; b < d.batch; ++b) {
    for (int y = 0; y < d.h; ++y) {
      for (int xcol = 0; xcol < d.w; ++xcol) {
        const double* src = xv.data() + ((1LL * b * d.h + y) * d.w + xcol) * d.c;
        double* dst = out.data() + ((1LL * b * oh + y / window) * ow + xcol / window) * d.c;
        for (int ch = 0; ch < d.c; ++ch) dst[ch] += src[ch] * inv;
      }
    }
  }
  Shape out_shape = d.batched ? Shape{d.batch, oh, ow, d.c} : Shape{oh, ow, d.c};
  Tensor y(std::move(out_shape), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("average_pool", y, {&x}, [xi, yi, d, window, oh, ow, inv]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (int b = 0; b < d.batch; ++b) {
      for (int y2 = 0; y2 < d.h; ++y2) {
        for (int xcol = 0; xcol < d.w; ++xcol) {
          double* dst = gx.data() + ((1LL * b * d.h + y2) * d.w + xcol) * d.c;
          const double* src = gy.data() + ((1LL * b * oh + y2 / window) * ow + xcol / window) * d.c;
          for (int ch = 0; ch < d.c; ++ch) dst[ch] += src[ch] * inv;
        }
      }
    }
  });
  return y;
}

Tensor adaptive_average_pool(const Tensor& x, int out_h, int out_w) {
  const PoolDims d = pool_dims(x, "adaptive_average_pool");
  if (out_h < 1 || out_w < 1 || out_h > d.h || out_w > d.w) {
    throw ValidationError("adaptive_average_pool: target grid must fit the input");
  }
  auto span_of = [](int i, int in, int out) {
    const int lo = (i * in) / out;
    const int hi = ((i + 1) * in + out - 1) / out;
    return std::pair<int, int>{lo, hi};
  };
  auto xv = x.values();
  std::vector<double> out(1LL * d.batch * out_h * out_w * d.c, 0.0);
  for (int b = 0; b < d.batch; ++b) {
    for (int oy = 0; oy < out_h; ++oy) {
      const auto [y0, y1] = span_of(oy, d.h, out_h);
      for (int ox = 0; ox < out_w; ++ox) {
        const auto [x0, x1] = span_of(ox, d.w, out_w);
        const double inv = 1.0 / (static_cast<double>(y1 - y0) * (x1 - x0));
        double* dst = out.data() + ((1LL * b * out_h + oy) * out_w + ox) * d.c;
        for (int y2 = y0; y2 < y1; ++y2) {
          for (int x2 = x0; x2 < x1; ++x2) {
            const double* src = xv.data() + ((1LL * b * d.h + y2) * d.w + x2) * d.c;
            for (int ch = 0; ch < d.c; ++ch) dst[ch] += src[ch] * inv;
          }
        }
      }
    }
  }
  Shape out_shape = d.batched ? Shape{d.batch, out_h, out_w, d.c} : Shape{out_h, out_w, d.c};
  Tensor y(std::move(out_shape), std::move(out));
  auto xi = x.impl(), yi = y.impl();
  finalize_op("adaptive_average_pool", y, {&x}, [xi, yi, d, out_h, out_w, span_of]() {
    if (!needs_grad(*xi)) return;
    auto gy = grad_of(yi);
    auto gx = grad_acc(xi);
    for (int b = 0; b < d.batch; ++b) {
      for (int oy = 0; oy < out_h; ++oy) {
        const auto [y0, y1] = span_of(oy, d.h, out_h);
        for (int ox = 0; ox < out_w; ++ox) {
          const auto [x0, x1] = span_of(ox, d.w, out_w);
          const double inv = 1.0 / (static_cast<double>(y1 - y0) * (x1 - x0));
          const double* src = gy.data() + ((1LL * b * out_h + oy) * out_w + ox) * d.c;
          for (int y2 = y0; y2 < y1; ++y2) {
            for (int x2 = x0; x2 < x1; ++x2) {
              double* dst = gx.data() + ((1LL * b * d.h + y2) * d.w + x2) * d.c;
              for (int ch = 0; ch < d.c; ++ch) dst[ch] += src[ch] * inv;
            }
          }
        }
      }
    }
  });
  return y;
}

}  // namespace anomem
