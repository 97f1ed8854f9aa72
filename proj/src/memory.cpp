#include "anomem/memory.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "anomem/errors.hpp"
#include "anomem/kernels.hpp"
#include "anomem/ops.hpp"
#include "anomem/rng.hpp"
#include "tensor_impl.hpp"

namespace anomem {

int HopfieldMemory::dim() const { return weights.shape()[0]; }
int HopfieldMemory::count() const { return weights.shape()[1]; }

HopfieldMemory make_memory(int dim, int count, double beta, double tol, int max_iters,
                           bool normalize_queries, std::uint64_t seed, std::uint64_t stream_tag) {
  if (dim < 1 || count < 1) throw ValidationError("memory needs dim >= 1 and count >= 1");
  if (beta <= 0.0) throw ValidationError("memory beta must be > 0");
  if (tol < 0.0) throw ValidationError("memory tol must be >= 0");
  if (max_iters < 1) throw ValidationError("memory max_iters must be >= 1");
  auto eng = rng::engine(seed, rng::Stream::memory_init, {stream_tag});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> w(1LL * dim * count);
  std::vector<double> col(dim);
  for (int m = 0; m < count; ++m) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int j = 0; j < dim; ++j) {
        col[j] = gauss(eng);
        norm += col[j] * col[j];
      }
      norm = std::sqrt(norm);
    } while (norm <= 1e-12);
    for (int j = 0; j < dim; ++j) w[1LL * j * count + m] = col[j] / norm;
  }
  HopfieldMemory mem;
  mem.weights = Tensor(Shape{dim, count}, std::move(w));
  mem.weights.mark_trainable();
  mem.beta = beta;
  mem.tol = tol;
  mem.max_iters = max_iters;
  mem.normalize_queries = normalize_queries;
  return mem;
}

namespace {

struct IterRecord {
  std::vector<int> rows;       // indices still iterating at this step
  std::vector<double> xi_in;   // their pre-update states, [A x d]
  std::vector<double> probs;   // their softmax weights, [A x count]
};

// Retrieval on a rank-2 query. One tape node covers all executed updates.
Tensor retrieve_rows(const HopfieldMemory& mem, const Tensor& query) {
  const int b = query.shape()[0];
  const int d = mem.dim();
  const int n = mem.count();
  const Tensor& w = mem.weights;

  std::vector<double> xi(query.values().begin(), query.values().end());
  std::vector<int> active(b);
  for (int r = 0; r < b; ++r) active[r] = r;

  std::vector<IterRecord> history;
  std::vector<double> xa, amat, next;
  for (int t = 0; t < mem.max_iters && !active.empty(); ++t) {
    const int a = static_cast<int>(active.size());
    xa.resize(1LL * a * d);
    for (int k = 0; k < a; ++k) {
      for (int j = 0; j < d; ++j) xa[1LL * k * d + j] = xi[1LL * active[k] * d + j];
    }
    amat.resize(1LL * a * n);
    kernels::matmul_nn(xa.data(), w.values().data(), amat.data(), a, d, n);
    for (double& v : amat) v *= mem.beta;
    IterRecord rec;
    rec.rows = active;
    rec.xi_in = xa;
    rec.probs.resize(amat.size());
    kernels::softmax_rows(amat.data(), rec.probs.data(), a, n);
    next.resize(1LL * a * d);
    kernels::matmul_nt(rec.probs.data(), w.values().data(), next.data(), a, n, d);
    history.push_back(std::move(rec));

    std::vector<int> still;
    for (int k = 0; k < a; ++k) {
      const int r = active[k];
      double delta = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = std::fabs(next[1LL * k * d + j] - xi[1LL * r * d + j]);
        delta = diff > delta ? diff : delta;
        xi[1LL * r * d + j] = next[1LL * k * d + j];
      }
      if (!(delta < mem.tol)) still.push_back(r);
    }
    active = std::move(still);
  }

  Tensor out(query.shape(), std::move(xi));
  auto qi = query.impl(), wi = w.impl(), oi = out.impl();
  const double beta = mem.beta;
  detail::finalize_op(
      "hopfield_retrieve", out, {&query, &w},
      [qi, wi, oi, history = std::move(history), b, d, n, beta]() {
        const bool want_q = detail::needs_grad(*qi);
        const bool want_w = detail::needs_grad(*wi);
        if (!want_q && !want_w) return;
        auto gout = detail::grad_of(oi);
        std::vector<double> g(gout.begin(), gout.end());  // running d(loss)/d(xi at step t)
        std::vector<double> dw(wi->values.size(), 0.0);
        std::vector<double> ga, dp, tmp, dxi;
        for (auto it = history.rbegin(); it != history.rend(); ++it) {
          const int a = static_cast<int>(it->rows.size());
          ga.resize(1LL * a * d);
          for (int k = 0; k < a; ++k) {
            for (int j = 0; j < d; ++j) ga[1LL * k * d + j] = g[1LL * it->rows[k] * d + j];
          }
          // through xi_next = P * W^T
          dp.resize(1LL * a * n);
          kernels::matmul_nn(ga.data(), wi->values.data(), dp.data(), a, d, n);
          tmp.resize(1LL * d * n);
          kernels::matmul_tn(ga.data(), it->probs.data(), tmp.data(), d, a, n);
          for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += tmp[i];
          // through P = softmax(beta * xi * W); dp becomes beta * dA in place
          for (int k = 0; k < a; ++k) {
            const double* p = it->probs.data() + 1LL * k * n;
            double* dpk = dp.data() + 1LL * k * n;
            double dot = 0.0;
            for (int m = 0; m < n; ++m) dot += dpk[m] * p[m];
            for (int m = 0; m < n; ++m) dpk[m] = beta * p[m] * (dpk[m] - dot);
          }
          dxi.resize(1LL * a * d);
          kernels::matmul_nt(dp.data(), wi->values.data(), dxi.data(), a, n, d);
          kernels::matmul_tn(it->xi_in.data(), dp.data(), tmp.data(), d, a, n);
          for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += tmp[i];
          for (int k = 0; k < a; ++k) {
            for (int j = 0; j < d; ++j) g[1LL * it->rows[k] * d + j] = dxi[1LL * k * d + j];
          }
        }
        if (want_q) {
          auto gq = detail::grad_acc(qi);
          for (std::size_t i = 0; i < gq.size(); ++i) gq[i] += g[i];
        }
        if (want_w) {
          auto gw = detail::grad_acc(wi);
          for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw[i];
        }
      });
  return out;
}

}  // namespace

Tensor retrieve(const HopfieldMemory& mem, const Tensor& query) {
  if (!mem.weights.defined()) throw StateError("retrieve on an uninitialized memory");
  const bool single = query.rank() == 1;
  if (query.rank() != 1 && query.rank() != 2) {
    throw DimensionError("retrieve expects a vector or a row matrix, got " +
                         shape_str(query.shape()));
  }
  const int d = query.shape()[single ? 0 : 1];
  if (d != mem.dim()) {
    throw DimensionError("retrieve: query width " + std::to_string(d) +
                         " does not match memory dim " + std::to_string(mem.dim()));
  }
  Tensor q = single ? reshape(query, {1, d}) : query;
  if (mem.normalize_queries) q = l2_normalize(q, 1);
  Tensor out = retrieve_rows(mem, q);
  return single ? reshape(out, {d}) : out;
}

Tensor mem_gate(const HopfieldMemory& mem, const Tensor& z, const std::vector<int>& y) {
  if (z.rank() != 2) throw DimensionError("mem_gate expects [B,d]");
  const int b = z.shape()[0];
  if (static_cast<int>(y.size()) != b) {
    throw DimensionError("mem_gate: got " + std::to_string(y.size()) + " labels for " +
                         std::to_string(b) + " rows");
  }
  std::vector<int> normal, anomalous;
  for (int r = 0; r < b; ++r) {
    if (y[r] == 1) {
      normal.push_back(r);
    } else if (y[r] == 0) {
      anomalous.push_back(r);
    } else {
      throw ValidationError("mem_gate: labels must be 0 or 1");
    }
  }
  if (anomalous.empty()) return retrieve(mem, z);
  if (normal.empty()) return z;
  Tensor retrieved = retrieve(mem, gather_rows(z, normal));
  Tensor kept = gather_rows(z, anomalous);
  return add(scatter_rows(retrieved, normal, b), scatter_rows(kept, anomalous, b));
}

Tensor spatial_retrieve(const HopfieldMemory& mem, const Tensor& maps) {
  if (maps.rank() != 3 && maps.rank() != 4) {
    throw DimensionError("spatial_retrieve expects [H,W,C] or [B,H,W,C]");
  }
  const Shape orig = maps.shape();
  const int c = orig.back();
  long long rows = 1;
  for (std::size_t i = 0; i + 1 < orig.size(); ++i) rows *= orig[i];
  Tensor flat = reshape(maps, {static_cast<int>(rows), c});
  return reshape(retrieve(mem, flat), orig);
}

double min_prototype_distance(const Tensor& weights) {
  if (weights.rank() != 2) throw DimensionError("prototype weights must be rank 2");
  const int d = weights.shape()[0], n = weights.shape()[1];
  if (n < 2) return std::numeric_limits<double>::infinity();
  auto w = weights.values();
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < n; ++a) {
    for (int b2 = a + 1; b2 < n; ++b2) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = w[1LL * j * n + a] - w[1LL * j * n + b2];
        acc += diff * diff;
      }
      const double dist = std::sqrt(acc);
      best = dist < best ? dist : best;
    }
  }
  return best;
}

double max_prototype_distance(const Tensor& weights) {
  if (weights.rank() != 2) throw DimensionError("prototype weights must be rank 2");
  const int d = weights.shape()[0], n = weights.shape()[1];
  if (n < 2) return 0.0;
  auto w = weights.values();
  double best = 0.0;
  for (int a = 0; a < n; ++a) {
    for (int b2 = a + 1; b2 < n; ++b2) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = w[1LL * j * n + a] - w[1LL * j * n + b2];
        acc += diff * diff;
      }
      const double dist = std::sqrt(acc);
      best = dist > best ? dist : best;
    }
  }
  return best;
}

std::vector<double> prototype_norms(const Tensor& weights) {
  if (weights.rank() != 2) throw DimensionError("prototype weights must be rank 2");
  const int d = weights.shape()[0], n = weights.shape()[1];
  auto w = weights.values();
  std::vector<double> norms(n, 0.0);
  for (int m = 0; m < n; ++m) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double v = w[1LL * j * n + m];
      acc += v * v;
    }
    norms[m] = std::sqrt(acc);
  }
  return norms;
}

}  // namespace anomem
