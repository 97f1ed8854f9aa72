#include "anomem/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "anomem/errors.hpp"
#include "anomem/ops.hpp"
#include "anomem/rng.hpp"

namespace anomem {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be > 0");
}

void check_row_norms(const Tensor& m, const char* who) {
  const int rows = m.shape()[0], d = m.shape()[1];
  auto v = m.values();
  for (int r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (int j = 0; j < d; ++j) {
      const double x = v[1LL * r * d + j];
      sq += x * x;
    }
    if (std::sqrt(sq) <= 1e-12) {
      throw NumericError(std::string(who) + ": zero-norm vector has no cosine direction");
    }
  }
}

void check_labels(const std::vector<int>& y, int b, const char* who) {
  if (static_cast<int>(y.size()) != b) {
    throw DimensionError(std::string(who) + ": got " + std::to_string(y.size()) +
                         " labels for batch " + std::to_string(b));
  }
  for (int v : y) {
    if (v != 0 && v != 1) throw ValidationError(std::string(who) + ": labels must be 0 or 1");
  }
}

}  // namespace

Tensor nt_xent(const Tensor& anchor, const Tensor& positive, const std::vector<Tensor>& pool,
               double tau) {
  check_tau(tau);
  if (anchor.rank() != 1 || positive.rank() != 1) {
    throw DimensionError("nt_xent expects vector anchor and positive");
  }
  if (pool.empty()) throw ValidationError("nt_xent: empty pool");
  const int d = anchor.shape()[0];
  if (positive.shape()[0] != d) throw DimensionError("nt_xent: positive width mismatch");
  Tensor stacked = reshape(pool[0], {1, d});
  for (std::size_t i = 1; i < pool.size(); ++i) {
    if (pool[i].rank() != 1 || pool[i].shape()[0] != d) {
      throw DimensionError("nt_xent: pool width mismatch");
    }
    stacked = vconcat(stacked, reshape(pool[i], {1, d}));
  }
  check_row_norms(reshape(anchor, {1, d}), "nt_xent");
  check_row_norms(reshape(positive, {1, d}), "nt_xent");
  check_row_norms(stacked, "nt_xent");

  Tensor a_hat = l2_normalize(reshape(anchor, {1, d}), 1);
  Tensor logits = scale(matmul(l2_normalize(stacked, 1), transpose(a_hat)), 1.0 / tau);
  Tensor pos_logit =
      scale(matmul(l2_normalize(reshape(positive, {1, d}), 1), transpose(a_hat)), 1.0 / tau);
  return sub(log(sum_all(exp(logits))), reshape(pos_logit, {}));
}

Tensor loss_com(const ContrastBatch& batch) {
  check_tau(batch.tau);
  const Tensor& za = batch.anchors_gated;
  const Tensor& zb = batch.positives;
  if (za.rank() != 2 || zb.rank() != 2 || !same_shape(za.shape(), zb.shape())) {
    throw DimensionError("loss_com expects matching [B,d] branches");
  }
  const int b = za.shape()[0];
  check_labels(batch.labels, b, "loss_com");
  check_row_norms(za, "loss_com");
  check_row_norms(zb, "loss_com");

  // Cosine similarity matrix over both branches; every row is an anchor and
  // its pool is the remaining 2B-1 rows. The diagonal is pushed to -inf
  // territory before exponentiating so self-similarity exactly vanishes from
  // the denominator instead of being subtracted back out (which cancels badly
  // against exp(1/tau)).
  Tensor all = vconcat(za, zb);
  Tensor unit = l2_normalize(all, 1);
  Tensor logits = scale(matmul(unit, transpose(unit)), 1.0 / batch.tau);

  const int n2 = 2 * b;
  std::vector<double> maskv(1LL * n2 * n2, 0.0);
  std::vector<std::pair<int, int>> pos(n2);
  for (int k = 0; k < n2; ++k) {
    maskv[1LL * k * n2 + k] = -1e9;
    pos[k] = {k, (k + b) % n2};
  }
  Tensor denom = sum_axis(exp(add(logits, Tensor({n2, n2}, std::move(maskv)))), 1);
  Tensor per_anchor = sub(log(denom), gather_pairs(logits, pos));
  return mean_all(per_anchor);
}

Tensor loss_variance(const Tensor& gated, const std::vector<int>& y, VarianceMode mode) {
  if (gated.rank() != 2) throw DimensionError("loss_variance expects [B,d]");
  const int b = gated.shape()[0];
  check_labels(y, b, "loss_variance");
  std::vector<int> normal;
  for (int r = 0; r < b; ++r) {
    if (y[r] == 1) normal.push_back(r);
  }
  if (normal.empty()) {
    std::cerr << "[anomem] warning: spread loss saw a batch with no normal rows; contributing 0\n";
    return Tensor::scalar(0.0);
  }
  if (mode == VarianceMode::per_sample) {
    Tensor spread = sqrt(variance(gated, 1));  // [B]
    std::vector<double> w(b, 0.0);
    const double inv = 1.0 / static_cast<double>(normal.size());
    for (int r : normal) w[r] = inv;
    return scale(sum_all(mul(spread, Tensor({b}, std::move(w)))), -1.0);
  }
  Tensor rows = gather_rows(gated, normal);
  return scale(mean_all(sqrt(variance(rows, 0))), -1.0);
}

std::vector<std::pair<int, int>> sample_positions(int h, int w, double ratio, std::uint64_t seed) {
  if (h < 1 || w < 1) throw ValidationError("sample_positions: empty grid");
  if (!(ratio > 0.0) || ratio > 1.0) {
    throw ValidationError("sample_positions: ratio must lie in (0,1]");
  }
  const long long total = 1LL * h * w;
  const long long count = static_cast<long long>(std::floor(static_cast<double>(total) * ratio));
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  auto eng = rng::engine(seed, rng::Stream::positions);
  std::vector<std::pair<int, int>> out;
  out.reserve(count);
  for (long long k = 0; k < count; ++k) {
    std::uniform_int_distribution<long long> pick(k, total - 1);
    std::swap(idx[k], idx[pick(eng)]);
    out.emplace_back(idx[k] / w, idx[k] % w);
  }
  return out;
}

Tensor loss_com_ms(const std::vector<Tensor>& feats_a, const std::vector<Tensor>& feats_b,
                   const std::vector<int>& y, const ScaleWeights& weights,
                   const std::vector<HopfieldMemory>& memories, const MultiScaleLossCfg& cfg,
                   std::uint64_t seed) {
  const std::size_t s_count = feats_a.size();
  if (s_count == 0) throw ValidationError("loss_com_ms: no scales");
  if (feats_b.size() != s_count || memories.size() != s_count ||
      weights.lambda.size() != s_count || weights.ratio.size() != s_count) {
    throw DimensionError("loss_com_ms: per-scale inputs disagree on scale count");
  }

  Tensor acc = Tensor::scalar(0.0);
  long long total_positions = 0;
  for (std::size_t s = 0; s < s_count; ++s) {
    const Tensor& fa = feats_a[s];
    const Tensor& fb = feats_b[s];
    if (!same_shape(fa.shape(), fb.shape())) {
      throw DimensionError("loss_com_ms: branch shapes disagree at a scale");
    }
    if (fa.rank() != 2 && fa.rank() != 4) {
      throw DimensionError("loss_com_ms: features must be [B,D] or [B,H,W,C]");
    }
    const bool flat = fa.rank() == 2;
    const int h = flat ? 1 : fa.shape()[1];
    const int w = flat ? 1 : fa.shape()[2];
    const auto positions =
        sample_positions(h, w, weights.ratio[s], rng::derive(seed, {static_cast<std::uint64_t>(s)}));
    for (const auto& [i, j] : positions) {
      Tensor za = flat ? fa : select_position(fa, i, j);
      Tensor zb = flat ? fb : select_position(fb, i, j);
      Tensor gated = mem_gate(memories[s], za, y);
      Tensor term = loss_com({gated, zb, y, cfg.tau});
      if (cfg.lambda_v != 0.0) {
        term = add(term, scale(loss_variance(gated, y, cfg.variance_mode), cfg.lambda_v));
      }
      acc = add(acc, scale(term, weights.lambda[s]));
      ++total_positions;
    }
  }
  if (total_positions == 0) throw ValidationError("loss_com_ms: no positions sampled");
  return scale(acc, 1.0 / static_cast<double>(total_positions));
}

Tensor loss_dist(const Tensor& d, const std::vector<int>& y, double margin) {
  if (!(margin > 0.0)) throw ValidationError("loss_dist: margin must be > 0");
  const long long n = d.size();
  check_labels(y, static_cast<int>(n), "loss_dist");
  for (double v : d.values()) {
    if (v < 0.0) throw ValidationError("loss_dist: distances must be non-negative");
  }
  std::vector<double> w_norm(n), w_anom(n);
  for (long long i = 0; i < n; ++i) {
    w_norm[i] = y[i] == 1 ? 1.0 : 0.0;
    w_anom[i] = 1.0 - w_norm[i];
  }
  Tensor pull = relu(affine(d, 1.0, -1.0 / margin));  // normals toward the center
  Tensor push = relu(affine(d, -1.0, margin));        // anomalies past the margin
  return add(mul(pull, Tensor(d.shape(), std::move(w_norm))),
             mul(push, Tensor(d.shape(), std::move(w_anom))));
}

Tensor loss_sup(const std::vector<Tensor>& scores, const std::vector<int>& y, double margin) {
  if (scores.empty()) throw ValidationError("loss_sup: no scales");
  const long long b = scores[0].size();
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& s : scores) {
    if (s.rank() != 1 || s.size() != b) {
      throw DimensionError("loss_sup: per-scale scores must all be [B]");
    }
    acc = add(acc, sum_all(loss_dist(relu(s), y, margin)));
  }
  return scale(acc, 1.0 / (static_cast<double>(scores.size()) * static_cast<double>(b)));
}

}  // namespace anomem
