#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "anomem/memory.hpp"
#include "anomem/tensor.hpp"

namespace anomem {

// Two augmented views of a minibatch at one spatial position. `anchors_gated`
// holds the first branch after the label gate; `positives` is the raw second
// branch. labels: 1 = normal, 0 = anomaly.
struct ContrastBatch {
  Tensor anchors_gated;  // [B,d]
  Tensor positives;      // [B,d]
  std::vector<int> labels;
  double tau = 0.1;
};

enum class VarianceMode { per_sample, batch };

struct ScaleWeights {
  std::vector<double> lambda;  // per-scale loss weight
  std::vector<double> ratio;   // per-scale position sampling ratio, in (0,1]
};

struct MultiScaleLossCfg {
  double tau = 0.1;
  double lambda_v = 0.05;
  VarianceMode variance_mode = VarianceMode::per_sample;
};

// Normalized-temperature cross entropy for one anchor. The pool must contain
// the positive and must not contain the anchor itself.
Tensor nt_xent(const Tensor& anchor, const Tensor& positive, const std::vector<Tensor>& pool,
               double tau);

// Symmetric contrastive loss over a batch: every row of both branches serves
// as an anchor once, paired with its counterpart in the other branch, against
// a pool of the remaining 2B-1 representations.
Tensor loss_com(const ContrastBatch& batch);

// Negative mean feature spread of retrieved normal rows. per_sample takes the
// population variance across feature dims of each retrieved row; batch takes
// it across the normal rows per dim. Returns 0 (with a warning) if no row is
// normal.
Tensor loss_variance(const Tensor& gated, const std::vector<int>& y, VarianceMode mode);

// floor(h*w*ratio) distinct positions drawn uniformly without replacement.
std::vector<std::pair<int, int>> sample_positions(int h, int w, double ratio, std::uint64_t seed);

// Multi-scale combination: per scale s, positions Omega_s are sampled at
// ratio[s]; each position contributes lambda[s] * (pair loss + lambda_v *
// spread loss) on the gated depth vectors; the total is divided by the total
// position count (weights are not part of the normalizer). Rank-2 features
// [B,D] are treated as a 1x1 map.
Tensor loss_com_ms(const std::vector<Tensor>& feats_a, const std::vector<Tensor>& feats_b,
                   const std::vector<int>& y, const ScaleWeights& weights,
                   const std::vector<HopfieldMemory>& memories, const MultiScaleLossCfg& cfg,
                   std::uint64_t seed);

// Double hinge on a non-negative distance: normals are pulled below
// 1/margin, anomalies pushed above margin. Elementwise over d.
Tensor loss_dist(const Tensor& d, const std::vector<int>& y, double margin);

// Supervised distance loss over per-scale head outputs ([B] each). Raw
// outputs are clamped at zero before the hinge (the bridge rule); the sum is
// averaged over scales times batch.
Tensor loss_sup(const std::vector<Tensor>& scores, const std::vector<int>& y, double margin);

}  // namespace anomem
