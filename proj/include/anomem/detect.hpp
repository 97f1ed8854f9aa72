#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anomem/encoder.hpp"
#include "anomem/memory.hpp"
#include "anomem/tensor.hpp"

namespace anomem {

enum class ScoreMode { one_class, ssad };

std::string to_string(ScoreMode mode);

// Residual between a feature map and its memory recollection. `delta` keeps
// the batch axis: [B,H,W,C] for spatial scales, [B,D] for the flat one.
struct DeviationMap {
  int scale = 0;
  Tensor delta;
};

// Adaptive average pool to a fixed grid, then a two-layer MLP down to one
// scalar per sample.
struct ScaleHead {
  int pool_h = 2;
  int pool_w = 2;
  Tensor w1, b1;  // [in, hidden], [hidden]
  Tensor w2, b2;  // [hidden, 1], [1]

  int in_features() const { return w1.shape()[0]; }
  int hidden() const { return w1.shape()[1]; }
  std::vector<Tensor*> parameters();
};

struct AnomalyScore {
  std::vector<double> per_scale;
  double fused = 0.0;
  ScoreMode mode = ScoreMode::one_class;
};

DeviationMap deviation_map(const HopfieldMemory& mem, const Tensor& z, int scale);

// Per-sample Frobenius norm of each scale's deviation map: result[s][b].
std::vector<std::vector<double>> score_oneclass(const std::vector<DeviationMap>& deviations);

ScaleHead make_scale_head(int channels, int pool_h, int pool_w, int hidden,
                          std::uint64_t seed, std::uint64_t tag);

// Pool, flatten, MLP; returns one scalar per sample, differentiable.
Tensor head_forward(const ScaleHead& head, const Tensor& delta);

std::vector<std::vector<double>> score_ssad(const std::vector<DeviationMap>& deviations,
                                            const std::vector<ScaleHead>& heads);

// Weighted mean with positive weights; stays inside [min, max] of the inputs.
double fuse_scores(const std::vector<double>& per_scale, const std::vector<double>& lambda);

AnomalyScore detector_score(const Tensor& image, const EncoderState& encoder,
                            const std::vector<HopfieldMemory>& memories,
                            const std::vector<ScaleHead>& heads,
                            const std::vector<double>& lambda, ScoreMode mode);

std::vector<AnomalyScore> detector_score_batch(const Tensor& images,
                                               const EncoderState& encoder,
                                               const std::vector<HopfieldMemory>& memories,
                                               const std::vector<ScaleHead>& heads,
                                               const std::vector<double>& lambda,
                                               ScoreMode mode);

}  // namespace anomem
