#include "anomem/detect.hpp"

#include <cmath>
#include <random>

#include "anomem/errors.hpp"
#include "anomem/ops.hpp"
#include "anomem/rng.hpp"

namespace anomem {

std::string to_string(ScoreMode mode) {
  return mode == ScoreMode::one_class ? "one-class" : "ssad";
}

std::vector<Tensor*> ScaleHead::parameters() { return {&w1, &b1, &w2, &b2}; }

DeviationMap deviation_map(const HopfieldMemory& mem, const Tensor& z, int scale) {
  if (!z.defined() || (z.rank() != 2 && z.rank() != 4)) {
    throw DimensionError("deviation_map: expected [B,H,W,C] or [B,D] features");
  }
  const int channels = z.shape().back();
  if (channels != mem.dim()) {
    throw DimensionError("deviation_map: feature width " + std::to_string(channels) +
                         " does not match memory dim " + std::to_string(mem.dim()));
  }
  Tensor recalled = z.rank() == 2 ? retrieve(mem, z) : spatial_retrieve(mem, z);
  return DeviationMap{scale, sub(z, recalled)};
}

std::vector<std::vector<double>> score_oneclass(const std::vector<DeviationMap>& deviations) {
  std::vector<std::vector<double>> scores;
  scores.reserve(deviations.size());
  for (const DeviationMap& dev : deviations) {
    const Tensor& d = dev.delta;
    if (!d.defined() || d.rank() < 2) {
      throw DimensionError("score_oneclass: deviation map missing its batch axis");
    }
    const int b = d.shape()[0];
    const long long per = d.size() / b;
    auto v = d.values();
    std::vector<double> s(b, 0.0);
    for (int i = 0; i < b; ++i) {
      double acc = 0.0;
      for (long long k = 0; k < per; ++k) {
        const double e = v[i * per + k];
        acc += e * e;
      }
      s[i] = std::sqrt(acc);
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

ScaleHead make_scale_head(int channels, int pool_h, int pool_w, int hidden,
                          std::uint64_t seed, std::uint64_t tag) {
  if (channels < 1 || pool_h < 1 || pool_w < 1) {
    throw ValidationError("scale head: pooling grid and channel count must be positive");
  }
  if (hidden < 1) throw ValidationError("scale head: hidden width must be at least 1");

  const int in = pool_h * pool_w * channels;
  auto eng = rng::engine(seed, rng::Stream::head_init, {tag});
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto he = [&](int rows, int cols, int fan_in) {
    std::vector<double> w(1LL * rows * cols);
    const double sigma = std::sqrt(2.0 / fan_in);
    for (double& x : w) x = sigma * gauss(eng);
    return Tensor({rows, cols}, std::move(w));
  };

  ScaleHead head;
  head.pool_h = pool_h;
  head.pool_w = pool_w;
  head.w1 = he(in, hidden, in);
  head.b1 = Tensor::zeros({hidden});
  head.w2 = he(hidden, 1, hidden);
  head.b2 = Tensor::zeros({1});
  for (Tensor* p : head.parameters()) p->mark_trainable();
  return head;
}

Tensor head_forward(const ScaleHead& head, const Tensor& delta) {
  if (!delta.defined() || (delta.rank() != 2 && delta.rank() != 4)) {
    throw DimensionError("head_forward: expected [B,H,W,C] or [B,D] deviations");
  }
  const int b = delta.shape()[0];
  Tensor flat;
  if (delta.rank() == 4) {
    const int c = delta.shape()[3];
    if (head.in_features() != head.pool_h * head.pool_w * c) {
      throw ValidationError("head_forward: head expects " +
                            std::to_string(head.in_features()) + " pooled features, map pools to " +
                            std::to_string(head.pool_h * head.pool_w * c));
    }
    Tensor pooled = adaptive_average_pool(delta, head.pool_h, head.pool_w);
    flat = reshape(pooled, {b, head.in_features()});
  } else {
    if (head.pool_h != 1 || head.pool_w != 1) {
      throw ValidationError("head_forward: flat deviations require a global 1x1 pooling grid");
    }
    if (delta.shape()[1] != head.in_features()) {
      throw ValidationError("head_forward: head expects " + std::to_string(head.in_features()) +
                            " features, got " + std::to_string(delta.shape()[1]));
    }
    flat = delta;
  }
  Tensor h = relu(bias_add(matmul(flat, head.w1), head.b1));
  Tensor out = bias_add(matmul(h, head.w2), head.b2);
  return reshape(out, {b});
}

std::vector<std::vector<double>> score_ssad(const std::vector<DeviationMap>& deviations,
                                            const std::vector<ScaleHead>& heads) {
  if (heads.size() != deviations.size()) {
    throw ValidationError("score_ssad: " + std::to_string(deviations.size()) +
                          " deviation maps but " + std::to_string(heads.size()) + " heads");
  }
  std::vector<std::vector<double>> scores;
  scores.reserve(deviations.size());
  for (std::size_t s = 0; s < deviations.size(); ++s) {
    Tensor out = head_forward(heads[s], deviations[s].delta);
    auto v = out.values();
    scores.emplace_back(v.begin(), v.end());
  }
  return scores;
}

double fuse_scores(const std::vector<double>& per_scale, const std::vector<double>& lambda) {
  if (per_scale.empty()) throw ValidationError("fuse_scores: need at least one scale");
  if (per_scale.size() != lambda.size()) {
    throw ValidationError("fuse_scores: " + std::to_string(per_scale.size()) + " scores vs " +
                          std::to_string(lambda.size()) + " weights");
  }
  double total = 0.0, acc = 0.0;
  for (std::size_t s = 0; s < per_scale.size(); ++s) {
    if (!(lambda[s] > 0.0)) throw ValidationError("fuse_scores: weights must be positive");
    total += lambda[s];
    acc += lambda[s] * per_scale[s];
  }
  return acc / total;
}

std::vector<AnomalyScore> detector_score_batch(const Tensor& images,
                                               const EncoderState& encoder,
                                               const std::vector<HopfieldMemory>& memories,
                                               const std::vector<ScaleHead>& heads,
                                               const std::vector<double>& lambda,
                                               ScoreMode mode) {
  if (!images.defined() || images.rank() != 4) {
    throw DimensionError("detector_score: expected [B,H,W,C] images");
  }
  const std::size_t n_scales = encoder.spec.stages.size();
  if (memories.size() != n_scales) {
    throw ValidationError("detector_score: expected one memory per scale");
  }
  if (lambda.size() != n_scales) {
    throw ValidationError("detector_score: expected one fusion weight per scale");
  }
  if (mode == ScoreMode::ssad && heads.size() != n_scales) {
    throw ValidationError("detector_score: ssad mode needs one head per scale");
  }

  std::vector<Tensor> maps = encoder_forward(encoder, images);
  std::vector<DeviationMap> devs;
  devs.reserve(n_scales);
  for (std::size_t s = 0; s < n_scales; ++s) {
    devs.push_back(deviation_map(memories[s], maps[s], static_cast<int>(s) + 1));
  }
  const auto per_scale =
      mode == ScoreMode::one_class ? score_oneclass(devs) : score_ssad(devs, heads);

  const int b = images.shape()[0];
  std::vector<AnomalyScore> out(b);
  std::vector<double> one(n_scales);
  for (int i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < n_scales; ++s) one[s] = per_scale[s][i];
    out[i].per_scale = one;
    out[i].fused = fuse_scores(one, lambda);
    out[i].mode = mode;
  }
  return out;
}

AnomalyScore detector_score(const Tensor& image, const EncoderState& encoder,
                            const std::vector<HopfieldMemory>& memories,
                            const std::vector<ScaleHead>& heads,
                            const std::vector<double>& lambda, ScoreMode mode) {
  if (!image.defined() || image.rank() != 3) {
    throw DimensionError("detector_score: expected one [H,W,C] image");
  }
  Shape lifted = {1, image.shape()[0], image.shape()[1], image.shape()[2]};
  auto vals = image.values();
  Tensor batch(lifted, std::vector<double>(vals.begin(), vals.end()));
  return detector_score_batch(batch, encoder, memories, heads, lambda, mode).front();
}

}  // namespace anomem
