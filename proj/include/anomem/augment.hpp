#pragma once

#include <cstdint>

#include "anomem/tensor.hpp"

namespace anomem {

// Stochastic view-generation policy. Each sampled view applies, in order:
// random crop with rescale, horizontal flip, color jitter, gaussian blur,
// gaussian pixel noise. Values stay inside [0,1].
struct AugmentPolicy {
  double crop_scale_min = 0.6;
  double crop_scale_max = 1.0;
  double flip_prob = 0.5;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double color_prob = 0.8;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 1.0;
  double blur_prob = 0.3;
  double noise_std = 0.02;
  double noise_prob = 0.5;
  std::uint64_t seed = 0;
};

void validate(const AugmentPolicy& policy);

// Deterministic in (policy.seed, draw_index); distinct draw indices give
// independent transforms.
Tensor sample_view(const AugmentPolicy& policy, const Tensor& image, std::uint64_t draw_index);

}  // namespace anomem
