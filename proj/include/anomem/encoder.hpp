#pragma once

#include <cstdint>
#include <vector>

#include "anomem/tensor.hpp"

namespace anomem {

// One encoder stage: `blocks` 3x3 conv+relu layers, each striding by
// `stride`, ending at `channels` feature channels.
struct StageSpec {
  int channels = 0;
  int blocks = 1;
  int stride = 2;
};

struct EncoderSpec {
  int in_h = 32;
  int in_w = 32;
  int in_c = 3;
  std::vector<StageSpec> stages = {{64, 2, 2}, {128, 3, 2}};
  int embed_dim = 128;
  bool use_projection_head = false;  // reserved knob, must stay off

  // Spatial side lengths after each stage (index 0 = input).
  std::vector<std::pair<int, int>> stage_dims() const;
};

struct EncoderState {
  EncoderSpec spec;
  std::vector<Tensor> kernels;  // one per conv block, stage-major
  std::vector<Tensor> biases;

  std::vector<Tensor*> parameters();
};

void validate(const EncoderSpec& spec);

// He fan-in initialization; biases start at zero. Deterministic per seed.
EncoderState encoder_init(const EncoderSpec& spec, std::uint64_t seed);

// Returns the per-scale feature maps z^(1)..z^(S); the final scale arrives
// flattened to [B, embed_dim].
std::vector<Tensor> encoder_forward(const EncoderState& state, const Tensor& images);

}  // namespace anomem
