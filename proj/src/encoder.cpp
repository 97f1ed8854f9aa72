#include "anomem/encoder.hpp"

#include <cmath>
#include <random>
#include <string>

#include "anomem/errors.hpp"
#include "anomem/ops.hpp"
#include "anomem/rng.hpp"

namespace anomem {

namespace {

int strided_out(int in, int stride) { return (in - 1) / stride + 1; }

}  // namespace

std::vector<std::pair<int, int>> EncoderSpec::stage_dims() const {
  std::vector<std::pair<int, int>> dims;
  dims.emplace_back(in_h, in_w);
  int h = in_h, w = in_w;
  for (const auto& st : stages) {
    for (int b = 0; b < st.blocks; ++b) {
      h = strided_out(h, st.stride);
      w = strided_out(w, st.stride);
    }
    dims.emplace_back(h, w);
  }
  return dims;
}

void validate(const EncoderSpec& spec) {
  if (spec.in_h < 1 || spec.in_w < 1 || spec.in_c < 1) {
    throw ValidationError("encoder: input dims must be positive");
  }
  if (spec.stages.empty()) throw ValidationError("encoder: needs at least one stage");
  for (const auto& st : spec.stages) {
    if (st.channels < 1) throw ValidationError("encoder: stage channels must be positive");
    if (st.blocks < 1) throw ValidationError("encoder: stage needs at least one block");
    if (st.stride < 2) {
      throw ValidationError("encoder: every stage must downsample (stride >= 2)");
    }
  }
  if (spec.embed_dim != spec.stages.back().channels) {
    throw ValidationError("encoder: embed_dim must equal the last stage's channels");
  }
  const auto dims = spec.stage_dims();
  if (dims.back() != std::pair<int, int>{1, 1}) {
    throw ValidationError("encoder: final stage must reduce the input to 1x1, got " +
                          std::to_string(dims.back().first) + "x" +
                          std::to_string(dims.back().second));
  }
  if (spec.use_projection_head) {
    throw ValidationError("encoder: use_projection_head is reserved and must stay off");
  }
}

EncoderState encoder_init(const EncoderSpec& spec, std::uint64_t seed) {
  validate(spec);
  auto eng = rng::engine(seed, rng::Stream::encoder_init);
  std::normal_distribution<double> gauss(0.0, 1.0);
  EncoderState state;
  state.spec = spec;
  int cin = spec.in_c;
  for (const auto& st : spec.stages) {
    for (int b = 0; b < st.blocks; ++b) {
      const int fan_in = 3 * 3 * cin;
      const double std_dev = std::sqrt(2.0 / fan_in);
      std::vector<double> k(1LL * 3 * 3 * cin * st.channels);
      for (auto& v : k) v = std_dev * gauss(eng);
      Tensor kern(Shape{3, 3, cin, st.channels}, std::move(k));
      kern.mark_trainable();
      Tensor bias = Tensor::zeros({st.channels});
      bias.mark_trainable();
      state.kernels.push_back(kern);
      state.biases.push_back(bias);
      cin = st.channels;
    }
  }
  return state;
}

std::vector<Tensor*> EncoderState::parameters() {
  std::vector<Tensor*> ps;
  for (auto& k : kernels) ps.push_back(&k);
  for (auto& b : biases) ps.push_back(&b);
  return ps;
}

std::vector<Tensor> encoder_forward(const EncoderState& state, const Tensor& images) {
  const auto& spec = state.spec;
  if (images.rank() != 4 || images.shape()[1] != spec.in_h || images.shape()[2] != spec.in_w ||
      images.shape()[3] != spec.in_c) {
    throw DimensionError("encoder_forward: expected images [B," + std::to_string(spec.in_h) + "," +
                         std::to_string(spec.in_w) + "," + std::to_string(spec.in_c) + "], got " +
                         shape_str(images.shape()));
  }
  std::vector<Tensor> maps;
  Tensor x = images;
  std::size_t layer = 0;
  for (const auto& st : spec.stages) {
    for (int b = 0; b < st.blocks; ++b) {
      x = relu(bias_add(conv2d(x, state.kernels[layer], st.stride), state.biases[layer]));
      ++layer;
    }
    maps.push_back(x);
  }
  maps.back() = reshape(maps.back(), {images.shape()[0], spec.embed_dim});
  return maps;
}

}  // namespace anomem
