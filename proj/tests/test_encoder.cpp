#include <cmath>
#include <random>

#include "anomem/encoder.hpp"
#include "anomem/errors.hpp"
#include "anomem/ops.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace anomem;

namespace {

Tensor rand_images(std::mt19937_64& eng, const Shape& shape) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(eng);
  return Tensor(shape, std::move(v));
}

std::vector<double> vec(const Tensor& t) {
  auto s = t.values();
  return {s.begin(), s.end()};
}

EncoderSpec toy_spec() {
  EncoderSpec spec;
  spec.in_h = 8;
  spec.in_w = 8;
  spec.in_c = 2;
  spec.stages = {{4, 1, 2}, {6, 2, 2}};
  spec.embed_dim = 6;
  return spec;
}

}  // namespace

TEST_CASE("initialization is seeded and shaped by the spec") {
  EncoderSpec spec;  // default: 32x32x3 -> 8x8x64 -> 1x1x128
  auto a = encoder_init(spec, 11);
  auto b = encoder_init(spec, 11);
  auto c = encoder_init(spec, 12);
  REQUIRE(a.kernels.size() == 5);
  REQUIRE(a.biases.size() == 5);
  CHECK(a.kernels[0].shape() == Shape{3, 3, 3, 64});
  CHECK(a.kernels[1].shape() == Shape{3, 3, 64, 64});
  CHECK(a.kernels[2].shape() == Shape{3, 3, 64, 128});
  CHECK(a.kernels[3].shape() == Shape{3, 3, 128, 128});
  CHECK(a.kernels[4].shape() == Shape{3, 3, 128, 128});
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a.biases[i].shape() == Shape{a.kernels[i].shape()[3]});
    CHECK(vec(a.kernels[i]) == vec(b.kernels[i]));
    CHECK(vec(a.kernels[i]) != vec(c.kernels[i]));
    for (double v : a.biases[i].values()) CHECK(v == 0.0);
    CHECK(a.kernels[i].trainable());
    CHECK(a.biases[i].trainable());
  }
  CHECK(a.parameters().size() == 10);
}

TEST_CASE("fan-in scaling of the initializer") {
  auto state = encoder_init(EncoderSpec{}, 3);
  // third block maps 64 -> 128 channels: fan_in = 3*3*64, 73728 draws
  const double want = 2.0 / (3 * 3 * 64);
  double mean = 0.0;
  auto v = state.kernels[2].values();
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  CHECK(var == doctest::Approx(want).epsilon(0.2));
}

TEST_CASE("forward produces the documented scales") {
  auto state = encoder_init(EncoderSpec{}, 5);
  std::mt19937_64 eng(2);
  Tensor imgs = rand_images(eng, {2, 32, 32, 3});
  auto maps = encoder_forward(state, imgs);
  REQUIRE(maps.size() == 2);
  CHECK(maps[0].shape() == Shape{2, 8, 8, 64});
  CHECK(maps[1].shape() == Shape{2, 128});
}

TEST_CASE("zero input with zero biases stays zero at every scale") {
  auto state = encoder_init(toy_spec(), 7);
  auto maps = encoder_forward(state, Tensor::zeros({2, 8, 8, 2}));
  for (const auto& m : maps) {
    for (double v : m.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("samples do not couple across the batch") {
  auto state = encoder_init(toy_spec(), 9);
  std::mt19937_64 eng(4);
  Tensor pair_batch = rand_images(eng, {2, 8, 8, 2});
  const std::vector<double> both = vec(pair_batch);
  Tensor single({1, 8, 8, 2}, {both.begin(), both.begin() + 8 * 8 * 2});
  auto from_pair = encoder_forward(state, pair_batch);
  auto from_single = encoder_forward(state, single);
  for (std::size_t s = 0; s < from_pair.size(); ++s) {
    const long long per = from_single[s].size();
    auto pv = from_pair[s].values();
    auto sv = from_single[s].values();
    for (long long i = 0; i < per; ++i) CHECK(pv[i] == sv[i]);
  }
}

TEST_CASE("permuting the batch permutes the features") {
  auto state = encoder_init(toy_spec(), 13);
  std::mt19937_64 eng(6);
  Tensor x = rand_images(eng, {2, 8, 8, 2});
  std::vector<double> xv = vec(x);
  std::vector<double> swapped(xv.size());
  const long long per = 8 * 8 * 2;
  std::copy(xv.begin() + per, xv.end(), swapped.begin());
  std::copy(xv.begin(), xv.begin() + per, swapped.begin() + per);
  auto fwd = encoder_forward(state, x);
  auto bwd = encoder_forward(state, Tensor({2, 8, 8, 2}, std::move(swapped)));
  for (std::size_t s = 0; s < fwd.size(); ++s) {
    const long long n = fwd[s].size() / 2;
    auto a = fwd[s].values();
    auto b = bwd[s].values();
    for (long long i = 0; i < n; ++i) {
      CHECK(a[i] == b[n + i]);
      CHECK(a[n + i] == b[i]);
    }
  }
}

TEST_CASE("spec validation") {
  EncoderSpec bad = toy_spec();
  bad.stages[0].stride = 1;
  CHECK_THROWS_AS(encoder_init(bad, 1), ValidationError);
  bad = toy_spec();
  bad.embed_dim = 5;
  CHECK_THROWS_AS(encoder_init(bad, 1), ValidationError);
  bad = toy_spec();
  bad.in_h = 64;  // no longer reduces to 1x1
  CHECK_THROWS_AS(encoder_init(bad, 1), ValidationError);
  bad = toy_spec();
  bad.use_projection_head = true;
  CHECK_THROWS_AS(encoder_init(bad, 1), ValidationError);
  bad = toy_spec();
  bad.stages.clear();
  CHECK_THROWS_AS(encoder_init(bad, 1), ValidationError);

  auto state = encoder_init(toy_spec(), 1);
  CHECK_THROWS_AS(encoder_forward(state, Tensor::zeros({2, 8, 9, 2})), DimensionError);
  CHECK_THROWS_AS(encoder_forward(state, Tensor::zeros({8, 8, 2})), DimensionError);
}

TEST_CASE("end-to-end gradients match finite differences") {
  auto gen = [](std::mt19937_64& eng) -> gradcheck::FdCase {
    auto state = encoder_init(toy_spec(), eng());
    Tensor imgs = rand_images(eng, {2, 8, 8, 2});
    gradcheck::FdCase fc;
    fc.leaves = {state.kernels[0], state.biases[0]};
    Tensor w1 = gradcheck::probe_weights(eng, {2, 4, 4, 4});
    Tensor w2 = gradcheck::probe_weights(eng, {2, 6});
    fc.loss = [state, imgs, w1, w2] {
      auto maps = encoder_forward(state, imgs);
      return add(gradcheck::weighted_sum(maps[0], w1), gradcheck::weighted_sum(maps[1], w2));
    };
    return fc;
  };
  CHECK(gradcheck::run_suite(gen, 5, 0xe2c0de, 1e-5) < 1e-4);
}
