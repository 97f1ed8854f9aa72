#include <cmath>
#include <random>

#include "anomem/augment.hpp"
#include "anomem/errors.hpp"
#include "doctest.h"

using namespace anomem;

namespace {

AugmentPolicy quiet_policy() {
  AugmentPolicy p;
  p.crop_scale_min = 1.0;
  p.crop_scale_max = 1.0;
  p.flip_prob = 0.0;
  p.color_prob = 0.0;
  p.blur_prob = 0.0;
  p.noise_prob = 0.0;
  return p;
}

Tensor rand_image(std::mt19937_64& eng, int h, int w, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(1LL * h * w * c);
  for (auto& x : v) x = u(eng);
  return Tensor({h, w, c}, std::move(v));
}

std::vector<double> vec(const Tensor& t) {
  auto s = t.values();
  return {s.begin(), s.end()};
}

}  // namespace

TEST_CASE("no-op policy is the identity") {
  std::mt19937_64 eng(1);
  Tensor img = rand_image(eng, 6, 5, 3);
  Tensor out = sample_view(quiet_policy(), img, 9);
  CHECK(vec(out) == vec(img));
}

TEST_CASE("draws are deterministic and independent") {
  AugmentPolicy p;
  p.seed = 7;
  std::mt19937_64 eng(2);
  Tensor img = rand_image(eng, 12, 12, 3);
  SUBCASE("same draw index reproduces") {
    CHECK(vec(sample_view(p, img, 4)) == vec(sample_view(p, img, 4)));
  }
  SUBCASE("seed changes the view") {
    AugmentPolicy q = p;
    q.seed = 8;
    CHECK(vec(sample_view(p, img, 4)) != vec(sample_view(q, img, 4)));
  }
  SUBCASE("paired views come out distinct") {
    int distinct = 0;
    for (std::uint64_t k = 0; k < 100; ++k) {
      if (vec(sample_view(p, img, 2 * k)) != vec(sample_view(p, img, 2 * k + 1))) ++distinct;
    }
    CHECK(distinct >= 99);
  }
}

TEST_CASE("output stays in shape and range") {
  AugmentPolicy p;
  p.seed = 3;
  p.brightness = 0.5;
  p.contrast = 0.5;
  p.saturation = 0.5;
  p.noise_std = 0.2;
  std::mt19937_64 eng(3);
  Tensor img = rand_image(eng, 9, 7, 3);
  for (std::uint64_t k = 0; k < 30; ++k) {
    Tensor out = sample_view(p, img, k);
    REQUIRE(out.shape() == img.shape());
    for (double v : out.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("flip mirrors columns") {
  AugmentPolicy p = quiet_policy();
  p.flip_prob = 1.0;
  std::mt19937_64 eng(4);
  Tensor img = rand_image(eng, 4, 5, 2);
  Tensor out = sample_view(p, img, 0);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int c = 0; c < 2; ++c) CHECK(out.at({y, x, c}) == img.at({y, 4 - x, c}));
    }
  }
}

TEST_CASE("noise magnitude calibrates to the configured std") {
  AugmentPolicy p = quiet_policy();
  p.noise_prob = 1.0;
  p.noise_std = 0.1;
  p.seed = 11;
  Tensor img = Tensor::full({100, 100, 1}, 0.5);
  Tensor out = sample_view(p, img, 1);
  double mean = 0.0;
  for (double v : out.values()) mean += v - 0.5;
  mean /= 10000.0;
  double var = 0.0;
  for (double v : out.values()) var += (v - 0.5 - mean) * (v - 0.5 - mean);
  const double stddev = std::sqrt(var / 10000.0);
  CHECK(stddev == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("blur keeps constant images constant and averages locally") {
  AugmentPolicy p = quiet_policy();
  p.blur_prob = 1.0;
  p.blur_sigma_min = 2.0;
  p.blur_sigma_max = 2.0;
  SUBCASE("constant image") {
    Tensor img = Tensor::full({8, 8, 2}, 0.37);
    Tensor out = sample_view(p, img, 0);
    for (double v : out.values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
  SUBCASE("values stay within the input hull") {
    std::mt19937_64 eng(5);
    Tensor img = rand_image(eng, 10, 10, 1);
    double lo = 1.0, hi = 0.0;
    for (double v : img.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    Tensor out = sample_view(p, img, 0);
    for (double v : out.values()) {
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
  }
}

TEST_CASE("cropping resamples but preserves extent") {
  AugmentPolicy p = quiet_policy();
  p.crop_scale_min = 0.5;
  p.crop_scale_max = 0.5;
  std::mt19937_64 eng(6);
  Tensor img = rand_image(eng, 16, 16, 1);
  Tensor out = sample_view(p, img, 3);
  REQUIRE(out.shape() == img.shape());
  CHECK(vec(out) != vec(img));
}

TEST_CASE("policy and input validation") {
  std::mt19937_64 eng(7);
  Tensor img = rand_image(eng, 6, 6, 1);
  AugmentPolicy p = quiet_policy();
  p.crop_scale_max = 1.5;
  CHECK_THROWS_AS(sample_view(p, img, 0), ValidationError);
  p = quiet_policy();
  p.crop_scale_min = 0.0;
  CHECK_THROWS_AS(sample_view(p, img, 0), ValidationError);
  p = quiet_policy();
  p.flip_prob = -0.1;
  CHECK_THROWS_AS(sample_view(p, img, 0), ValidationError);
  p = quiet_policy();
  p.noise_std = -1.0;
  CHECK_THROWS_AS(sample_view(p, img, 0), ValidationError);
  p = quiet_policy();
  p.blur_sigma_min = 2.0;
  p.blur_sigma_max = 1.0;
  CHECK_THROWS_AS(sample_view(p, img, 0), ValidationError);

  CHECK_THROWS_AS(sample_view(quiet_policy(), Tensor::zeros({4, 4}), 0), DimensionError);
  CHECK_THROWS_AS(sample_view(quiet_policy(), Tensor::full({4, 4, 1}, 1.5), 0), ValidationError);
}
