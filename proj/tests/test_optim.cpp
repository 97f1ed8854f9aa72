#include <cmath>
#include <vector>

#include "anomem/errors.hpp"
#include "anomem/ops.hpp"
#include "anomem/optim.hpp"
#include "anomem/tensor.hpp"
#include "doctest.h"

using namespace anomem;

namespace {

std::vector<double> vec(const Tensor& t) {
  auto s = t.values();
  return {s.begin(), s.end()};
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  Schedule s{0.05, 0.001, 100};
  CHECK(cosine_lr(s, 0) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(cosine_lr(s, 100) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(cosine_lr(s, 50) == doctest::Approx(0.5 * (0.05 + 0.001)).epsilon(1e-15));

  double prev = cosine_lr(s, 0);
  for (long long step = 1; step <= 100; ++step) {
    const double cur = cosine_lr(s, step);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }

  CHECK_THROWS_AS(cosine_lr(s, -1), ValidationError);
  CHECK_THROWS_AS(cosine_lr(s, 101), ValidationError);
  CHECK_THROWS_AS(cosine_lr(Schedule{0.05, 0.0, 0}, 0), ValidationError);
  CHECK_THROWS_AS(cosine_lr(Schedule{0.01, 0.05, 10}, 0), ValidationError);
}

TEST_CASE("zero momentum reduces to plain gradient descent") {
  Tensor p({2}, {1.0, -2.0});
  p.mark_trainable();
  SgdNesterov opt({p}, 0.0, 0.0);

  {
    Tape tape;
    Tensor loss = sum_all(mul(p, p));
    tape.backward(loss);
  }
  // grad = 2p = (2, -4); p <- p - 0.1 * grad
  opt.step(0.1);
  auto v = vec(p);
  CHECK(v[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(-1.6).epsilon(1e-15));
}

TEST_CASE("two nesterov steps on a quadratic match a scalar trace") {
  Tensor p({1}, {1.0});
  p.mark_trainable();
  const double lr = 0.1, mu = 0.9;
  SgdNesterov opt({p}, mu, 0.0);

  double ref_p = 1.0, ref_v = 0.0;
  for (int it = 0; it < 2; ++it) {
    opt.zero_grads();
    {
      Tape tape;
      Tensor loss = scale(sum_all(mul(p, p)), 0.5);  // f(p) = p^2 / 2, grad = p
      tape.backward(loss);
    }
    opt.step(lr);

    const double g = ref_p;
    ref_v = mu * ref_v - lr * g;
    ref_p = ref_p + mu * ref_v - lr * g;
    CHECK(p.values()[0] == doctest::Approx(ref_p).epsilon(1e-12));
    CHECK(opt.velocity(0)[0] == doctest::Approx(ref_v).epsilon(1e-12));
  }
  CHECK(ref_p == doctest::Approx(0.5751).epsilon(1e-12));
}

TEST_CASE("coupled weight decay folds the parameter into the gradient") {
  Tensor p({1}, {2.0});
  p.mark_trainable();
  SgdNesterov opt({p}, 0.0, 0.1);
  {
    Tape tape;
    Tensor loss = scale(sum_all(p), 3.0);  // grad = 3
    tape.backward(loss);
  }
  opt.step(0.5);
  // g_eff = 3 + 0.1 * 2 = 3.2; p <- 2 - 0.5 * 3.2 = 0.4
  CHECK(p.values()[0] == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("parameters without a live gradient stay untouched") {
  Tensor used({2}, {1.0, 1.0});
  Tensor idle({2}, {3.0, -3.0});
  Tensor zeroed({2}, {5.0, 7.0});
  used.mark_trainable();
  idle.mark_trainable();
  zeroed.mark_trainable();
  SgdNesterov opt({used, idle, zeroed}, 0.9, 5e-4);

  {
    Tape tape;
    // idle never enters the graph; zeroed is multiplied by zero so its
    // gradient buffer exists but holds only zeros.
    Tensor loss = sum_all(add(mul(used, used), mul(zeroed, Tensor::zeros({2}))));
    tape.backward(loss);
  }
  const auto idle_before = vec(idle);
  const auto zeroed_before = vec(zeroed);
  opt.step(0.05);

  CHECK(vec(idle) == idle_before);
  CHECK(vec(zeroed) == zeroed_before);
  CHECK(opt.velocity(1) == std::vector<double>{0.0, 0.0});
  CHECK(opt.velocity(2) == std::vector<double>{0.0, 0.0});
  CHECK(vec(used)[0] != 1.0);  // the live parameter did move
}

TEST_CASE("repeated steps with a zero objective are a fixed point") {
  Tensor p({3}, {0.25, -0.5, 4.0});
  p.mark_trainable();
  SgdNesterov opt({p}, 0.9, 5e-4);
  const auto before = vec(p);
  for (int it = 0; it < 3; ++it) {
    opt.zero_grads();
    {
      Tape tape;
      Tensor loss = sum_all(mul(p, Tensor::zeros({3})));
      tape.backward(loss);
    }
    opt.step(0.05);
  }
  CHECK(vec(p) == before);
}

TEST_CASE("optimizer construction validates its inputs") {
  Tensor p({1}, {0.0});
  p.mark_trainable();
  CHECK_THROWS_AS(SgdNesterov({p}, -0.1, 0.0), ValidationError);
  CHECK_THROWS_AS(SgdNesterov({p}, 1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(SgdNesterov({p}, 0.9, -1e-3), ValidationError);
  CHECK_THROWS_AS(SgdNesterov({Tensor{}}, 0.9, 0.0), ValidationError);
  SgdNesterov ok({p}, 0.9, 0.0);
  CHECK_THROWS_AS(ok.step(-0.1), ValidationError);
  CHECK_THROWS_AS(ok.step(std::nan("")), ValidationError);
}
