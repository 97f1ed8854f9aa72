#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include "anomem/kernels.hpp"

// Serial reference vs OpenMP kernels on the shapes the training loop actually
// hits. Both variants produce bitwise-identical output, so the only question
// benchmarked here is throughput.

namespace {

using anomem::kernels::Conv2dShape;

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = gauss(gen);
  return out;
}

// matmul_nn at the contrastive-similarity size: [2B x d] * [d x 2B]
template <typename Fn>
void run_matmul(benchmark::State& state, Fn fn) {
  const int m = int(state.range(0));
  const int k = 64;
  const int n = m;
  const std::vector<double> a = random_buffer(std::size_t(m) * k, 11);
  const std::vector<double> b = random_buffer(std::size_t(k) * n, 12);
  std::vector<double> c(std::size_t(m) * n);
  for (auto _ : state) {
    fn(a.data(), b.data(), c.data(), m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * m * k * n);
}

void BM_matmul_serial(benchmark::State& state) {
  run_matmul(state, anomem::kernels::serial::matmul_nn);
}
void BM_matmul_omp(benchmark::State& state) {
  run_matmul(state, anomem::kernels::omp::matmul_nn);
}

// softmax over retrieval logits: [rows x prototypes]
template <typename Fn>
void run_softmax(benchmark::State& state, Fn fn) {
  const int rows = int(state.range(0));
  const int cols = 512;
  const std::vector<double> x = random_buffer(std::size_t(rows) * cols, 21);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    fn(x.data(), y.data(), rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(rows) * cols);
}

void BM_softmax_serial(benchmark::State& state) {
  run_softmax(state, anomem::kernels::serial::softmax_rows);
}
void BM_softmax_omp(benchmark::State& state) {
  run_softmax(state, anomem::kernels::omp::softmax_rows);
}

// 3x3 stride-2 convolution over a training-shaped batch
template <typename Fn>
void run_conv(benchmark::State& state, Fn fn) {
  Conv2dShape s;
  s.batch = int(state.range(0));
  s.in_h = 32;
  s.in_w = 32;
  s.in_c = 3;
  s.k_h = 3;
  s.k_w = 3;
  s.out_c = 32;
  s.stride = 2;
  const std::vector<double> in =
      random_buffer(std::size_t(s.batch) * s.in_h * s.in_w * s.in_c, 31);
  const std::vector<double> kern =
      random_buffer(std::size_t(s.k_h) * s.k_w * s.in_c * s.out_c, 32);
  std::vector<double> out(std::size_t(s.batch) * s.out_h() * s.out_w() * s.out_c);
  for (auto _ : state) {
    fn(in.data(), kern.data(), out.data(), s);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(s.batch) * s.out_h() * s.out_w() *
                          s.out_c * s.k_h * s.k_w * s.in_c * 2);
}

void BM_conv_serial(benchmark::State& state) {
  run_conv(state, anomem::kernels::serial::conv2d_forward);
}
void BM_conv_omp(benchmark::State& state) {
  run_conv(state, anomem::kernels::omp::conv2d_forward);
}

}  // namespace

BENCHMARK(BM_matmul_serial)->Arg(64)->Arg(256);
BENCHMARK(BM_matmul_omp)->Arg(64)->Arg(256);
BENCHMARK(BM_softmax_serial)->Arg(128)->Arg(1024);
BENCHMARK(BM_softmax_omp)->Arg(128)->Arg(1024);
BENCHMARK(BM_conv_serial)->Arg(8)->Arg(64);
BENCHMARK(BM_conv_omp)->Arg(8)->Arg(64);

BENCHMARK_MAIN();
