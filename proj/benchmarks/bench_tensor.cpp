#include <benchmark/benchmark.h>

#include "bcres/model.hpp"
#include "bcres/normalization.hpp"
#include "bcres/tensor.hpp"

using namespace bcres;

namespace {

TensorPtr<float> random_map(std::vector<std::int64_t> shape, std::uint64_t seed) {
  Rng rng(seed);
  auto t = make_tensor<float>(std::move(shape));
  for (auto& v : t->data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_StemConvForward(benchmark::State& state) {
  auto x = random_map({1, 1, 256, 330}, 1);
  auto w = random_map({20, 1, 5, 5}, 2);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d<float>(x, w, nullptr, 2, 2, 2, 2, 1));
  }
}
BENCHMARK(BM_StemConvForward)->Unit(benchmark::kMillisecond);

void BM_PointwiseConvForward(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  auto x = random_map({1, c, 64, 82}, 3);
  auto w = random_map({c, c, 1, 1}, 4);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d<float>(x, w, nullptr, 1, 1, 0, 0, 1));
  }
}
BENCHMARK(BM_PointwiseConvForward)->Arg(20)->Arg(80)->Unit(benchmark::kMillisecond);

void BM_DepthwiseConvForward(benchmark::State& state) {
  auto x = random_map({1, 80, 128, 165}, 5);
  auto w = random_map({80, 1, 3, 1}, 6);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d<float>(x, w, nullptr, 1, 1, 1, 0, 80));
  }
}
BENCHMARK(BM_DepthwiseConvForward)->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  auto x = random_map({4, 20, 64, 82}, 7);
  auto w = random_map({20, 20, 3, 3}, 8);
  w->requires_grad = true;
  x->requires_grad = true;
  for (auto _ : state) {
    auto loss = sum_all(conv2d<float>(x, w, nullptr, 1, 1, 1, 1, 1));
    backward(loss);
    x->zero_grad();
    w->zero_grad();
  }
}
BENCHMARK(BM_ConvBackward)->Unit(benchmark::kMillisecond);

void BM_FreqIn(benchmark::State& state) {
  auto x = random_map({8, 20, 128, 165}, 9);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(freq_in(x));
  }
}
BENCHMARK(BM_FreqIn)->Unit(benchmark::kMillisecond);

void BM_Asc1EvalForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.base_channels = 10;
  Rng rng(10);
  auto model = build_model<float>(cfg, rng);
  auto x = random_map({1, 1, 256, 330}, 11);
  NoGradGuard ng;
  ForwardCtx<float> ctx;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(x, ctx));
  }
}
BENCHMARK(BM_Asc1EvalForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
