#include <benchmark/benchmark.h>

#include "bcres/compress.hpp"

using namespace bcres;

namespace {

void BM_PruneAsc8(benchmark::State& state) {
  ModelConfig cfg;
  cfg.base_channels = 80;
  for (auto _ : state) {
    state.PauseTiming();
    Rng rng(1);
    auto model = build_model<float>(cfg, rng);
    state.ResumeTiming();
    benchmark::DoNotOptimize(prune(model, 0.89));
  }
}
BENCHMARK(BM_PruneAsc8)->Unit(benchmark::kMillisecond);

void BM_FakeQuant(benchmark::State& state) {
  Rng rng(2);
  auto w = make_tensor<float>({state.range(0)});
  for (auto& v : w->data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fake_quant(w, 8));
  }
}
BENCHMARK(BM_FakeQuant)->Arg(4000)->Arg(300000)->Unit(benchmark::kMicrosecond);

}  // namespace
