#include <benchmark/benchmark.h>

#include <cmath>

#include "bcres/frontend.hpp"

using namespace bcres;

namespace {

Waveform tone(std::int64_t rate, std::int64_t samples) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(samples));
  for (std::int64_t i = 0; i < samples; ++i) {
    w.samples[static_cast<std::size_t>(i)] =
        0.4f * std::sin(2.0f * static_cast<float>(M_PI) * 880.0f * i / rate);
  }
  return w;
}

void BM_Resample48kTo16k(benchmark::State& state) {
  const Waveform w = tone(48000, 480000);  // 10 s clip
  for (auto _ : state) {
    benchmark::DoNotOptimize(resample(w, 16000));
  }
}
BENCHMARK(BM_Resample48kTo16k)->Unit(benchmark::kMillisecond);

void BM_LogmelTenSeconds(benchmark::State& state) {
  const Waveform w = tone(16000, 160000);
  MelConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(logmel(w, cfg));
  }
}
BENCHMARK(BM_LogmelTenSeconds)->Unit(benchmark::kMillisecond);

void BM_FftFrame(benchmark::State& state) {
  std::vector<double> re(4096), im(4096);
  Rng rng(1);
  for (auto& v : re) v = rng.uniform(-1.0, 1.0);
  for (auto _ : state) {
    auto r = re;
    auto i = im;
    fft_radix2(r, i, false);
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_FftFrame)->Unit(benchmark::kMicrosecond);

}  // namespace
