#include <cmath>
#include <cstdio>

#include "bcres/frontend.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bcres;
using bcres::testing::scratch_path;

namespace {

Waveform sine_wave(double freq_hz, std::int64_t rate, std::int64_t samples, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(samples));
  for (std::int64_t i = 0; i < samples; ++i) {
    w.samples[static_cast<std::size_t>(i)] =
        static_cast<float>(amp * std::sin(2.0 * M_PI * freq_hz * i / static_cast<double>(rate)));
  }
  return w;
}

// Loop-counting frame oracle: slide a window until it falls off the end.
std::int64_t frame_count_oracle(std::int64_t len, std::int64_t win, std::int64_t hop) {
  std::int64_t frames = 0;
  for (std::int64_t start = 0; start + win <= len; start += hop) ++frames;
  return frames;
}

}  // namespace

TEST_SUITE("frontend") {

TEST_CASE("resample 48k to 16k divides the length by three") {
  Waveform w = sine_wave(440.0, 48000, 480000);
  Waveform out = resample(w, 16000);
  CHECK(out.sample_rate == 16000);
  CHECK(out.samples.size() == 160000);
}

TEST_CASE("resample to the same rate is the identity") {
  Waveform w = sine_wave(440.0, 16000, 1600);
  Waveform out = resample(w, 16000);
  CHECK(out.samples == w.samples);
}

TEST_CASE("resample rejects non-integer ratios and upsampling") {
  Waveform w = sine_wave(440.0, 44100, 4410);
  CHECK_THROWS_AS((void)resample(w, 16000), ConfigError);
  CHECK_THROWS_AS((void)resample(w, 48000), ConfigError);
}

TEST_CASE("resampled 1 kHz sine matches the analytic sinusoid") {
  const double freq = 1000.0;
  Waveform w = sine_wave(freq, 48000, 48000);
  Waveform out = resample(w, 16000);
  // Skip the filter settling region at both ends.
  const std::int64_t guard = 100;
  double worst = 0.0;
  for (std::int64_t i = guard; i < static_cast<std::int64_t>(out.samples.size()) - guard; ++i) {
    const double expect = 0.5 * std::sin(2.0 * M_PI * freq * i / 16000.0);
    worst = std::max(worst, std::abs(out.samples[static_cast<std::size_t>(i)] - expect));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("logmel frame counts") {
  MelConfig cfg;
  CHECK(cfg.win_samples() == 2080);
  CHECK(cfg.hop_samples() == 480);
  CHECK(logmel_frame_count(160000, cfg) == 330);
  CHECK(logmel_frame_count(2080, cfg) == 1);

  Waveform w = sine_wave(1000.0, 16000, 160000);
  auto feat = logmel(w, cfg);
  CHECK(feat->shape == std::vector<std::int64_t>{1, 1, 256, 330});

  Waveform shortest = sine_wave(1000.0, 16000, 2080);
  CHECK(logmel(shortest, cfg)->shape == std::vector<std::int64_t>{1, 1, 256, 1});

  Waveform too_short = sine_wave(1000.0, 16000, 2079);
  CHECK_THROWS_AS((void)logmel(too_short, cfg), ConfigError);
}

TEST_CASE("frame count formula matches the loop-counting oracle") {
  MelConfig cfg;
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const std::int64_t len = rng.uniform_int(cfg.win_samples(), cfg.win_samples() + 200000);
    CHECK(logmel_frame_count(len, cfg) ==
          frame_count_oracle(len, cfg.win_samples(), cfg.hop_samples()));
  }
}

TEST_CASE("silence maps every bin to ln(log_floor)") {
  MelConfig cfg;
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(4000, 0.0f);
  auto feat = logmel(w, cfg);
  const float expect = std::log(1e-10f);
  for (const float v : feat->data) CHECK(v == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("global waveform gain shifts high-energy bins by 2 ln g") {
  MelConfig cfg;
  Waveform w = sine_wave(1000.0, 16000, 8000, 0.25);
  Waveform loud = w;
  const double g = 2.0;
  for (auto& s : loud.samples) s = static_cast<float>(s * g);
  auto quiet_feat = logmel(w, cfg);
  auto loud_feat = logmel(loud, cfg);
  const double shift = 2.0 * std::log(g);
  std::int64_t checked = 0;
  for (std::size_t i = 0; i < quiet_feat->data.size(); ++i) {
    if (quiet_feat->data[i] < -12.0f) continue;  // only bins well above the floor
    CHECK(loud_feat->data[i] - quiet_feat->data[i] == doctest::Approx(shift).epsilon(1e-3));
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("mel filterbank rows non-negative, column sums at most one") {
  MelConfig cfg;
  const auto bank = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.target_rate, cfg.fmin_hz,
                                   cfg.fmax_hz);
  const std::int64_t bins = cfg.fft_size / 2 + 1;
  for (const double v : bank) CHECK(v >= 0.0);
  for (std::int64_t k = 0; k < bins; ++k) {
    double col = 0.0;
    for (std::int64_t m = 0; m < cfg.n_mels; ++m) {
      col += bank[static_cast<std::size_t>(m * bins + k)];
    }
    CHECK(col <= 1.0 + 1e-9);
  }
  // Every filter has support on the FFT grid.
  for (std::int64_t m = 0; m < cfg.n_mels; ++m) {
    double row = 0.0;
    for (std::int64_t k = 0; k < bins; ++k) row += bank[static_cast<std::size_t>(m * bins + k)];
    CHECK(row > 0.0);
  }
}

TEST_CASE("fft agrees with the direct DFT on a small input") {
  Rng rng(12);
  const std::size_t n = 16;
  std::vector<double> re(n), im(n, 0.0);
  for (auto& v : re) v = rng.uniform(-1.0, 1.0);
  const auto re0 = re;
  fft_radix2(re, im, false);
  for (std::size_t k = 0; k < n; ++k) {
    double er = 0.0, ei = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * static_cast<double>(k * t) / n;
      er += re0[t] * std::cos(ang);
      ei += re0[t] * std::sin(ang);
    }
    CHECK(re[k] == doctest::Approx(er).epsilon(1e-9));
    CHECK(im[k] == doctest::Approx(ei).epsilon(1e-9));
  }
}

TEST_CASE("global_freq_stats on degenerate datasets") {
  auto constant = full_tensor<float>({1, 1, 4, 6}, 3.25f);
  const auto stats1 = global_freq_stats({constant});
  for (const float m : stats1.mean) CHECK(m == doctest::Approx(3.25f));
  for (const float s : stats1.stddev) CHECK(s == doctest::Approx(1e-5f));

  auto zero = full_tensor<float>({1, 1, 4, 6}, 0.0f);
  auto two = full_tensor<float>({1, 1, 4, 6}, 2.0f);
  const auto stats2 = global_freq_stats({zero, two});
  for (const float m : stats2.mean) CHECK(m == doctest::Approx(1.0f));
  for (const float s : stats2.stddev) CHECK(s == doctest::Approx(1.0f));

  CHECK_THROWS_AS((void)global_freq_stats({}), ConfigError);
}

TEST_CASE("applying global stats standardizes the pooled dataset") {
  Rng rng(13);
  std::vector<TensorPtr<float>> maps;
  for (int i = 0; i < 5; ++i) {
    maps.push_back(bcres::testing::random_tensor<float>({1, 1, 8, 16}, rng, -3.0, 5.0));
  }
  const auto stats = global_freq_stats(maps);
  for (auto& m : maps) apply_freq_stats(m, stats);
  const auto after = global_freq_stats(maps);
  for (const float m : after.mean) CHECK(std::abs(m) < 1e-4f);
  for (const float s : after.stddev) CHECK(s == doctest::Approx(1.0f).epsilon(1e-3));
}

TEST_CASE("wav round trip") {
  Waveform w = sine_wave(500.0, 16000, 3200, 0.4);
  const std::string path = scratch_path("roundtrip.wav");
  wav_write(path, w);
  const Waveform back = wav_read(path);
  CHECK(back.sample_rate == 16000);
  CHECK(back.samples.size() == w.samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(w.samples[i]) - back.samples[i]));
  }
  CHECK(worst < 1.0 / 32000.0);  // 16-bit quantization
  std::remove(path.c_str());
  CHECK_THROWS_AS((void)wav_read("no_such_file.wav"), IoError);
}

TEST_CASE("feature cache appends and survives reopen") {
  const std::string path = scratch_path("cache.bcaf");
  Rng rng(14);
  auto feat = bcres::testing::random_tensor<float>({1, 1, 16, 9}, rng);
  {
    FeatureCache cache(path);
    CHECK_FALSE(cache.contains("utt1"));
    cache.put("utt1", feat);
    CHECK(cache.contains("utt1"));
    CHECK(cache.get("utt1")->data == feat->data);
  }
  {
    FeatureCache cache(path);
    CHECK(cache.size() == 1);
    auto back = cache.get("utt1");
    CHECK(back->shape == feat->shape);
    CHECK(back->data == feat->data);
    CHECK_THROWS_AS((void)cache.get("missing"), IoError);
  }
  std::remove(path.c_str());
}

}  // TEST_SUITE
