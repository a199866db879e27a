/* Copyright 2026 The bcres Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef BCRES_FRONTEND_HPP_
#define BCRES_FRONTEND_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bcres/tensor.hpp"

namespace bcres {

struct Waveform {
  std::vector<float> samples;  // in [-1, 1]
  std::int64_t sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// Log-mel frontend settings. The 130 ms window / 30 ms hop / 256 bins follow
// the training recipe; FFT size, window and mel variant are fixed defaults.
struct MelConfig {
  std::int64_t target_rate = 16000;
  std::int64_t n_mels = 256;
  std::int64_t win_ms = 130;   // 2080 samples at 16 kHz
  std::int64_t hop_ms = 30;    // 480 samples
  std::int64_t fft_size = 4096;  // next power of two >= window
  double log_floor = 1e-10;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;

  std::int64_t win_samples() const { return win_ms * target_rate / 1000; }
  std::int64_t hop_samples() const { return hop_ms * target_rate / 1000; }
  void validate() const;
};

// RIFF/WAVE PCM 16-bit mono reader/writer (writer used for fixtures).
Waveform wav_read(const std::string& path);
void wav_write(const std::string& path, const Waveform& w);

// In-place complex FFT over interleaved (re, im); n must be a power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im, bool inverse);

// Triangular mel filterbank on the Slaney scale, peak height 1. Row-major
// {n_mels, fft_size/2 + 1}.
std::vector<double> mel_filterbank(std::int64_t n_mels, std::int64_t fft_size,
                                   std::int64_t sample_rate, double fmin_hz, double fmax_hz);

// Integer-factor decimation (48 kHz -> 16 kHz) behind a windowed-sinc
// low-pass. Identity when rates already match; other ratios are rejected.
Waveform resample(const Waveform& w, std::int64_t target_rate);

// Waveform -> {1, 1, n_mels, frames} log-mel feature map,
// frames = floor((len - win)/hop) + 1, values ln(mel_power + log_floor).
TensorPtr<float> logmel(const Waveform& w, const MelConfig& cfg);

// Frame count helper shared with the property tests.
std::int64_t logmel_frame_count(std::int64_t samples, const MelConfig& cfg);

// Per-frequency mean/std pooled over every map in the dataset (population
// variance over examples x channels x time); std floored at 1e-5.
struct FreqStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};
FreqStats global_freq_stats(const std::vector<TensorPtr<float>>& maps);

// Applies (x - mean)/std per frequency bin in place.
void apply_freq_stats(const TensorPtr<float>& map, const FreqStats& stats);

// ---------------------------------------------------------------------------
// Feature cache ("BCAF"): magic, u16 version, then records of
// {u16 id length, utf-8 id, u32 F, u32 T, little-endian f32 payload}.
// ---------------------------------------------------------------------------

class FeatureCache {
 public:
  // Loads existing records if the file exists; appends on put().
  explicit FeatureCache(const std::string& path);

  bool contains(const std::string& id) const;
  // Returns a {1,1,F,T} map; throws IoError if missing.
  TensorPtr<float> get(const std::string& id) const;
  // Appends and makes the record immediately visible to get().
  void put(const std::string& id, const TensorPtr<float>& feature);

  std::size_t size() const { return entries_.size(); }
  const std::string& path() const { return path_; }

 private:
  struct Entry {
    std::int64_t freq = 0;
    std::int64_t time = 0;
    std::vector<float> values;
  };
  std::string path_;
  std::map<std::string, Entry> entries_;
};

}  // namespace bcres

#endif  // BCRES_FRONTEND_HPP_
