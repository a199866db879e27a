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
#include "bcres/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bcres {

namespace {

// Slaney mel scale: linear below 1 kHz, logarithmic above.
constexpr double kMelFsp = 200.0 / 3.0;
constexpr double kMelMinLogHz = 1000.0;
constexpr double kMelMinLogMel = kMelMinLogHz / kMelFsp;  // 15
const double kMelLogStep = std::log(6.4) / 27.0;

double hz_to_mel(double hz) {
  if (hz < kMelMinLogHz) return hz / kMelFsp;
  return kMelMinLogMel + std::log(hz / kMelMinLogHz) / kMelLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMelMinLogMel) return mel * kMelFsp;
  return kMelMinLogHz * std::exp(kMelLogStep * (mel - kMelMinLogMel));
}

// Anti-alias FIR for the 48 kHz -> 16 kHz path: Blackman-windowed sinc.
std::vector<double> lowpass_taps(double cutoff_norm, std::int64_t n_taps) {
  std::vector<double> h(static_cast<std::size_t>(n_taps));
  const double mid = static_cast<double>(n_taps - 1) / 2.0;
  double sum = 0.0;
  for (std::int64_t i = 0; i < n_taps; ++i) {
    const double x = static_cast<double>(i) - mid;
    const double sinc = x == 0.0 ? 2.0 * cutoff_norm
                                 : std::sin(2.0 * M_PI * cutoff_norm * x) / (M_PI * x);
    const double win = 0.42 - 0.5 * std::cos(2.0 * M_PI * i / (n_taps - 1)) +
                       0.08 * std::cos(4.0 * M_PI * i / (n_taps - 1));
    h[static_cast<std::size_t>(i)] = sinc * win;
    sum += h[static_cast<std::size_t>(i)];
  }
  for (auto& v : h) v /= sum;  // unity DC gain
  return h;
}

}  // namespace

void MelConfig::validate() const {
  if (target_rate <= 0) throw ConfigError("MelConfig: target_rate must be positive");
  if (n_mels <= 0) throw ConfigError("MelConfig: n_mels must be positive");
  if (fft_size < win_samples()) {
    throw ConfigError("MelConfig: fft_size " + std::to_string(fft_size) + " < window " +
                      std::to_string(win_samples()));
  }
  if ((fft_size & (fft_size - 1)) != 0) throw ConfigError("MelConfig: fft_size must be a power of two");
  if (log_floor <= 0.0) throw ConfigError("MelConfig: log_floor must be positive");
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

Waveform wav_read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open wav file: " + path);

  char magic[4];
  read_bytes(is, magic, 4, "RIFF magic");
  if (std::memcmp(magic, "RIFF", 4) != 0) throw IoError("not a RIFF file: " + path);
  read_u32(is, "RIFF size");
  read_bytes(is, magic, 4, "WAVE magic");
  if (std::memcmp(magic, "WAVE", 4) != 0) throw IoError("not a WAVE file: " + path);

  std::int64_t sample_rate = 0;
  int bits = 0, channels = 0, format = 0;
  std::vector<std::int16_t> pcm;
  bool got_fmt = false, got_data = false;
  while (is.peek() != EOF && !(got_fmt && got_data)) {
    char id[4];
    is.read(id, 4);
    if (is.gcount() != 4) break;
    const std::uint32_t chunk_size = read_u32(is, "chunk size");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_u16(is, "fmt tag");
      channels = read_u16(is, "channels");
      sample_rate = read_u32(is, "sample rate");
      read_u32(is, "byte rate");
      read_u16(is, "block align");
      bits = read_u16(is, "bits per sample");
      if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
      got_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      pcm.resize(chunk_size / 2);
      read_bytes(is, pcm.data(), pcm.size() * 2, "pcm data");
      got_data = true;
    } else {
      is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  if (!got_fmt || !got_data) throw IoError("missing fmt/data chunk: " + path);
  if (format != 1 || bits != 16) throw IoError("expected 16-bit PCM: " + path);
  if (channels != 1) throw IoError("expected mono audio: " + path);

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    w.samples[i] = static_cast<float>(pcm[i]) / 32768.0f;
  }
  return w;
}

void wav_write(const std::string& path, const Waveform& w) {
  std::ostringstream os(std::ios::binary);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  write_bytes(os, "RIFF", 4);
  write_u32(os, 36 + data_bytes);
  write_bytes(os, "WAVE", 4);
  write_bytes(os, "fmt ", 4);
  write_u32(os, 16);
  write_u16(os, 1);  // PCM
  write_u16(os, 1);  // mono
  write_u32(os, static_cast<std::uint32_t>(w.sample_rate));
  write_u32(os, static_cast<std::uint32_t>(w.sample_rate * 2));
  write_u16(os, 2);
  write_u16(os, 16);
  write_bytes(os, "data", 4);
  write_u32(os, data_bytes);
  for (const float s : w.samples) {
    const float clamped = std::min(1.0f, std::max(-1.0f, s));
    const auto v = static_cast<std::int16_t>(std::lrint(clamped * 32767.0f));
    write_u16(os, static_cast<std::uint16_t>(v));
  }
  atomic_write_file(path, os.str());
}

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

void fft_radix2(std::vector<double>& re, std::vector<double>& im, bool inverse) {
  const std::size_t n = re.size();
  if (n != im.size() || n == 0 || (n & (n - 1)) != 0) {
    throw ConfigError("fft_radix2: length must be a power of two");
  }
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const double wr = std::cos(angle), wi = std::sin(angle);
    for (std::size_t i = 0; i < n; i += len) {
      double cur_r = 1.0, cur_i = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = i + k, b = i + k + len / 2;
        const double tr = re[b] * cur_r - im[b] * cur_i;
        const double ti = re[b] * cur_i + im[b] * cur_r;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double nr = cur_r * wr - cur_i * wi;
        cur_i = cur_r * wi + cur_i * wr;
        cur_r = nr;
      }
    }
  }
  if (inverse) {
    for (std::size_t i = 0; i < n; ++i) {
      re[i] /= static_cast<double>(n);
      im[i] /= static_cast<double>(n);
    }
  }
}

// ---------------------------------------------------------------------------
// Mel filterbank
// ---------------------------------------------------------------------------

std::vector<double> mel_filterbank(std::int64_t n_mels, std::int64_t fft_size,
                                   std::int64_t sample_rate, double fmin_hz, double fmax_hz) {
  const std::int64_t n_bins = fft_size / 2 + 1;
  std::vector<double> bank(static_cast<std::size_t>(n_mels * n_bins), 0.0);

  const double mel_lo = hz_to_mel(fmin_hz), mel_hi = hz_to_mel(fmax_hz);
  std::vector<double> centers_hz(static_cast<std::size_t>(n_mels + 2));
  for (std::int64_t i = 0; i < n_mels + 2; ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (n_mels + 1);
    centers_hz[static_cast<std::size_t>(i)] = mel_to_hz(mel);
  }

  for (std::int64_t m = 0; m < n_mels; ++m) {
    const double left = centers_hz[static_cast<std::size_t>(m)];
    const double center = centers_hz[static_cast<std::size_t>(m + 1)];
    const double right = centers_hz[static_cast<std::size_t>(m + 2)];
    for (std::int64_t k = 0; k < n_bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / fft_size;
      double w = 0.0;
      if (hz >= left && hz <= center && center > left) {
        w = (hz - left) / (center - left);
      } else if (hz > center && hz <= right && right > center) {
        w = (right - hz) / (right - center);
      }
      bank[static_cast<std::size_t>(m * n_bins + k)] = w;
    }
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Resample
// ---------------------------------------------------------------------------

Waveform resample(const Waveform& w, std::int64_t target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (target_rate > w.sample_rate) {
    throw ConfigError("resample: upsampling not supported (" + std::to_string(w.sample_rate) +
                      " -> " + std::to_string(target_rate) + ")");
  }
  if (target_rate == w.sample_rate) return w;
  if (w.sample_rate % target_rate != 0) {
    throw ConfigError("resample: only integer decimation supported, got " +
                      std::to_string(w.sample_rate) + " -> " + std::to_string(target_rate));
  }
  const std::int64_t factor = w.sample_rate / target_rate;

  // Cutoff a little below the new Nyquist to leave transition band headroom.
  static constexpr std::int64_t kTaps = 127;
  const double cutoff = 0.45 / static_cast<double>(factor);
  const std::vector<double> taps = lowpass_taps(cutoff, kTaps);
  const std::int64_t delay = (kTaps - 1) / 2;

  const std::int64_t in_len = static_cast<std::int64_t>(w.samples.size());
  const std::int64_t out_len = in_len / factor;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (std::int64_t k = 0; k < out_len; ++k) {
    const std::int64_t center = k * factor + delay;
    double acc = 0.0;
    for (std::int64_t j = 0; j < kTaps; ++j) {
      const std::int64_t idx = center - j;
      if (idx >= 0 && idx < in_len) acc += taps[static_cast<std::size_t>(j)] * w.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[static_cast<std::size_t>(k)] = static_cast<float>(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Log-mel
// ---------------------------------------------------------------------------

std::int64_t logmel_frame_count(std::int64_t samples, const MelConfig& cfg) {
  const std::int64_t win = cfg.win_samples(), hop = cfg.hop_samples();
  if (samples < win) return 0;
  return (samples - win) / hop + 1;
}

TensorPtr<float> logmel(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  if (w.sample_rate != cfg.target_rate) {
    throw ConfigError("logmel: waveform rate " + std::to_string(w.sample_rate) +
                      " != configured target rate " + std::to_string(cfg.target_rate));
  }
  const std::int64_t win = cfg.win_samples(), hop = cfg.hop_samples();
  const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
  if (len < win) {
    throw ConfigError("logmel: input too short (" + std::to_string(len) + " samples, window " +
                      std::to_string(win) + ")");
  }
  const std::int64_t frames = logmel_frame_count(len, cfg);
  const std::int64_t n_bins = cfg.fft_size / 2 + 1;

  // Periodic Hann window.
  std::vector<double> window(static_cast<std::size_t>(win));
  for (std::int64_t i = 0; i < win; ++i) {
    window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);
  }
  const std::vector<double> bank =
      mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.target_rate, cfg.fmin_hz, cfg.fmax_hz);

  auto out = make_tensor<float>({1, 1, cfg.n_mels, frames});
  std::vector<double> re(static_cast<std::size_t>(cfg.fft_size));
  std::vector<double> im(static_cast<std::size_t>(cfg.fft_size));
  std::vector<double> power(static_cast<std::size_t>(n_bins));

  for (std::int64_t frame = 0; frame < frames; ++frame) {
    const std::int64_t start = frame * hop;
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (std::int64_t i = 0; i < win; ++i) {
      re[static_cast<std::size_t>(i)] =
          static_cast<double>(w.samples[static_cast<std::size_t>(start + i)]) *
          window[static_cast<std::size_t>(i)];
    }
    fft_radix2(re, im, /*inverse=*/false);
    for (std::int64_t k = 0; k < n_bins; ++k) {
      const auto ki = static_cast<std::size_t>(k);
      power[ki] = re[ki] * re[ki] + im[ki] * im[ki];
    }
    for (std::int64_t m = 0; m < cfg.n_mels; ++m) {
      const double* row = bank.data() + m * n_bins;
      double acc = 0.0;
      for (std::int64_t k = 0; k < n_bins; ++k) acc += row[static_cast<std::size_t>(k)] * power[static_cast<std::size_t>(k)];
      out->at4(0, 0, m, frame) = static_cast<float>(std::log(acc + cfg.log_floor));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Global per-frequency statistics
// ---------------------------------------------------------------------------

FreqStats global_freq_stats(const std::vector<TensorPtr<float>>& maps) {
  if (maps.empty()) throw ConfigError("global_freq_stats: empty dataset");
  const std::int64_t freq = maps.front()->shape[2];
  std::vector<double> sum(static_cast<std::size_t>(freq), 0.0);
  std::vector<double> sum_sq(static_cast<std::size_t>(freq), 0.0);
  std::vector<double> count(static_cast<std::size_t>(freq), 0.0);

  for (const auto& m : maps) {
    if (m->shape.size() != 4 || m->shape[2] != freq) {
      throw ConfigError("global_freq_stats: inconsistent frequency extent");
    }
    const std::int64_t batch = m->shape[0], ch = m->shape[1], time = m->shape[3];
    for (std::int64_t n = 0; n < batch; ++n) {
      for (std::int64_t c = 0; c < ch; ++c) {
        for (std::int64_t f = 0; f < freq; ++f) {
          const auto fi = static_cast<std::size_t>(f);
          for (std::int64_t t = 0; t < time; ++t) {
            const double v = m->at4(n, c, f, t);
            sum[fi] += v;
            sum_sq[fi] += v * v;
            count[fi] += 1.0;
          }
        }
      }
    }
  }

  FreqStats stats;
  stats.mean.resize(static_cast<std::size_t>(freq));
  stats.stddev.resize(static_cast<std::size_t>(freq));
  for (std::int64_t f = 0; f < freq; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    const double mean = sum[fi] / count[fi];
    const double var = std::max(0.0, sum_sq[fi] / count[fi] - mean * mean);
    stats.mean[fi] = static_cast<float>(mean);
    stats.stddev[fi] = static_cast<float>(std::max(std::sqrt(var), 1e-5));
  }
  return stats;
}

void apply_freq_stats(const TensorPtr<float>& map, const FreqStats& stats) {
  const std::int64_t batch = map->shape[0], ch = map->shape[1];
  const std::int64_t freq = map->shape[2], time = map->shape[3];
  if (static_cast<std::size_t>(freq) != stats.mean.size()) {
    throw ConfigError("apply_freq_stats: frequency extent mismatch");
  }
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < ch; ++c) {
      for (std::int64_t f = 0; f < freq; ++f) {
        const auto fi = static_cast<std::size_t>(f);
        for (std::int64_t t = 0; t < time; ++t) {
          map->at4(n, c, f, t) = (map->at4(n, c, f, t) - stats.mean[fi]) / stats.stddev[fi];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Feature cache
// ---------------------------------------------------------------------------

namespace {
constexpr char kCacheMagic[4] = {'B', 'C', 'A', 'F'};
constexpr std::uint16_t kCacheVersion = 1;
}  // namespace

FeatureCache::FeatureCache(const std::string& path) : path_(path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    // Fresh cache: write the header now so appends are well-formed.
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot create feature cache: " + path);
    write_bytes(os, kCacheMagic, 4);
    write_u16(os, kCacheVersion);
    return;
  }
  char magic[4];
  read_bytes(is, magic, 4, "cache magic");
  if (std::memcmp(magic, kCacheMagic, 4) != 0) {
    throw IoError("bad feature cache magic: " + path);
  }
  const std::uint16_t version = read_u16(is, "cache version");
  if (version != kCacheVersion) {
    throw IoError("unsupported feature cache version " + std::to_string(version) + ": " + path);
  }
  while (is.peek() != EOF) {
    const std::uint16_t id_len = read_u16(is, "record id length");
    std::string id(id_len, '\0');
    read_bytes(is, id.data(), id_len, "record id");
    Entry e;
    e.freq = read_u32(is, "record F");
    e.time = read_u32(is, "record T");
    e.values.resize(static_cast<std::size_t>(e.freq * e.time));
    for (auto& v : e.values) v = read_f32(is, "record payload");
    entries_[id] = std::move(e);
  }
}

bool FeatureCache::contains(const std::string& id) const { return entries_.count(id) > 0; }

TensorPtr<float> FeatureCache::get(const std::string& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) throw IoError("feature cache miss: " + id);
  const Entry& e = it->second;
  auto t = make_tensor<float>({1, 1, e.freq, e.time});
  t->data = e.values;
  return t;
}

void FeatureCache::put(const std::string& id, const TensorPtr<float>& feature) {
  if (feature->shape.size() != 4 || feature->shape[0] != 1 || feature->shape[1] != 1) {
    throw ConfigError("FeatureCache::put expects a {1,1,F,T} map");
  }
  if (id.size() > 0xffff) throw ConfigError("FeatureCache::put: id too long");
  Entry e;
  e.freq = feature->shape[2];
  e.time = feature->shape[3];
  e.values = feature->data;

  std::ofstream os(path_, std::ios::binary | std::ios::app);
  if (!os) throw IoError("cannot append to feature cache: " + path_);
  write_u16(os, static_cast<std::uint16_t>(id.size()));
  write_bytes(os, id.data(), id.size());
  write_u32(os, static_cast<std::uint32_t>(e.freq));
  write_u32(os, static_cast<std::uint32_t>(e.time));
  for (const float v : e.values) write_f32(os, v);
  os.flush();
  if (!os) throw IoError("append failed: " + path_);
  entries_[id] = std::move(e);
}

}  // namespace bcres
