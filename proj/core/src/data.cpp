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
#include "bcres/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bcres {

const std::vector<std::string>& device_tokens() {
  static const std::vector<std::string> tokens = {"A", "B", "C", "S1", "S2",
                                                  "S3", "S4", "S5", "S6"};
  return tokens;
}

bool is_unseen_device(const std::string& token) {
  return token == "S4" || token == "S5" || token == "S6";
}

std::vector<const SceneExample*> SceneDataset::split_view(Split split) const {
  std::vector<const SceneExample*> view;
  for (const auto& ex : examples) {
    if (ex.split == split) view.push_back(&ex);
  }
  return view;
}

std::int64_t SceneDataset::count(const std::string& device, Split split) const {
  std::int64_t n = 0;
  for (const auto& ex : examples) {
    if (ex.device == device && ex.split == split) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Device profiles
// ---------------------------------------------------------------------------

namespace {

// Low-order random curve: uniform knot values, cosine-interpolated across F.
std::vector<float> smooth_curve(Rng rng, std::int64_t freq_bins, double lo, double hi,
                                int knots = 6) {
  std::vector<double> knot_vals(static_cast<std::size_t>(knots));
  for (auto& v : knot_vals) v = rng.uniform(lo, hi);
  std::vector<float> out(static_cast<std::size_t>(freq_bins));
  for (std::int64_t f = 0; f < freq_bins; ++f) {
    const double pos = static_cast<double>(f) / std::max<std::int64_t>(1, freq_bins - 1) *
                       (knots - 1);
    const auto seg = std::min<std::size_t>(static_cast<std::size_t>(pos), knots - 2);
    const double t = pos - static_cast<double>(seg);
    const double tc = (1.0 - std::cos(M_PI * t)) / 2.0;
    out[static_cast<std::size_t>(f)] =
        static_cast<float>(knot_vals[seg] * (1.0 - tc) + knot_vals[seg + 1] * tc);
  }
  return out;
}

}  // namespace

DeviceProfile make_device_profile(const std::string& token, std::int64_t freq_bins,
                                  std::uint64_t seed, float noise_level) {
  DeviceProfile p;
  p.token = token;
  p.noise_level = noise_level;
  p.gain.assign(static_cast<std::size_t>(freq_bins), 1.0f);
  p.offset.assign(static_cast<std::size_t>(freq_bins), 0.0f);
  if (token == "A") return p;  // reference device: identity response

  Rng rng = Rng(seed).substream("device-" + token);
  const auto log_gain = smooth_curve(rng.substream(1), freq_bins, std::log(0.5), std::log(2.0));
  p.offset = smooth_curve(rng.substream(2), freq_bins, -1.2, 1.2);
  for (std::int64_t f = 0; f < freq_bins; ++f) {
    p.gain[static_cast<std::size_t>(f)] = std::exp(log_gain[static_cast<std::size_t>(f)]);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

void SyntheticConfig::validate() const {
  if (n_classes < 2) throw ConfigError("SyntheticConfig: n_classes must be >= 2");
  if (freq_bins < 8 || frames < 8) throw ConfigError("SyntheticConfig: extents too small");
  if (train_counts.size() != device_tokens().size()) {
    throw ConfigError("SyntheticConfig: expected " + std::to_string(device_tokens().size()) +
                      " per-device train counts, got " + std::to_string(train_counts.size()));
  }
  for (std::size_t d = 0; d < train_counts.size(); ++d) {
    if (train_counts[d] < 0) throw ConfigError("SyntheticConfig: negative train count");
    if (is_unseen_device(device_tokens()[d]) && train_counts[d] != 0) {
      throw ConfigError("SyntheticConfig: unseen device " + device_tokens()[d] +
                        " must have zero train examples");
    }
  }
  if (test_per_device < 0) throw ConfigError("SyntheticConfig: negative test count");
}

// Classes 2j and 2j+1 for j in {0,1} share a band pattern and differ by a
// constant-in-time per-frequency level curve; all other classes carry
// distinct band patterns. Removing per-frequency means therefore conflates
// the paired classes while the band patterns stay separable.
std::vector<float> synthetic_class_template(std::int64_t scene_class, std::int64_t freq_bins,
                                            std::int64_t frames, std::uint64_t seed) {
  constexpr float kBase = -4.0f;
  const bool level_coded = scene_class < 4;
  const std::int64_t pattern = level_coded ? scene_class / 2 : scene_class - 2;

  Rng rng = Rng(seed).substream("pattern-" + std::to_string(pattern));
  std::vector<float> tpl(static_cast<std::size_t>(freq_bins * frames), kBase);

  const std::int64_t n_bands = 2 + pattern % 2;
  for (std::int64_t b = 0; b < n_bands; ++b) {
    // Structured spread keeps patterns apart; jitter decorrelates them.
    const double center_frac =
        (static_cast<double>((pattern * 7 + b * 13) % 16) + rng.uniform(0.2, 0.8)) / 16.0;
    const double center = center_frac * static_cast<double>(freq_bins - 1);
    const double width = rng.uniform(static_cast<double>(freq_bins) / 16.0,
                                     static_cast<double>(freq_bins) / 9.0);
    const double amp = rng.uniform(3.0, 4.5);
    const double cycles = 1.0 + static_cast<double>((pattern + b) % 4);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (std::int64_t f = 0; f < freq_bins; ++f) {
      const double d = (static_cast<double>(f) - center) / width;
      const double bump = amp * std::exp(-0.5 * d * d);
      if (bump < 1e-4) continue;
      for (std::int64_t t = 0; t < frames; ++t) {
        const double env =
            0.55 + 0.45 * std::sin(2.0 * M_PI * cycles * static_cast<double>(t) /
                                       static_cast<double>(frames) +
                                   phase);
        tpl[static_cast<std::size_t>(f * frames + t)] += static_cast<float>(bump * env);
      }
    }
  }

  if (level_coded && scene_class % 2 == 1) {
    Rng level_rng = Rng(seed).substream("level-" + std::to_string(pattern));
    const auto delta = smooth_curve(level_rng, freq_bins, 0.8, 1.6);
    for (std::int64_t f = 0; f < freq_bins; ++f) {
      for (std::int64_t t = 0; t < frames; ++t) {
        tpl[static_cast<std::size_t>(f * frames + t)] += delta[static_cast<std::size_t>(f)];
      }
    }
  }
  return tpl;
}

TensorPtr<float> render_synthetic_example(std::int64_t scene_class, const DeviceProfile& profile,
                                          const SyntheticConfig& cfg, std::uint64_t seed,
                                          Rng& content_rng) {
  const auto tpl = synthetic_class_template(scene_class, cfg.freq_bins, cfg.frames, seed);
  auto x = make_tensor<float>({1, 1, cfg.freq_bins, cfg.frames});

  const double amp_jitter = 1.0 + 0.1 * content_rng.normal();
  for (std::int64_t f = 0; f < cfg.freq_bins; ++f) {
    for (std::int64_t t = 0; t < cfg.frames; ++t) {
      const auto i = static_cast<std::size_t>(f * cfg.frames + t);
      double v = -4.0 + amp_jitter * (tpl[i] + 4.0);
      if (cfg.content_noise > 0.0f) v += cfg.content_noise * content_rng.normal();
      // Device frequency response in the log-mel domain.
      v = profile.gain[static_cast<std::size_t>(f)] * v +
          profile.offset[static_cast<std::size_t>(f)];
      x->data[i] = static_cast<float>(v);
    }
  }
  if (profile.noise_level > 0.0f) {
    for (auto& v : x->data) v += static_cast<float>(profile.noise_level * content_rng.normal());
  }
  return x;
}

SceneDataset generate_synthetic(std::uint64_t seed, const SyntheticConfig& cfg) {
  cfg.validate();
  SceneDataset ds;
  ds.num_classes = cfg.n_classes;

  const auto& tokens = device_tokens();
  std::vector<DeviceProfile> profiles;
  for (const auto& token : tokens) {
    profiles.push_back(make_device_profile(token, cfg.freq_bins, seed, cfg.device_noise));
  }

  Rng base(seed);
  for (std::size_t d = 0; d < tokens.size(); ++d) {
    for (int split_idx = 0; split_idx < 2; ++split_idx) {
      const Split split = split_idx == 0 ? Split::kTrain : Split::kTest;
      const std::int64_t count =
          split == Split::kTrain ? cfg.train_counts[d] : cfg.test_per_device;
      for (std::int64_t i = 0; i < count; ++i) {
        SceneExample ex;
        ex.device = tokens[d];
        ex.split = split;
        ex.scene_class = i % cfg.n_classes;
        ex.id = "syn-" + tokens[d] + (split == Split::kTrain ? "-train-" : "-test-") +
                std::to_string(i);
        Rng content = base.substream(hash_string(ex.id));
        ex.feature = render_synthetic_example(ex.scene_class, profiles[d], cfg, seed, content);
        ds.examples.push_back(std::move(ex));
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', begin);
    if (tab == std::string::npos) {
      out.push_back(line.substr(begin));
      return out;
    }
    out.push_back(line.substr(begin, tab - begin));
    begin = tab + 1;
  }
}

}  // namespace

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("manifest missing header row: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  const std::vector<std::string> expected = {"path", "scene", "device", "split"};
  if (header != expected) {
    throw IoError("manifest header must be 'path\\tscene\\tdevice\\tsplit': " + path);
  }

  std::vector<ManifestRow> rows;
  std::int64_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 4) {
      throw IoError("manifest line " + std::to_string(line_no) + ": expected 4 columns");
    }
    ManifestRow row;
    row.path = cols[0];
    try {
      row.scene_class = std::stoll(cols[1]);
    } catch (const std::exception&) {
      throw IoError("manifest line " + std::to_string(line_no) + ": bad scene '" + cols[1] + "'");
    }
    const auto& tokens = device_tokens();
    if (std::find(tokens.begin(), tokens.end(), cols[2]) == tokens.end()) {
      throw IoError("manifest line " + std::to_string(line_no) + ": unknown device token '" +
                    cols[2] + "'");
    }
    row.device = cols[2];
    if (cols[3] == "train") {
      row.split = Split::kTrain;
    } else if (cols[3] == "test") {
      row.split = Split::kTest;
    } else {
      throw IoError("manifest line " + std::to_string(line_no) + ": split must be train|test");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ostringstream os;
  os << "path\tscene\tdevice\tsplit\n";
  for (const auto& row : rows) {
    os << row.path << '\t' << row.scene_class << '\t' << row.device << '\t'
       << (row.split == Split::kTrain ? "train" : "test") << '\n';
  }
  atomic_write_file(path, os.str());
}

SceneDataset load_real(const std::string& manifest_path, const MelConfig& mel,
                       const std::string& cache_dir) {
  const auto rows = read_manifest(manifest_path);
  SceneDataset ds;
  FeatureCache cache(cache_dir + "/features.bcaf");
  for (const auto& row : rows) {
    SceneExample ex;
    ex.id = row.path;
    ex.scene_class = row.scene_class;
    ex.device = row.device;
    ex.split = row.split;
    if (cache.contains(row.path)) {
      ex.feature = cache.get(row.path);
    } else {
      Waveform w = wav_read(row.path);
      w = resample(w, mel.target_rate);
      ex.feature = logmel(w, mel);
      cache.put(row.path, ex.feature);
    }
    if (ex.scene_class < 0 || ex.scene_class >= ds.num_classes) {
      throw IoError("manifest row '" + row.path + "': scene class " +
                    std::to_string(ex.scene_class) + " out of range");
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Split report
// ---------------------------------------------------------------------------

SplitReport split_report(const SceneDataset& ds) {
  SplitReport report;
  for (const auto& token : device_tokens()) {
    const std::int64_t train = ds.count(token, Split::kTrain);
    const std::int64_t test = ds.count(token, Split::kTest);
    if (train == 0 && test == 0) continue;
    report.devices.push_back(token);
    report.counts[token] = {train, test};
    if (train == 0) report.unseen.push_back(token);
  }
  return report;
}

std::string SplitReport::to_table() const {
  std::ostringstream os;
  os << "device  train   test  unseen\n";
  for (const auto& device : devices) {
    const auto& [train, test] = counts.at(device);
    os << device;
    for (std::size_t i = device.size(); i < 6; ++i) os << ' ';
    auto pad = [&](std::int64_t v, int width) {
      const std::string s = std::to_string(v);
      for (int i = static_cast<int>(s.size()); i < width; ++i) os << ' ';
      os << s;
    };
    pad(train, 7);
    pad(test, 7);
    os << "  " << (train == 0 ? "yes" : "no") << '\n';
  }
  return os.str();
}

void export_dataset(const SceneDataset& ds, const std::string& cache_path,
                    const std::string& manifest_path) {
  {
    std::remove(cache_path.c_str());
    FeatureCache cache(cache_path);
    for (const auto& ex : ds.examples) cache.put(ex.id, ex.feature);
  }
  std::vector<ManifestRow> rows;
  for (const auto& ex : ds.examples) {
    rows.push_back({ex.id, ex.scene_class, ex.device, ex.split});
  }
  write_manifest(manifest_path, rows);
}

}  // namespace bcres
