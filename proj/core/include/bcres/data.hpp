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
#ifndef BCRES_DATA_HPP_
#define BCRES_DATA_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bcres/frontend.hpp"
#include "bcres/tensor.hpp"

namespace bcres {

enum class Split { kTrain, kTest };

// The nine device tokens, in report order.
const std::vector<std::string>& device_tokens();
bool is_unseen_device(const std::string& token);  // S4-S6

struct SceneExample {
  std::string id;
  TensorPtr<float> feature;  // {1, 1, F, T}
  std::int64_t scene_class = 0;
  std::string device;  // A, B, C, S1..S6
  Split split = Split::kTrain;
};

struct SceneDataset {
  std::vector<SceneExample> examples;
  std::int64_t num_classes = 10;

  std::vector<const SceneExample*> split_view(Split split) const;
  std::int64_t count(const std::string& device, Split split) const;
};

// Per-frequency affine transform in the log-mel domain modeling a recording
// device's frequency response: x' = gain_f * x + offset_f (+ noise).
struct DeviceProfile {
  std::string token;
  std::vector<float> gain;    // positive, bounded
  std::vector<float> offset;
  float noise_level = 0.0f;
};

// Deterministic per-device profile: A is the identity; the others draw
// smooth per-frequency gain curves in [0.5, 2.0] and bounded offsets from
// the device token's seed.
DeviceProfile make_device_profile(const std::string& token, std::int64_t freq_bins,
                                  std::uint64_t seed, float noise_level);

struct SyntheticConfig {
  std::int64_t n_classes = 10;
  std::int64_t freq_bins = 64;
  std::int64_t frames = 64;
  // Train counts per device in token order A,B,C,S1..S6; S4-S6 must be 0.
  std::vector<std::int64_t> train_counts = {600, 50, 50, 50, 50, 50, 0, 0, 0};
  std::int64_t test_per_device = 40;
  float content_noise = 0.3f;
  float device_noise = 0.1f;

  void validate() const;
};

// Class-distinct spectro-temporal templates (band-limited tones with
// temporal envelopes) rendered through per-device profiles. Classes 2j and
// 2j+1 for j in {0,1} share band patterns and differ only by a per-frequency
// level offset, so removing per-frequency means costs accuracy on them.
std::vector<float> synthetic_class_template(std::int64_t scene_class, std::int64_t freq_bins,
                                            std::int64_t frames, std::uint64_t seed);

// Renders one example: template + content jitter, then the device's affine
// map and additive noise.
TensorPtr<float> render_synthetic_example(std::int64_t scene_class, const DeviceProfile& profile,
                                          const SyntheticConfig& cfg, std::uint64_t seed,
                                          Rng& content_rng);

SceneDataset generate_synthetic(std::uint64_t seed, const SyntheticConfig& cfg);

// ---------------------------------------------------------------------------
// Manifest loading (tab-separated, header row: path  scene  device  split).
// Waveforms stream through the log-mel frontend with feature caching; the
// cache path may be overridden by cache_dir.
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string path;
  std::int64_t scene_class = 0;
  std::string device;
  Split split = Split::kTrain;
};

std::vector<ManifestRow> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);

SceneDataset load_real(const std::string& manifest_path, const MelConfig& mel,
                       const std::string& cache_dir);

// ---------------------------------------------------------------------------
// Split reporting
// ---------------------------------------------------------------------------

struct SplitReport {
  // device -> {train count, test count}
  std::vector<std::string> devices;  // report order
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> counts;
  std::vector<std::string> unseen;  // zero train examples

  std::string to_table() const;
};

SplitReport split_report(const SceneDataset& ds);

// Exports every example's feature into a BCAF cache plus a manifest whose
// path column carries the cache ids.
void export_dataset(const SceneDataset& ds, const std::string& cache_path,
                    const std::string& manifest_path);

}  // namespace bcres

#endif  // BCRES_DATA_HPP_
