#include <cmath>
#include <cstdio>
#include <filesystem>

#include "bcres/data.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bcres;
using bcres::testing::scratch_path;

namespace {

SyntheticConfig small_synth() {
  SyntheticConfig cfg;
  cfg.freq_bins = 32;
  cfg.frames = 24;
  cfg.train_counts = {40, 10, 10, 10, 10, 10, 0, 0, 0};
  cfg.test_per_device = 10;
  return cfg;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generator is deterministic for a fixed seed") {
  const auto cfg = small_synth();
  const auto a = generate_synthetic(77, cfg);
  const auto b = generate_synthetic(77, cfg);
  REQUIRE(a.examples.size() == b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    CHECK(a.examples[i].id == b.examples[i].id);
    CHECK(a.examples[i].feature->data == b.examples[i].feature->data);
  }
  const auto c = generate_synthetic(78, cfg);
  CHECK(a.examples.front().feature->data != c.examples.front().feature->data);
}

TEST_CASE("train histogram matches the requested sizes exactly") {
  const auto cfg = small_synth();
  const auto ds = generate_synthetic(79, cfg);
  const auto& tokens = device_tokens();
  for (std::size_t d = 0; d < tokens.size(); ++d) {
    CHECK(ds.count(tokens[d], Split::kTrain) == cfg.train_counts[d]);
    CHECK(ds.count(tokens[d], Split::kTest) == cfg.test_per_device);
  }
}

TEST_CASE("unseen devices must have zero train examples") {
  auto cfg = small_synth();
  cfg.train_counts[6] = 5;  // S4
  CHECK_THROWS_AS((void)generate_synthetic(80, cfg), ConfigError);
  auto cfg2 = small_synth();
  cfg2.train_counts.pop_back();
  CHECK_THROWS_AS((void)generate_synthetic(80, cfg2), ConfigError);
}

TEST_CASE("train and test ids are disjoint") {
  const auto ds = generate_synthetic(81, small_synth());
  std::map<std::string, int> ids;
  for (const auto& ex : ds.examples) ids[ex.id] += 1;
  for (const auto& [id, count] : ids) {
    CAPTURE(id);
    CHECK(count == 1);
  }
}

TEST_CASE("device rendering inverts back to the reference example") {
  auto cfg = small_synth();
  cfg.content_noise = 0.2f;
  const auto a_prof = make_device_profile("A", cfg.freq_bins, 90, 0.0f);
  const auto s4_prof = make_device_profile("S4", cfg.freq_bins, 90, 0.0f);

  // Same content stream under both devices.
  Rng content_a = Rng(91).substream("content");
  Rng content_s4 = Rng(91).substream("content");
  auto xa = render_synthetic_example(3, a_prof, cfg, 90, content_a);
  auto xs = render_synthetic_example(3, s4_prof, cfg, 90, content_s4);

  // Invert the known profile: (x - offset) / gain recovers device A exactly.
  double worst = 0.0;
  for (std::int64_t f = 0; f < cfg.freq_bins; ++f) {
    for (std::int64_t t = 0; t < cfg.frames; ++t) {
      const double inv =
          (xs->at4(0, 0, f, t) - s4_prof.offset[static_cast<std::size_t>(f)]) /
          s4_prof.gain[static_cast<std::size_t>(f)];
      worst = std::max(worst, std::abs(inv - xa->at4(0, 0, f, t)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("device profiles are deterministic, positive and bounded") {
  for (const auto& token : device_tokens()) {
    const auto p1 = make_device_profile(token, 64, 123, 0.1f);
    const auto p2 = make_device_profile(token, 64, 123, 0.1f);
    CHECK(p1.gain == p2.gain);
    CHECK(p1.offset == p2.offset);
    for (const float g : p1.gain) {
      CHECK(g >= 0.5f - 1e-4f);
      CHECK(g <= 2.0f + 1e-4f);
    }
    if (token == "A") {
      for (const float g : p1.gain) CHECK(g == 1.0f);
      for (const float o : p1.offset) CHECK(o == 0.0f);
    }
  }
  const auto p3 = make_device_profile("S1", 64, 124, 0.1f);
  const auto p4 = make_device_profile("S2", 64, 124, 0.1f);
  CHECK(p3.gain != p4.gain);
}

TEST_CASE("nearest-template oracle separates all classes on device A") {
  auto cfg = small_synth();
  const auto ds = generate_synthetic(92, cfg);
  std::vector<std::vector<float>> templates;
  for (std::int64_t k = 0; k < cfg.n_classes; ++k) {
    templates.push_back(synthetic_class_template(k, cfg.freq_bins, cfg.frames, 92));
  }
  std::int64_t total = 0, correct = 0;
  for (const auto& ex : ds.examples) {
    if (ex.device != "A") continue;
    std::int64_t best = -1;
    double best_dist = 1e300;
    for (std::int64_t k = 0; k < cfg.n_classes; ++k) {
      double dist = 0.0;
      for (std::size_t i = 0; i < ex.feature->data.size(); ++i) {
        const double d = ex.feature->data[i] - templates[static_cast<std::size_t>(k)][i];
        dist += d * d;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    ++total;
    correct += best == ex.scene_class;
  }
  CHECK(total > 0);
  CHECK(correct == total);  // pairwise distinguishable templates
}

TEST_CASE("split report flags S4-S6 as unseen") {
  const auto ds = generate_synthetic(93, small_synth());
  const auto report = split_report(ds);
  CHECK(report.unseen == std::vector<std::string>{"S4", "S5", "S6"});
  CHECK(report.counts.at("A").first == 40);
  CHECK(report.counts.at("S4").first == 0);
  CHECK(report.counts.at("S4").second == 10);
  const std::string table = report.to_table();
  CHECK(table.find("S4") != std::string::npos);
}

TEST_CASE("manifest round trip and validation") {
  const std::string path = scratch_path("manifest.tsv");
  std::vector<ManifestRow> rows = {{"a.wav", 0, "A", Split::kTrain},
                                   {"b.wav", 9, "S6", Split::kTest}};
  write_manifest(path, rows);
  const auto back = read_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].path == "a.wav");
  CHECK(back[1].scene_class == 9);
  CHECK(back[1].device == "S6");
  CHECK(back[1].split == Split::kTest);
  std::remove(path.c_str());

  atomic_write_file(path, "path\tscene\tdevice\tsplit\nx.wav\t0\tZ9\ttrain\n");
  CHECK_THROWS_WITH_AS((void)read_manifest(path), doctest::Contains("unknown device"), IoError);
  atomic_write_file(path, "wrong\theader\n");
  CHECK_THROWS_AS((void)read_manifest(path), IoError);
  std::remove(path.c_str());
  CHECK_THROWS_AS((void)read_manifest("missing.tsv"), IoError);
}

TEST_CASE("empty manifest loads an empty dataset") {
  const std::string path = scratch_path("empty.tsv");
  atomic_write_file(path, "path\tscene\tdevice\tsplit\n");
  MelConfig mel;
  const auto ds = load_real(path, mel, ".");
  CHECK(ds.examples.empty());
  std::remove(path.c_str());
  std::remove("features.bcaf");
}

TEST_CASE("load_real streams wavs through the frontend with caching") {
  namespace fs = std::filesystem;
  const std::string dir = scratch_path("realdata");
  fs::create_directories(dir);

  // Two short 16 kHz fixtures.
  MelConfig mel;
  Rng rng(94);
  for (int i = 0; i < 2; ++i) {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(4000);
    for (auto& s : w.samples) s = static_cast<float>(rng.uniform(-0.5, 0.5));
    wav_write(dir + "/utt" + std::to_string(i) + ".wav", w);
  }
  std::vector<ManifestRow> rows = {{dir + "/utt0.wav", 1, "A", Split::kTrain},
                                   {dir + "/utt1.wav", 2, "B", Split::kTest}};
  write_manifest(dir + "/manifest.tsv", rows);

  const auto ds1 = load_real(dir + "/manifest.tsv", mel, dir);
  REQUIRE(ds1.examples.size() == 2);
  CHECK(ds1.examples[0].feature->shape[2] == 256);
  CHECK(fs::exists(dir + "/features.bcaf"));

  // Second load must come from the cache with identical features.
  const auto ds2 = load_real(dir + "/manifest.tsv", mel, dir);
  CHECK(ds2.examples[0].feature->data == ds1.examples[0].feature->data);
  CHECK(ds2.examples[1].feature->data == ds1.examples[1].feature->data);

  // Missing file names the path.
  rows.push_back({dir + "/gone.wav", 3, "C", Split::kTrain});
  write_manifest(dir + "/manifest.tsv", rows);
  CHECK_THROWS_WITH_AS((void)load_real(dir + "/manifest.tsv", mel, dir),
                       doctest::Contains("gone.wav"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("export_dataset writes a loadable cache plus manifest") {
  namespace fs = std::filesystem;
  const std::string dir = scratch_path("exported");
  fs::create_directories(dir);
  auto cfg = small_synth();
  cfg.train_counts = {4, 2, 2, 2, 2, 2, 0, 0, 0};
  cfg.test_per_device = 2;
  const auto ds = generate_synthetic(95, cfg);
  export_dataset(ds, dir + "/features.bcaf", dir + "/manifest.tsv");

  const auto rows = read_manifest(dir + "/manifest.tsv");
  CHECK(rows.size() == ds.examples.size());
  FeatureCache cache(dir + "/features.bcaf");
  CHECK(cache.size() == ds.examples.size());
  CHECK(cache.get(ds.examples.front().id)->data == ds.examples.front().feature->data);
  fs::remove_all(dir);
}

}  // TEST_SUITE
