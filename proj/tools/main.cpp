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
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bcres/compress.hpp"
#include "bcres/config.hpp"
#include "bcres/data.hpp"
#include "bcres/frontend.hpp"
#include "bcres/model.hpp"
#include "bcres/normalization.hpp"
#include "bcres/train.hpp"

namespace fs = std::filesystem;
using namespace bcres;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::string cache_dir_for(const std::string& manifest_path, const std::string& fallback) {
  if (const char* env = std::getenv("BCRES_CACHE_DIR")) return env;
  const fs::path parent = fs::path(manifest_path).parent_path();
  if (!parent.empty()) return parent.string();
  return fallback.empty() ? std::string(".") : fallback;
}

SceneDataset load_dataset(const ExperimentConfig& cfg, std::uint64_t dataset_seed,
                          const std::string& out_dir) {
  if (cfg.data_source == "manifest") {
    MelConfig mel;
    return load_real(cfg.manifest, mel, cache_dir_for(cfg.manifest, out_dir));
  }
  return generate_synthetic(dataset_seed, cfg.synthetic);
}

std::string eval_table(const EvalResult& eval) {
  std::ostringstream os;
  for (const auto& device : eval.devices) {
    os << device << '\t' << format_fixed(eval.accuracy.at(device), 2) << '\n';
  }
  os << "Overall\t" << format_fixed(eval.overall, 2) << '\n';
  return os.str();
}

int cmd_train(const std::string& config_path, const std::vector<std::uint64_t>& seeds,
              const std::string& out_dir) {
  const ExperimentConfig cfg = parse_config_file(config_path);
  if (seeds.empty()) throw ConfigError("train: at least one --seed is required");
  fs::create_directories(out_dir);
  atomic_write_file(out_dir + "/config.txt", serialize_config(cfg));

  // The dataset is shared across the seeds of one invocation and derives
  // from the first seed, so reruns with the same seed list reproduce it.
  const SceneDataset ds =
      load_dataset(cfg, Rng(seeds.front()).substream("dataset").next_u64(), out_dir);
  std::cout << split_report(ds).to_table();

  // Per-device best-epoch accuracies across seeds, for the summary.
  std::vector<EvalResult> best_evals;
  for (const std::uint64_t seed : seeds) {
    const std::string run_dir = out_dir + "/seed" + std::to_string(seed);
    fs::create_directories(run_dir);
    Rng rng(seed);
    auto model = build_model<float>(cfg.model, rng);
    auto result = train(model, ds, cfg.train, cfg.aug, rng);
    atomic_write_file(run_dir + "/metrics.log", format_metrics_log(result.records));
    save_checkpoint(model, run_dir + "/checkpoint_final.bcra");
    if (!result.best_state.empty()) {
      auto snapshot = model.snapshot_state();
      model.restore_state(result.best_state);
      save_checkpoint(model, run_dir + "/checkpoint_best.bcra");
      best_evals.push_back(result.records[static_cast<std::size_t>(result.best_epoch - 1)].eval);
      model.restore_state(snapshot);
    }
    std::cout << "seed " << seed << ": best overall "
              << format_fixed(result.best_overall, 2) << " (epoch " << result.best_epoch
              << ")\n";
  }

  // mean +- std per device over seeds (population std; 0 for a single seed).
  std::ostringstream summary;
  if (!best_evals.empty()) {
    for (const auto& device : best_evals.front().devices) {
      double mean = 0.0, var = 0.0;
      for (const auto& e : best_evals) mean += e.accuracy.at(device);
      mean /= static_cast<double>(best_evals.size());
      for (const auto& e : best_evals) {
        var += (e.accuracy.at(device) - mean) * (e.accuracy.at(device) - mean);
      }
      var /= static_cast<double>(best_evals.size());
      summary << device << '\t' << format_fixed(mean, 2) << " ± "
              << format_fixed(std::sqrt(var), 2) << '\n';
    }
    double mean = 0.0, var = 0.0;
    for (const auto& e : best_evals) mean += e.overall;
    mean /= static_cast<double>(best_evals.size());
    for (const auto& e : best_evals) var += (e.overall - mean) * (e.overall - mean);
    var /= static_cast<double>(best_evals.size());
    summary << "Overall\t" << format_fixed(mean, 2) << " ± "
            << format_fixed(std::sqrt(var), 2) << '\n';
  }
  atomic_write_file(out_dir + "/summary.txt", summary.str());
  std::cout << summary.str();
  return kExitOk;
}

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint_path,
                 std::uint64_t seed, const std::string& out_dir) {
  const ExperimentConfig cfg = parse_config_file(config_path);
  auto loaded = load_checkpoint(checkpoint_path);
  const SceneDataset ds = load_dataset(cfg, Rng(seed).substream("dataset").next_u64(), out_dir);

  CompressionState state;
  const CompressionState* state_ptr = nullptr;
  if (loaded.compressed) {
    state.active = true;
    state.masks = loaded.masks;
    state.scales = loaded.scales;
    state_ptr = &state;
  }
  const EvalResult eval = evaluate(loaded.model, ds, state_ptr);
  const std::string table = eval_table(eval);
  std::cout << table;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    atomic_write_file(out_dir + "/evaluate.txt", table);
  }
  return kExitOk;
}

int cmd_compress(const std::string& config_path, const std::string& checkpoint_path,
                 const std::string& teacher_path, std::uint64_t seed,
                 const std::string& out_dir) {
  const ExperimentConfig cfg = parse_config_file(config_path);
  auto loaded = load_checkpoint(checkpoint_path);
  if (loaded.compressed) throw ConfigError("compress: checkpoint is already compressed");
  if (loaded.model.cfg.base_channels != cfg.model.base_channels ||
      loaded.model.cfg.num_classes != cfg.model.num_classes ||
      loaded.model.cfg.ssn_sub_bands != cfg.model.ssn_sub_bands ||
      loaded.model.cfg.norm_mode != cfg.model.norm_mode) {
    throw ConfigError("compress: checkpoint model config does not match the config file");
  }
  if (cfg.compress.kd && teacher_path.empty()) {
    throw ConfigError("compress: KD requested (compress.kd=1) but no --teacher given");
  }

  fs::create_directories(out_dir);
  const SceneDataset ds = load_dataset(cfg, Rng(seed).substream("dataset").next_u64(), out_dir);

  ModelGraph<float> teacher = cfg.compress.kd ? load_checkpoint(teacher_path).model
                                              : ModelGraph<float>{};
  Rng rng(seed);
  auto result = compress_pipeline(loaded.model, cfg.compress.kd ? &teacher : nullptr, ds,
                                  cfg.train, cfg.aug, cfg.compress,
                                  out_dir + "/checkpoint_compressed.bcra", rng);

  std::ostringstream report;
  report << "Method\tBitwidth\tKD\tPruning\tAccuracy\n";
  report << "Compressed model\t" << result.state.conv_bits << ", " << result.state.other_bits
         << '\t' << (cfg.compress.kd ? "yes" : "no") << '\t'
         << format_fixed(cfg.compress.prune_ratio, 2) << '\t'
         << format_fixed(result.eval.overall, 1) << '\n';
  report << '\n' << result.size.to_table();
  std::cout << report.str();
  atomic_write_file(out_dir + "/compress_report.txt", report.str());
  atomic_write_file(out_dir + "/finetune_metrics.log", format_metrics_log(result.finetune_log));
  return kExitOk;
}

int cmd_inspect(const std::string& checkpoint_path, const std::string& out_path) {
  auto loaded = load_checkpoint(checkpoint_path);
  const auto& model = loaded.model;

  const auto counts = count_params(model);
  const auto rf = receptive_field(model.cfg);
  const auto rf_cons = receptive_field(model.cfg, /*include_pool_extent=*/true);
  const auto extents = stage_extents(model.cfg, 256, 330);

  std::ostringstream human;
  human << "model: base_channels=" << model.cfg.base_channels
        << " num_classes=" << model.cfg.num_classes
        << " norm_mode=" << norm_mode_name(model.cfg.norm_mode)
        << (loaded.compressed ? " (compressed checkpoint)" : "") << "\n\n";
  human << counts.to_table() << '\n';
  human << "receptive field: " << rf.freq << "x" << rf.time << " (conv path; "
        << rf_cons.freq << "x" << rf_cons.time << " counting pool windows)\n\n";
  human << "stage extents for a 256x330 input (freq x time):\n";
  for (const auto& [name, e] : extents) {
    human << "  " << name;
    for (std::size_t i = name.size(); i < 28; ++i) human << ' ';
    human << e.first << " x " << e.second << '\n';
  }
  std::cout << human.str();

  if (!out_path.empty()) {
    std::ostringstream kv;
    kv << "base_channels=" << model.cfg.base_channels << '\n';
    kv << "num_classes=" << model.cfg.num_classes << '\n';
    kv << "norm_mode=" << norm_mode_name(model.cfg.norm_mode) << '\n';
    kv << "compressed=" << (loaded.compressed ? 1 : 0) << '\n';
    kv << "params.total=" << counts.total << '\n';
    kv << "params.conv=" << counts.conv_total << '\n';
    kv << "params.other=" << counts.other_total << '\n';
    kv << "rf.freq=" << rf.freq << '\n';
    kv << "rf.time=" << rf.time << '\n';
    kv << "rf_with_pool_windows.freq=" << rf_cons.freq << '\n';
    kv << "rf_with_pool_windows.time=" << rf_cons.time << '\n';
    for (const auto& [name, e] : extents) {
      kv << "extent." << name << '=' << e.first << 'x' << e.second << '\n';
    }
    atomic_write_file(out_path, kv.str());
  }
  return kExitOk;
}

int cmd_generate_data(const std::string& config_path, std::uint64_t seed,
                      const std::string& out_dir) {
  const ExperimentConfig cfg = parse_config_file(config_path);
  if (cfg.data_source != "synthetic") {
    throw ConfigError("generate-data requires data.source=synthetic");
  }
  fs::create_directories(out_dir);
  const SceneDataset ds = generate_synthetic(Rng(seed).substream("dataset").next_u64(),
                                             cfg.synthetic);
  export_dataset(ds, out_dir + "/features.bcaf", out_dir + "/manifest.tsv");
  const auto report = split_report(ds);
  std::cout << report.to_table();
  atomic_write_file(out_dir + "/split_report.txt", report.to_table());
  return kExitOk;
}

int cmd_export_stats(const std::string& config_path, const std::string& checkpoint_path,
                     std::uint64_t seed, const std::string& stage, const std::string& out_dir) {
  const ExperimentConfig cfg = parse_config_file(config_path);
  const SceneDataset ds = load_dataset(cfg, Rng(seed).substream("dataset").next_u64(), out_dir);
  const auto test = ds.split_view(Split::kTest);
  if (test.empty()) throw ConfigError("export-stats: dataset has no test examples");

  const std::vector<std::string> stages = {"input",  "input_norm", "stem",
                                           "stage1", "stage2",     "stage3", "stage4"};
  if (std::find(stages.begin(), stages.end(), stage) == stages.end()) {
    throw ConfigError("export-stats: unknown stage '" + stage + "'");
  }
  fs::create_directories(out_dir);

  ModelGraph<float> model;
  if (stage == "input") {
    // No forward needed.
  } else {
    model = load_checkpoint(checkpoint_path).model;
  }

  std::vector<std::string> ids;
  std::vector<float> freq_rows, chan_rows;
  std::int64_t freq_len = -1, chan_len = -1;
  NoGradGuard ng;
  for (const SceneExample* ex : test) {
    TensorPtr<float> map = ex->feature;
    if (stage != "input") {
      std::map<std::string, TensorPtr<float>> taps;
      ForwardCtx<float> ctx;
      ctx.capture = &taps;
      (void)model.forward(ex->feature, ctx);
      map = taps.at(stage);
    }
    const DomainStats stats = export_domain_stats(map);
    if (freq_len < 0) {
      freq_len = 2 * stats.freq;
      chan_len = 2 * stats.channels;
    }
    ids.push_back(ex->id);
    freq_rows.insert(freq_rows.end(), stats.freq_stats.begin(), stats.freq_stats.end());
    chan_rows.insert(chan_rows.end(), stats.chan_stats.begin(), stats.chan_stats.end());
  }
  write_domain_stats_tsv(out_dir + "/freq_stats.tsv", ids, freq_rows, freq_len);
  write_domain_stats_tsv(out_dir + "/chan_stats.tsv", ids, chan_rows, chan_len);
  std::cout << "wrote " << ids.size() << " rows to " << out_dir << "/freq_stats.tsv and "
            << out_dir << "/chan_stats.tsv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Broadcasted-residual acoustic scene classifier: training, compression, inspection"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, teacher_path, stage = "stage2";
  std::string inspect_out;
  std::vector<std::uint64_t> seeds;
  std::uint64_t seed = 0;

  auto* train_cmd = app.add_subcommand("train", "Train one model per seed");
  train_cmd->add_option("--config", config_path, "Experiment config file")->required();
  train_cmd->add_option("--seeds", seeds, "Training seeds")->required()->delimiter(',');
  train_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  eval_cmd->add_option("--config", config_path, "Experiment config file")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--seed", seed, "Dataset seed");
  eval_cmd->add_option("--out", out_dir, "Optional output directory");

  auto* compress_cmd = app.add_subcommand("compress", "Prune + quantize + fine-tune");
  compress_cmd->add_option("--config", config_path, "Experiment config file")->required();
  compress_cmd->add_option("--checkpoint", checkpoint_path, "Vanilla checkpoint")->required();
  compress_cmd->add_option("--teacher", teacher_path, "Teacher checkpoint for KD");
  compress_cmd->add_option("--seed", seed, "Fine-tune seed");
  compress_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* inspect_cmd = app.add_subcommand("inspect", "Report parameter counts and structure");
  inspect_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint to inspect")->required();
  inspect_cmd->add_option("--out", inspect_out, "Machine-readable twin output path");

  auto* gen_cmd = app.add_subcommand("generate-data", "Write the synthetic benchmark to disk");
  gen_cmd->add_option("--config", config_path, "Experiment config file")->required();
  gen_cmd->add_option("--seed", seed, "Dataset seed");
  gen_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* stats_cmd = app.add_subcommand("export-stats", "Export per-example domain statistics");
  stats_cmd->add_option("--config", config_path, "Experiment config file")->required();
  stats_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint (for non-input stages)");
  stats_cmd->add_option("--seed", seed, "Dataset seed");
  stats_cmd->add_option("--stage", stage, "input|input_norm|stem|stage1..stage4");
  stats_cmd->add_option("--out", out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, seeds, out_dir);
    if (eval_cmd->parsed()) return cmd_evaluate(config_path, checkpoint_path, seed, out_dir);
    if (compress_cmd->parsed()) {
      return cmd_compress(config_path, checkpoint_path, teacher_path, seed, out_dir);
    }
    if (inspect_cmd->parsed()) return cmd_inspect(checkpoint_path, inspect_out);
    if (gen_cmd->parsed()) return cmd_generate_data(config_path, seed, out_dir);
    if (stats_cmd->parsed()) {
      return cmd_export_stats(config_path, checkpoint_path, seed, stage, out_dir);
    }
    std::cerr << "no subcommand\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}
