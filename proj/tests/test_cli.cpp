#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "bcres/common.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace fs = std::filesystem;
using bcres::testing::scratch_path;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string out_file = scratch_path("cli_out.txt");
  const std::string cmd = std::string(BCRES_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(out_file);
  std::stringstream ss;
  ss << is.rdbuf();
  result.output = ss.str();
  std::remove(out_file.c_str());
  return result;
}

std::string tiny_config_text() {
  return R"(# tiny experiment for the CLI tests
model.base_channels=4
model.num_classes=10
train.epochs=2
train.batch_size=16
train.warmup_epochs=1
train.peak_lr=0.02
aug.roll_frames=2
data.freq_bins=32
data.frames=16
data.train_counts=20,4,4,4,4,4,0,0,0
data.test_per_device=2
compress.prune_ratio=0.6
compress.finetune_epochs=1
compress.finetune_peak_lr=0.004
)";
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path(scratch_path(name)) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("train twice with the same seed reproduces metrics byte for byte") {
  TempDir dir("cli_train");
  bcres::atomic_write_file(dir.path + "/cfg.txt", tiny_config_text());

  const auto r1 = run_cli("train --config " + dir.path + "/cfg.txt --seeds 7 --out " + dir.path +
                          "/run1");
  CHECK(r1.exit_code == 0);
  const auto r2 = run_cli("train --config " + dir.path + "/cfg.txt --seeds 7 --out " + dir.path +
                          "/run2");
  CHECK(r2.exit_code == 0);

  const auto m1 = read_file(dir.path + "/run1/seed7/metrics.log");
  const auto m2 = read_file(dir.path + "/run2/seed7/metrics.log");
  CHECK(m1 == m2);
  CHECK(read_file(dir.path + "/run1/seed7/checkpoint_best.bcra") ==
        read_file(dir.path + "/run2/seed7/checkpoint_best.bcra"));
  CHECK(m1.find("epoch=1 ") == 0);
  CHECK(m1.find("acc.A=") != std::string::npos);
}

TEST_CASE("multi-seed training writes a mean/std summary") {
  TempDir dir("cli_seeds");
  bcres::atomic_write_file(dir.path + "/cfg.txt", tiny_config_text());
  const auto r = run_cli("train --config " + dir.path + "/cfg.txt --seeds 1,2 --out " + dir.path +
                         "/out");
  CHECK(r.exit_code == 0);
  const auto summary = read_file(dir.path + "/out/summary.txt");
  CHECK(summary.find("Overall\t") != std::string::npos);
  CHECK(summary.find("±") != std::string::npos);
}

TEST_CASE("single-seed summary reports zero std") {
  TempDir dir("cli_one_seed");
  bcres::atomic_write_file(dir.path + "/cfg.txt", tiny_config_text());
  const auto r = run_cli("train --config " + dir.path + "/cfg.txt --seeds 3 --out " + dir.path +
                         "/out");
  CHECK(r.exit_code == 0);
  const auto summary = read_file(dir.path + "/out/summary.txt");
  CHECK(summary.find("± 0.00") != std::string::npos);
}

TEST_CASE("unknown config keys fail with exit code 2 naming the key") {
  TempDir dir("cli_badkey");
  bcres::atomic_write_file(dir.path + "/cfg.txt", tiny_config_text() + "trian.epochs=3\n");
  const auto r = run_cli("train --config " + dir.path + "/cfg.txt --seeds 1 --out " + dir.path +
                         "/out");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("trian.epochs") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.path + "/out/seed1/metrics.log"));
}

TEST_CASE("missing files fail with exit code 3") {
  const auto r = run_cli("inspect --checkpoint does_not_exist.bcra");
  CHECK(r.exit_code == 3);
}

TEST_CASE("full round: train, inspect, evaluate, compress, export-stats") {
  TempDir dir("cli_round");
  bcres::atomic_write_file(dir.path + "/cfg.txt", tiny_config_text());
  REQUIRE(run_cli("train --config " + dir.path + "/cfg.txt --seeds 5 --out " + dir.path + "/train")
              .exit_code == 0);
  const std::string ckpt = dir.path + "/train/seed5/checkpoint_best.bcra";

  auto inspect = run_cli("inspect --checkpoint " + ckpt + " --out " + dir.path + "/inspect.kv");
  CHECK(inspect.exit_code == 0);
  CHECK(inspect.output.find("receptive field: 109x109") != std::string::npos);
  const auto kv = read_file(dir.path + "/inspect.kv");
  CHECK(kv.find("rf.freq=109") != std::string::npos);
  CHECK(kv.find("params.total=") != std::string::npos);

  auto eval = run_cli("evaluate --config " + dir.path + "/cfg.txt --checkpoint " + ckpt +
                      " --seed 5 --out " + dir.path + "/eval");
  CHECK(eval.exit_code == 0);
  CHECK(eval.output.find("Overall\t") != std::string::npos);

  auto compress = run_cli("compress --config " + dir.path + "/cfg.txt --checkpoint " + ckpt +
                          " --seed 5 --out " + dir.path + "/compressed");
  CHECK(compress.exit_code == 0);
  CHECK(compress.output.find("Method\tBitwidth\tKD\tPruning\tAccuracy") != std::string::npos);
  CHECK(compress.output.find("0.60") != std::string::npos);
  CHECK(fs::exists(dir.path + "/compressed/checkpoint_compressed.bcra"));

  auto stats = run_cli("export-stats --config " + dir.path + "/cfg.txt --checkpoint " + ckpt +
                       " --seed 5 --stage stage2 --out " + dir.path + "/stats");
  CHECK(stats.exit_code == 0);
  CHECK(fs::exists(dir.path + "/stats/freq_stats.tsv"));
  CHECK(fs::exists(dir.path + "/stats/chan_stats.tsv"));

  // Compressed checkpoints evaluate through the same CLI path.
  auto eval_c = run_cli("evaluate --config " + dir.path + "/cfg.txt --checkpoint " + dir.path +
                        "/compressed/checkpoint_compressed.bcra --seed 5");
  CHECK(eval_c.exit_code == 0);
}

TEST_CASE("compress with kd flag but no teacher fails as a config error") {
  TempDir dir("cli_kd");
  bcres::atomic_write_file(dir.path + "/cfg.txt", tiny_config_text() + "compress.kd=1\n");
  REQUIRE(run_cli("train --config " + dir.path + "/cfg.txt --seeds 4 --out " + dir.path + "/t")
              .exit_code == 0);
  const auto r = run_cli("compress --config " + dir.path + "/cfg.txt --checkpoint " + dir.path +
                         "/t/seed4/checkpoint_best.bcra --out " + dir.path + "/c");
  CHECK(r.exit_code == 2);
}

TEST_CASE("generate-data writes manifest, cache and split report") {
  TempDir dir("cli_gen");
  bcres::atomic_write_file(dir.path + "/cfg.txt", tiny_config_text());
  const auto r = run_cli("generate-data --config " + dir.path + "/cfg.txt --seed 9 --out " +
                         dir.path + "/data");
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir.path + "/data/features.bcaf"));
  CHECK(fs::exists(dir.path + "/data/manifest.tsv"));
  CHECK(r.output.find("S4") != std::string::npos);
  CHECK(r.output.find("yes") != std::string::npos);  // unseen flag column
}

}  // TEST_SUITE
