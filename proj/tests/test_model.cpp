#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <map>

#include "bcres/compress.hpp"
#include "bcres/model.hpp"
#include "bcres/normalization.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bcres;
using bcres::testing::random_normal_tensor;
using bcres::testing::random_tensor;
using bcres::testing::scratch_path;

namespace {

ModelConfig asc_config(std::int64_t c, NormMode mode = NormMode::kResNorm) {
  ModelConfig cfg;
  cfg.base_channels = c;
  cfg.norm_mode = mode;
  return cfg;
}

// Bounding box of |grad| > 0 over the {1, 1, F, T} input gradient.
struct Box {
  std::int64_t f_lo = 1 << 30, f_hi = -1, t_lo = 1 << 30, t_hi = -1;
};

Box grad_box(const TensorPtr<float>& x) {
  Box box;
  const std::int64_t freq = x->shape[2], time = x->shape[3];
  for (std::int64_t f = 0; f < freq; ++f) {
    for (std::int64_t t = 0; t < time; ++t) {
      if (x->grad[static_cast<std::size_t>(f * time + t)] != 0.0f) {
        box.f_lo = std::min(box.f_lo, f);
        box.f_hi = std::max(box.f_hi, f);
        box.t_lo = std::min(box.t_lo, t);
        box.t_hi = std::max(box.t_hi, t);
      }
    }
  }
  return box;
}

// Backward from a single position of a captured map down to the input.
Box empirical_input_box(const ModelGraph<float>& model, const TensorPtr<float>& input,
                        std::int64_t pos_f, std::int64_t pos_t) {
  input->requires_grad = true;
  input->zero_grad();
  std::map<std::string, TensorPtr<float>> taps;
  ForwardCtx<float> ctx;
  ctx.capture = &taps;
  (void)model.forward(input, ctx);
  auto logit_map = taps.at("logit_map");
  std::vector<float> indicator(logit_map->data.size(), 0.0f);
  indicator[static_cast<std::size_t>(logit_map->index4(0, 0, pos_f, pos_t))] = 1.0f;
  auto target = sum_all(mul_mask(logit_map, indicator));
  backward(target);
  const Box box = grad_box(input);
  input->requires_grad = false;
  return box;
}

void zero_broadcast_branch(ModelGraph<float>& model) {
  for (auto& stage : model.stages) {
    for (auto& block : stage) {
      std::fill(block.pointwise.weight->data.begin(), block.pointwise.weight->data.end(), 0.0f);
    }
  }
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter totals hit the published sizes") {
  Rng rng(31);
  auto big = build_model<float>(asc_config(80), rng);
  const auto big_counts = count_params(big);
  CHECK(big_counts.total == 314970);
  CHECK(std::abs(big_counts.total - 315000) <= 0.02 * 315000);
  CHECK(big_counts.other_total == 14640);
  CHECK(big_counts.conv_total == 300330);
  // 15k norm parameters and ~33k nonzero conv weights at the 0.89 ratio
  CHECK(std::abs(big_counts.other_total - 15000) <= 0.10 * 15000);
  CHECK(std::abs(std::llround(0.11 * static_cast<double>(big_counts.conv_total)) - 33000) <=
        0.10 * 33000);

  auto small = build_model<float>(asc_config(10), rng);
  const auto small_counts = count_params(small);
  CHECK(small_counts.total == 8055);
  CHECK(std::abs(small_counts.total - 8100) <= 0.03 * 8100);
  CHECK(small_counts.other_total == 1830);
  CHECK(small_counts.conv_total == 6225);
}

TEST_CASE("stem weight count for the large model") {
  Rng rng(32);
  auto g = build_model<float>(asc_config(80), rng);
  CHECK(g.find_param("stem.conv.weight")->size() == 5 * 5 * 1 * 160);
}

TEST_CASE("stage widths floor 1.5c and 2.5c") {
  CHECK(asc_config(10).stage_channels() == std::vector<std::int64_t>{10, 15, 20, 25});
  CHECK(asc_config(80).stage_channels() == std::vector<std::int64_t>{80, 120, 160, 200});
  CHECK(asc_config(7).stage_channels() == std::vector<std::int64_t>{7, 10, 14, 17});
}

TEST_CASE("build rejects non-positive base channels") {
  Rng rng(33);
  CHECK_THROWS_AS((void)build_model<float>(asc_config(0), rng), ConfigError);
}

TEST_CASE("forward on a 256x330 input matches the layer table rows") {
  Rng rng(34);
  auto g = build_model<float>(asc_config(80), rng);
  auto x = random_tensor<float>({1, 1, 256, 330}, rng, -1.0, 1.0);
  std::map<std::string, TensorPtr<float>> taps;
  ForwardCtx<float> ctx;
  ctx.capture = &taps;
  NoGradGuard ng;
  auto logits = g.forward(x, ctx);
  CHECK(logits->shape == std::vector<std::int64_t>{1, 10});
  CHECK(taps.at("stem")->shape == std::vector<std::int64_t>{1, 160, 128, 165});
  CHECK(taps.at("stage1")->shape == std::vector<std::int64_t>{1, 80, 64, 82});
  CHECK(taps.at("stage2")->shape == std::vector<std::int64_t>{1, 120, 32, 41});
  CHECK(taps.at("stage3")->shape == std::vector<std::int64_t>{1, 160, 32, 41});
  CHECK(taps.at("stage4")->shape == std::vector<std::int64_t>{1, 200, 32, 41});
  CHECK(taps.at("logit_map")->shape == std::vector<std::int64_t>{1, 10, 32, 41});
  for (const float v : logits->data) CHECK(std::isfinite(v));
}

TEST_CASE("five normalization placements, active exactly in resnorm/freqin modes") {
  Rng rng(35);
  auto x = random_tensor<float>({1, 1, 64, 64}, rng);
  NoGradGuard ng;
  for (const NormMode mode : {NormMode::kResNorm, NormMode::kFreqIn, NormMode::kNone}) {
    auto g = build_model<float>(asc_config(10, mode), rng);
    std::map<std::string, TensorPtr<float>> taps;
    ForwardCtx<float> ctx;
    ctx.capture = &taps;
    (void)g.forward(x, ctx);
    for (const auto* key : {"input_norm", "stage1", "stage2", "stage3", "stage4"}) {
      CHECK(taps.count(key) == 1);
    }
    if (mode == NormMode::kNone) {
      CHECK(taps.at("input_norm")->data == x->data);
    } else {
      CHECK(taps.at("input_norm")->data != x->data);
    }
  }
}

TEST_CASE("receptive field is 109x109 on the full graph") {
  const auto rf = receptive_field(asc_config(80));
  CHECK(rf.freq == 109);
  CHECK(rf.time == 109);
  // Same for any width; depth is what matters.
  const auto rf1 = receptive_field(asc_config(10));
  CHECK(rf1.freq == 109);
  CHECK(rf1.time == 109);
  // Counting pool windows as extent gives the conservative bound.
  const auto cons = receptive_field(asc_config(80), /*include_pool_extent=*/true);
  CHECK(cons.freq == 115);
  CHECK(cons.time == 115);
}

TEST_CASE("receptive field recursion on hand-built chains") {
  std::vector<SpatialDescriptor> stem_only = {{"conv", 5, 5, 2, 2, 2, 2, false}};
  auto rf = receptive_field_of_chain(stem_only);
  CHECK(rf.freq == 5);
  CHECK(rf.time == 5);

  // conv 5x5/2 then max-pool 2x2: rf = 5 + (2-1)*2 = 7 once the window
  // extent is counted; the downsampling-only convention keeps 5.
  std::vector<SpatialDescriptor> with_pool = {{"conv", 5, 5, 2, 2, 2, 2, false},
                                              {"pool", 2, 2, 2, 2, 0, 0, true}};
  rf = receptive_field_of_chain(with_pool, /*include_pool_extent=*/true);
  CHECK(rf.freq == 7);
  CHECK(rf.time == 7);
  rf = receptive_field_of_chain(with_pool, /*include_pool_extent=*/false);
  CHECK(rf.freq == 5);
  CHECK(rf.time == 5);
}

TEST_CASE("rf interval width equals the conservative recursion") {
  const auto cfg = asc_config(10);
  for (const bool freq_axis : {true, false}) {
    const auto [lo, hi] = rf_input_interval(cfg, freq_axis, 7);
    const auto cons = receptive_field(cfg, true);
    CHECK(hi - lo + 1 == (freq_axis ? cons.freq : cons.time));
  }
}

TEST_CASE("empirical interval equality on a hand-built positive chain") {
  // conv 5x5/2 pad 2 -> depthwise-style 3x1 pad (1,0) -> 1x3 pad (0,1) ->
  // avg-pool 2x2 -> 3x3 pad 1; positive weights, positive input, so every
  // reachable input position carries gradient.
  Rng rng(36);
  auto x = random_tensor<float>({1, 1, 40, 40}, rng, 0.1, 1.0, /*requires_grad=*/true);
  auto w1 = random_tensor<float>({1, 1, 5, 5}, rng, 0.1, 1.0, true);
  auto w2 = random_tensor<float>({1, 1, 3, 1}, rng, 0.1, 1.0, true);
  auto w3 = random_tensor<float>({1, 1, 1, 3}, rng, 0.1, 1.0, true);
  auto w4 = random_tensor<float>({1, 1, 3, 3}, rng, 0.1, 1.0, true);

  auto y = conv2d<float>(x, w1, nullptr, 2, 2, 2, 2, 1);
  y = conv2d<float>(y, w2, nullptr, 1, 1, 1, 0, 1);
  y = conv2d<float>(y, w3, nullptr, 1, 1, 0, 1, 1);
  y = pool2d<float>(y, PoolKind::kAvg, 2, 2, 2, 2);
  y = conv2d<float>(y, w4, nullptr, 1, 1, 1, 1, 1);

  const std::int64_t pf = 3, pt = 3;
  std::vector<float> indicator(y->data.size(), 0.0f);
  indicator[static_cast<std::size_t>(y->index4(0, 0, pf, pt))] = 1.0f;
  auto target = sum_all(mul_mask(y, indicator));
  backward(target);
  const Box box = grad_box(x);

  // Independent interval composition: out -> in over the chain, reversed.
  struct L {
    std::int64_t k, s, p;
  };
  auto compose = [](const std::vector<L>& layers, std::int64_t o) {
    std::int64_t jump = 1, lo = 0, hi = 0;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
      lo = lo * it->s - it->p;
      hi = hi * it->s - it->p + it->k - 1;
      jump *= it->s;
    }
    return std::pair<std::int64_t, std::int64_t>{o * jump + lo, o * jump + hi};
  };
  const auto [flo, fhi] = compose({{5, 2, 2}, {3, 1, 1}, {1, 1, 0}, {2, 2, 0}, {3, 1, 1}}, pf);
  const auto [tlo, thi] = compose({{5, 2, 2}, {1, 1, 0}, {3, 1, 1}, {2, 2, 0}, {3, 1, 1}}, pt);
  CHECK(box.f_lo == std::max<std::int64_t>(0, flo));
  CHECK(box.f_hi == std::min<std::int64_t>(39, fhi));
  CHECK(box.t_lo == std::max<std::int64_t>(0, tlo));
  CHECK(box.t_hi == std::min<std::int64_t>(39, thi));
}

TEST_CASE("empirical gradient boxes are contained in the analytic intervals") {
  // Norm-free model in eval mode so no statistics couple distant positions.
  // The time axis uses the full graph; the frequency axis needs the
  // broadcast branch silenced (its global frequency pooling reaches every
  // bin by construction, which the conv-path receptive field excludes).
  Rng rng(37);
  const auto cfg = asc_config(10, NormMode::kNone);
  auto input = random_tensor<float>({1, 1, 128, 128}, rng, 0.1, 1.0);
  const std::int64_t pos = 8;  // center of the 16x16 logit map

  auto model = build_model<float>(cfg, rng);
  const Box time_box = empirical_input_box(model, input, pos, pos);
  const auto [tlo, thi] = rf_input_interval(cfg, /*freq_axis=*/false, pos);
  CHECK(time_box.t_lo >= std::max<std::int64_t>(0, tlo));
  CHECK(time_box.t_hi <= std::min<std::int64_t>(127, thi));
  CHECK(time_box.t_hi - time_box.t_lo + 1 <= 115);

  zero_broadcast_branch(model);
  const Box freq_box = empirical_input_box(model, input, pos, pos);
  const auto [flo, fhi] = rf_input_interval(cfg, /*freq_axis=*/true, pos);
  CHECK(freq_box.f_lo >= std::max<std::int64_t>(0, flo));
  CHECK(freq_box.f_hi <= std::min<std::int64_t>(127, fhi));
  CHECK(freq_box.f_hi - freq_box.f_lo + 1 <= 115);
}

TEST_CASE("normal block with zeroed convs reduces to relu of its input") {
  Rng rng(38);
  auto g = build_model<float>(asc_config(10, NormMode::kNone), rng);
  auto& block = g.stages[0][1];  // second block of stage1: in == out channels
  REQUIRE_FALSE(block.transition);
  std::fill(block.freq_dw.weight->data.begin(), block.freq_dw.weight->data.end(), 0.0f);
  std::fill(block.temp_dw.weight->data.begin(), block.temp_dw.weight->data.end(), 0.0f);
  std::fill(block.pointwise.weight->data.begin(), block.pointwise.weight->data.end(), 0.0f);

  auto x = random_tensor<float>({2, 10, 16, 12}, rng, -1.0, 1.0);
  ForwardCtx<float> ctx;  // eval: SSN/BN run off fresh running stats
  NoGradGuard ng;
  auto y = bc_resblock_forward(block, x, ctx);
  CHECK(y->shape == x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    CHECK(y->data[i] == doctest::Approx(std::max(0.0f, x->data[i])).epsilon(1e-6));
  }
}

TEST_CASE("normal block preserves shape; transition block maps channels") {
  Rng rng(39);
  auto g = build_model<float>(asc_config(10), rng);
  auto x = random_tensor<float>({1, 20, 16, 12}, rng);
  NoGradGuard ng;
  ForwardCtx<float> ctx;
  auto y = bc_resblock_forward(g.stages[0][0], x, ctx);  // transition 20 -> 10
  CHECK(y->shape == std::vector<std::int64_t>{1, 10, 16, 12});
  auto z = bc_resblock_forward(g.stages[0][1], y, ctx);
  CHECK(z->shape == y->shape);
}

TEST_CASE("registry names are unique and stable across rebuilds") {
  Rng rng1(40), rng2(41);
  auto a = build_model<float>(asc_config(10), rng1);
  auto b = build_model<float>(asc_config(10), rng2);
  REQUIRE(a.params.size() == b.params.size());
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].name == b.params[i].name);
    seen[a.params[i].name] += 1;
  }
  for (const auto& [name, count] : seen) {
    CAPTURE(name);
    CHECK(count == 1);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(42);
  auto g = build_model<float>(asc_config(10), rng);
  // Perturb running stats so buffers carry non-default payloads.
  for (auto& buf : g.buffers) {
    for (auto& v : buf.tensor->data) v += static_cast<float>(rng.uniform(-0.25, 0.25));
  }
  const std::string path = scratch_path("ckpt.bcra");
  save_checkpoint(g, path);
  auto loaded = load_checkpoint(path);
  CHECK_FALSE(loaded.compressed);
  CHECK(loaded.model.cfg.base_channels == 10);
  REQUIRE(loaded.model.params.size() == g.params.size());
  for (std::size_t i = 0; i < g.params.size(); ++i) {
    CHECK(loaded.model.params[i].tensor->data == g.params[i].tensor->data);
  }
  for (std::size_t i = 0; i < g.buffers.size(); ++i) {
    CHECK(loaded.model.buffers[i].tensor->data == g.buffers[i].tensor->data);
  }
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints fail with an offset-bearing message") {
  const std::string path = scratch_path("corrupt.bcra");
  {
    Rng rng(43);
    auto g = build_model<float>(asc_config(10), rng);
    save_checkpoint(g, path);
  }
  // Truncate mid-entry.
  {
    std::FILE* f = std::fopen(path.c_str(), "rb+");
    REQUIRE(f != nullptr);
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fclose(f);
    REQUIRE(truncate(path.c_str(), size / 2) == 0);
  }
  CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("offset"), IoError);
  std::remove(path.c_str());
  CHECK_THROWS_AS((void)load_checkpoint("missing.bcra"), IoError);
}

TEST_CASE("eval-mode forward is bit-identical across runs") {
  Rng rng(44);
  auto g = build_model<float>(asc_config(10), rng);
  auto x = random_tensor<float>({2, 1, 64, 48}, rng);
  NoGradGuard ng;
  ForwardCtx<float> ctx;
  auto a = g.forward(x, ctx);
  auto b = g.forward(x, ctx);
  CHECK(a->data == b->data);
}

TEST_CASE("device-gain argmax invariance for a lambda-0 network") {
  Rng rng(45);
  const auto cfg = asc_config(10, NormMode::kFreqIn);
  auto g = build_model<float>(cfg, rng);
  NoGradGuard ng;
  ForwardCtx<float> ctx;
  for (int trial = 0; trial < 5; ++trial) {
    Rng trial_rng(600 + trial);
    auto x = random_normal_tensor<float>({1, 1, 64, 64}, trial_rng, 0.0, 3.0);
    auto xt = make_tensor<float>(x->shape);
    for (std::int64_t f = 0; f < 64; ++f) {
      const auto a = static_cast<float>(trial_rng.uniform(0.5, 2.0));
      const auto b = static_cast<float>(trial_rng.uniform(-2.0, 2.0));
      for (std::int64_t t = 0; t < 64; ++t) {
        xt->at4(0, 0, f, t) = a * x->at4(0, 0, f, t) + b;
      }
    }
    auto base = g.forward(x, ctx);
    auto shifted = g.forward(xt, ctx);
    double worst = 0.0;
    std::int64_t argmax_base = 0, argmax_shift = 0;
    for (std::int64_t k = 0; k < 10; ++k) {
      worst = std::max(worst, std::abs(static_cast<double>(base->data[static_cast<std::size_t>(k)]) -
                                       shifted->data[static_cast<std::size_t>(k)]));
      if (base->data[static_cast<std::size_t>(k)] > base->data[static_cast<std::size_t>(argmax_base)]) argmax_base = k;
      if (shifted->data[static_cast<std::size_t>(k)] > shifted->data[static_cast<std::size_t>(argmax_shift)]) argmax_shift = k;
    }
    CHECK(worst < 1e-4);
    CHECK(argmax_base == argmax_shift);
  }
}

TEST_CASE("gradcheck: bc_resblock in double precision") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(700 + seed);
    auto g = build_model<double>(asc_config(10), rng);
    auto& block = g.stages[0][1];
    auto x = random_tensor<double>({1, 10, 8, 6}, rng, -1.0, 1.0);
    std::vector<TensorPtr<double>> inputs = {x, block.freq_dw.weight, block.pointwise.weight,
                                             block.ssn.gamma, block.bn.beta};
    auto f = [&](const std::vector<TensorPtr<double>>& in) {
      ForwardCtx<double> ctx;
      ctx.training = true;  // exercise batch-statistics backward
      Rng drop_rng(900 + seed);
      ctx.rng = &drop_rng;
      auto y = bc_resblock_forward(block, in[0], ctx);
      return sum_all(mul(y, y));
    };
    CHECK(gradcheck(f, inputs, {1e-4, 40, 17 + seed}) < 1e-4);
  }
}

TEST_CASE("stage extents report floor divisions") {
  const auto rows = stage_extents(asc_config(80), 256, 330);
  CHECK(rows.front().first == "input");
  CHECK(rows.front().second == std::pair<std::int64_t, std::int64_t>{256, 330});
  CHECK(rows.back().first == "avgpool");
  bool saw_pool2 = false;
  for (const auto& [name, e] : rows) {
    if (name == "pool2") {
      saw_pool2 = true;
      CHECK(e == std::pair<std::int64_t, std::int64_t>{32, 41});
    }
  }
  CHECK(saw_pool2);
}

}  // TEST_SUITE
