#include <algorithm>
#include <cmath>

#include "bcres/augment.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bcres;
using bcres::testing::random_tensor;

TEST_SUITE("augment") {

TEST_CASE("time_roll shift 0 and full wrap are identities") {
  Rng rng(51);
  auto x = random_tensor<float>({1, 1, 4, 330}, rng);
  CHECK(time_roll(x, 0)->data == x->data);
  CHECK(time_roll(x, 330)->data == x->data);
  CHECK(time_roll(x, -330)->data == x->data);
}

TEST_CASE("time_roll moves frame t to (t + shift) mod T") {
  auto x = make_tensor<float>({1, 1, 2, 330});
  for (std::int64_t f = 0; f < 2; ++f) {
    for (std::int64_t t = 0; t < 330; ++t) {
      x->at4(0, 0, f, t) = static_cast<float>(f * 1000 + t);
    }
  }
  auto y = time_roll(x, 50);
  for (std::int64_t f = 0; f < 2; ++f) {
    for (std::int64_t t = 0; t < 330; ++t) {
      CHECK(y->at4(0, 0, f, (t + 50) % 330) == x->at4(0, 0, f, t));
    }
  }
}

TEST_CASE("time_roll is content preserving and inverts exactly") {
  Rng rng(52);
  auto x = random_tensor<float>({1, 2, 8, 33}, rng);
  auto rolled = time_roll(x, 13);
  auto back = time_roll(rolled, -13);
  CHECK(back->data == x->data);

  auto sorted_a = x->data;
  auto sorted_b = rolled->data;
  std::sort(sorted_a.begin(), sorted_a.end());
  std::sort(sorted_b.begin(), sorted_b.end());
  CHECK(sorted_a == sorted_b);
}

TEST_CASE("mixup endpoints and convex combination") {
  Rng rng(53);
  auto x1 = random_tensor<float>({1, 1, 4, 6}, rng);
  auto x2 = random_tensor<float>({1, 1, 4, 6}, rng);
  const std::vector<float> y1 = {1, 0, 0};
  const std::vector<float> y2 = {0, 1, 0};

  auto [xa, ya] = mixup(x1, x2, y1, y2, 1.0);
  CHECK(xa->data == x1->data);
  CHECK(ya == y1);

  auto [xm, ym] = mixup(x1, x2, y1, y2, 0.5);
  CHECK(ym == std::vector<float>{0.5f, 0.5f, 0.0f});
  double m1 = 0.0, m2 = 0.0, mm = 0.0;
  for (std::size_t i = 0; i < xm->data.size(); ++i) {
    m1 += x1->data[i];
    m2 += x2->data[i];
    mm += xm->data[i];
  }
  CHECK(mm == doctest::Approx(0.5 * m1 + 0.5 * m2).epsilon(1e-6));

  // Elementwise convex hull.
  for (std::size_t i = 0; i < xm->data.size(); ++i) {
    CHECK(xm->data[i] >= std::min(x1->data[i], x2->data[i]) - 1e-6f);
    CHECK(xm->data[i] <= std::max(x1->data[i], x2->data[i]) + 1e-6f);
  }

  auto bad = random_tensor<float>({1, 1, 4, 7}, rng);
  CHECK_THROWS_AS((void)mixup(x1, bad, y1, y2, 0.5), ConfigError);
}

TEST_CASE("spec_augment masks are contiguous zero bands") {
  AugmentConfig cfg;
  cfg.specaugment_enabled = true;
  cfg.freq_masks = 1;
  cfg.freq_mask_param = 8;
  cfg.time_masks = 0;
  cfg.time_mask_param = 4;
  Rng rng(54);
  auto x = full_tensor<float>({1, 2, 32, 16}, 1.0f);
  auto y = spec_augment(x, cfg, rng);
  // Zeroed rows must agree across channels and be contiguous in frequency.
  std::vector<bool> zeroed(32, false);
  for (std::int64_t f = 0; f < 32; ++f) {
    bool all_zero = true;
    for (std::int64_t c = 0; c < 2; ++c) {
      for (std::int64_t t = 0; t < 16; ++t) {
        all_zero = all_zero && y->at4(0, c, f, t) == 0.0f;
      }
    }
    zeroed[static_cast<std::size_t>(f)] = all_zero;
  }
  std::int64_t transitions = 0;
  for (std::size_t f = 1; f < zeroed.size(); ++f) transitions += zeroed[f] != zeroed[f - 1];
  CHECK(transitions <= 2);
}

TEST_CASE("spec_augment zero-width masks give the identity") {
  AugmentConfig cfg;
  cfg.specaugment_enabled = true;
  cfg.freq_masks = 0;
  cfg.freq_mask_param = 4;
  cfg.time_masks = 0;
  cfg.time_mask_param = 4;
  Rng rng(55);
  auto x = full_tensor<float>({1, 1, 16, 16}, 2.0f);
  CHECK(spec_augment(x, cfg, rng)->data == x->data);
}

TEST_CASE("spec_augment masked area when masks cannot clip") {
  AugmentConfig cfg;
  cfg.specaugment_enabled = true;
  cfg.freq_masks = 1;
  cfg.freq_mask_param = 40;
  cfg.time_masks = 0;
  cfg.time_mask_param = 10;
  // Count zeroed cells across many draws; each draw zeroes exactly w*C*T.
  Rng rng(56);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = full_tensor<float>({1, 3, 256, 20}, 1.0f);
    auto y = spec_augment(x, cfg, rng);
    std::int64_t zeros = 0;
    for (const float v : y->data) zeros += v == 0.0f;
    CHECK(zeros % (3 * 20) == 0);
    CHECK(zeros / (3 * 20) <= 40);
  }
}

TEST_CASE("spec_augment never increases magnitudes") {
  AugmentConfig cfg;
  cfg.specaugment_enabled = true;
  Rng rng(57);
  auto x = bcres::testing::random_tensor<float>({2, 1, 256, 100}, rng, -23.0, 3.0);
  auto y = spec_augment(x, cfg, rng);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    CHECK(std::abs(y->data[i]) <= std::abs(x->data[i]) + 0.0f);
  }
}

TEST_CASE("spec_augment rejects masks wider than the axis") {
  AugmentConfig cfg;
  cfg.specaugment_enabled = true;
  Rng rng(58);
  auto x = full_tensor<float>({1, 1, 32, 100}, 1.0f);  // 32 < freq_mask_param=40
  CHECK_THROWS_AS((void)spec_augment(x, cfg, rng), ConfigError);
}

TEST_CASE("fixed rng seed reproduces the augmented output byte for byte") {
  AugmentConfig cfg;
  cfg.specaugment_enabled = true;
  Rng rng1(59), rng2(59), data_rng(60);
  auto x = bcres::testing::random_tensor<float>({2, 1, 64, 90}, data_rng);
  auto a = spec_augment(x, cfg, rng1);
  auto b = spec_augment(x, cfg, rng2);
  CHECK(a->data == b->data);
}

}  // TEST_SUITE
