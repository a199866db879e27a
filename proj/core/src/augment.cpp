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
#include "bcres/augment.hpp"

namespace bcres {

TensorPtr<float> time_roll(const TensorPtr<float>& x, std::int64_t shift_frames) {
  if (x->shape.size() != 4) throw ConfigError("time_roll: expected rank-4 input");
  const std::int64_t time = x->shape[3];
  const std::int64_t planes = x->shape[0] * x->shape[1] * x->shape[2];
  std::int64_t shift = shift_frames % time;
  if (shift < 0) shift += time;

  auto out = make_tensor<float>(x->shape);
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* src = x->data.data() + p * time;
    float* dst = out->data.data() + p * time;
    for (std::int64_t t = 0; t < time; ++t) {
      dst[(t + shift) % time] = src[t];
    }
  }
  return out;
}

std::pair<TensorPtr<float>, std::vector<float>> mixup(const TensorPtr<float>& x1,
                                                      const TensorPtr<float>& x2,
                                                      const std::vector<float>& y1,
                                                      const std::vector<float>& y2, double lam) {
  if (x1->shape != x2->shape) throw ConfigError("mixup: feature shape mismatch");
  if (y1.size() != y2.size()) throw ConfigError("mixup: label length mismatch");
  if (lam < 0.0 || lam > 1.0) throw ConfigError("mixup: lam must lie in [0, 1]");
  const auto l = static_cast<float>(lam);

  auto x = make_tensor<float>(x1->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    x->data[i] = l * x1->data[i] + (1.0f - l) * x2->data[i];
  }
  std::vector<float> y(y1.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = l * y1[i] + (1.0f - l) * y2[i];
  }
  return {x, std::move(y)};
}

template <typename T>
TensorPtr<T> spec_augment(const TensorPtr<T>& x, const AugmentConfig& cfg, Rng& rng) {
  if (x->shape.size() != 4) throw ConfigError("spec_augment: expected rank-4 input");
  const std::int64_t batch = x->shape[0], ch = x->shape[1], freq = x->shape[2], time = x->shape[3];
  if (cfg.freq_mask_param > freq) {
    throw ConfigError("spec_augment: freq_mask_param " + std::to_string(cfg.freq_mask_param) +
                      " exceeds frequency extent " + std::to_string(freq));
  }
  if (cfg.time_mask_param > time) {
    throw ConfigError("spec_augment: time_mask_param " + std::to_string(cfg.time_mask_param) +
                      " exceeds time extent " + std::to_string(time));
  }

  std::vector<T> mask(x->data.size(), T(1));
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t m = 0; m < cfg.freq_masks; ++m) {
      const std::int64_t width = rng.uniform_int(0, cfg.freq_mask_param);
      if (width == 0) continue;
      const std::int64_t start = rng.uniform_int(0, freq - width);
      for (std::int64_t c = 0; c < ch; ++c) {
        for (std::int64_t f = start; f < start + width; ++f) {
          const std::int64_t base = x->index4(n, c, f, 0);
          for (std::int64_t t = 0; t < time; ++t) mask[static_cast<std::size_t>(base + t)] = T(0);
        }
      }
    }
    for (std::int64_t m = 0; m < cfg.time_masks; ++m) {
      const std::int64_t width = rng.uniform_int(0, cfg.time_mask_param);
      if (width == 0) continue;
      const std::int64_t start = rng.uniform_int(0, time - width);
      for (std::int64_t c = 0; c < ch; ++c) {
        for (std::int64_t f = 0; f < freq; ++f) {
          const std::int64_t base = x->index4(n, c, f, 0);
          for (std::int64_t t = start; t < start + width; ++t) {
            mask[static_cast<std::size_t>(base + t)] = T(0);
          }
        }
      }
    }
  }
  return mul_mask(x, mask);
}

template TensorPtr<float> spec_augment<float>(const TensorPtr<float>&, const AugmentConfig&, Rng&);
template TensorPtr<double> spec_augment<double>(const TensorPtr<double>&, const AugmentConfig&,
                                                Rng&);

}  // namespace bcres
