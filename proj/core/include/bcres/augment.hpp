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
#ifndef BCRES_AUGMENT_HPP_
#define BCRES_AUGMENT_HPP_

#include <utility>
#include <vector>

#include "bcres/tensor.hpp"

namespace bcres {

// Training-time feature-domain augmentation settings. Roll covers +-1.5 s at
// the 30 ms hop (50 frames); SpecAugment is reserved for the large model.
struct AugmentConfig {
  std::int64_t roll_frames = 50;
  bool mixup_enabled = true;
  double mixup_alpha = 0.3;
  bool specaugment_enabled = false;
  std::int64_t freq_masks = 2;
  std::int64_t freq_mask_param = 40;
  std::int64_t time_masks = 2;
  std::int64_t time_mask_param = 80;

  void validate() const {
    if (mixup_alpha <= 0.0) throw ConfigError("AugmentConfig: mixup_alpha must be positive");
    if (roll_frames < 0) throw ConfigError("AugmentConfig: roll_frames must be >= 0");
  }
};

// Circular shift along time: frame t moves to (t + shift) mod T. Content
// preserving; shift 0 or any multiple of T is the identity.
TensorPtr<float> time_roll(const TensorPtr<float>& x, std::int64_t shift_frames);

// Convex combination of two feature maps and their label distributions.
std::pair<TensorPtr<float>, std::vector<float>> mixup(const TensorPtr<float>& x1,
                                                      const TensorPtr<float>& x2,
                                                      const std::vector<float>& y1,
                                                      const std::vector<float>& y2, double lam);

// SpecAugment without time warping: per example, `freq_masks` bands of width
// ~ Uniform{0..freq_mask_param} zeroed along frequency, likewise along time.
// Mask start positions are uniform over placements that do not clip. Applied
// inside the model after the input normalization, so 0 approximates the
// per-frequency mean. Differentiable through the surviving entries.
template <typename T>
TensorPtr<T> spec_augment(const TensorPtr<T>& x, const AugmentConfig& cfg, Rng& rng);

}  // namespace bcres

#endif  // BCRES_AUGMENT_HPP_
