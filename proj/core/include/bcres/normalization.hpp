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
#ifndef BCRES_NORMALIZATION_HPP_
#define BCRES_NORMALIZATION_HPP_

#include <string>
#include <vector>

#include "bcres/tensor.hpp"

namespace bcres {

inline constexpr double kNormEpsilon = 1e-5;

// Frequency-wise instance normalization: per (batch, frequency) statistics
// over channel x time, population variance. Zero learnable parameters.
template <typename T>
TensorPtr<T> freq_in(const TensorPtr<T>& x, double epsilon = kNormEpsilon);

// lambda * x + freq_in(x). The identity shortcut keeps class information the
// normalization would otherwise discard; lambda = 0 degenerates to freq_in.
template <typename T>
TensorPtr<T> res_norm(const TensorPtr<T>& x, double lambda, double epsilon = kNormEpsilon);

// Batch normalization over groups of frequency bins: sub_bands = 1 is plain
// batch norm; sub_bands = S splits frequency into S contiguous bands with
// separate statistics and affine parameters per (channel, band).
//
// Training mode normalizes by batch statistics (population variance over
// batch x band x time) and updates the running buffers in place:
//   running <- (1 - momentum) * running + momentum * batch_stat
// Eval mode normalizes by the running buffers.
template <typename T>
TensorPtr<T> batch_norm_grouped(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                                const TensorPtr<T>& beta, const TensorPtr<T>& running_mean,
                                const TensorPtr<T>& running_var, std::int64_t sub_bands,
                                double momentum, bool training, double epsilon = kNormEpsilon);

// Per-example concatenated statistics for external embedding tools:
// freq_stats rows are [mean_f..., std_f...] (2F values), chan_stats rows are
// [mean_c..., std_c...] (2C values). Population std.
struct DomainStats {
  std::int64_t examples = 0;
  std::int64_t freq = 0;
  std::int64_t channels = 0;
  std::vector<float> freq_stats;  // {N, 2F} row-major
  std::vector<float> chan_stats;  // {N, 2C} row-major
};

DomainStats export_domain_stats(const TensorPtr<float>& x);

// Writes one tab-separated row per example: id, then the values.
void write_domain_stats_tsv(const std::string& path, const std::vector<std::string>& ids,
                            const std::vector<float>& rows, std::int64_t row_len);

}  // namespace bcres

#endif  // BCRES_NORMALIZATION_HPP_
