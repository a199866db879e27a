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
#ifndef BCRES_COMPRESS_HPP_
#define BCRES_COMPRESS_HPP_

#include <map>
#include <string>
#include <vector>

#include "bcres/model.hpp"
#include "bcres/train.hpp"

namespace bcres {

// Per-layer prune masks and quantization bookkeeping. `active` switches the
// forward pass into fake-quant mode (8-bit conv weights, binary16
// everything else).
struct CompressionState {
  bool active = false;
  double prune_ratio = 0.0;
  int conv_bits = 8;
  int other_bits = 16;
  // Conv-weight registry name -> 0/1 keep mask (same length as the tensor).
  std::map<std::string, std::vector<std::uint8_t>> masks;
  // Conv-weight registry name -> dequantization scale (filled at emit time).
  std::map<std::string, float> scales;

  std::int64_t nonzero_conv_count() const;
  std::int64_t masked_total() const;
};

// Per-tensor symmetric scale: max|w| / (2^(bits-1) - 1). Returns 1 for an
// all-zero tensor (sentinel; quantization is then the identity on zeros).
template <typename T>
T symmetric_scale(const Tensor<T>& w, int bits);

// clamp(round_half_even(w / scale), -qmax, qmax) as a signed integer code.
std::int8_t quantize_symmetric(float w, float scale, int bits);

// Symmetric fake-quantization: clamp(round(w/scale), -qmax, qmax) * scale
// with round-half-to-even and qmax = 2^(bits-1) - 1. Idempotent. Backward is
// the straight-through estimator: identity inside the clamp range, zero
// outside (the max-derived scale never clips, but the guard stays).
template <typename T>
TensorPtr<T> fake_quant(const TensorPtr<T>& w, int bits);

// Round-trip through IEEE binary16 with straight-through gradients.
template <typename T>
TensorPtr<T> fp16_round_op(const TensorPtr<T>& x);

// Global magnitude pruning across all conv weights: the smallest-magnitude
// fraction `ratio` is zeroed in place and the masks frozen for fine-tuning.
// Kept count is round((1-ratio) * total).
CompressionState prune(ModelGraph<float>& model, double ratio);

// Same policy over an explicit (name, tensor) list; prune() delegates here.
CompressionState prune_tensors(const std::vector<std::pair<std::string, TensorPtr<float>>>& weights,
                               double ratio);

// ---------------------------------------------------------------------------
// Size accounting: nonzero conv weights at 1 byte, all other learnable
// parameters (norm affine + conv biases) at 2 bytes. Running statistics
// fold into the affine at deployment and are not counted.
// ---------------------------------------------------------------------------

struct SizeRow {
  std::string name;
  std::int64_t params = 0;
  std::int64_t nonzero = 0;
  std::int64_t bytes = 0;
  int bits = 32;
};

struct SizeReport {
  std::vector<SizeRow> rows;
  std::int64_t conv_nonzero = 0;
  std::int64_t other_params = 0;
  std::int64_t total_bytes = 0;

  double total_kib() const { return static_cast<double>(total_bytes) / 1024.0; }
  std::string to_table() const;
};

SizeReport size_report(const ModelGraph<float>& model, const CompressionState& state);

// Uncompressed accounting (4 bytes per learnable parameter).
SizeReport size_report_fp32(const ModelGraph<float>& model);

// Recomputes the report from a compressed checkpoint file alone.
SizeReport size_report_from_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Pipeline: prune(ratio) -> fine-tune with fake-quant active and masks
// frozen (KD against the teacher when given) -> emit the i8/f16 checkpoint.
// ---------------------------------------------------------------------------

struct CompressConfig {
  double prune_ratio = 0.89;
  std::int64_t finetune_epochs = 50;
  double finetune_peak_lr = 0.006;
  std::int64_t finetune_warmup_epochs = 1;
  bool kd = false;

  void validate() const;
};

struct CompressResult {
  CompressionState state;
  SizeReport size;
  EvalResult eval;                       // test accuracy of the compressed model
  std::vector<EpochRecord> finetune_log;
};

CompressResult compress_pipeline(ModelGraph<float>& model, const ModelGraph<float>* teacher,
                                 const SceneDataset& ds, const TrainConfig& train_cfg,
                                 const AugmentConfig& aug, const CompressConfig& cfg,
                                 const std::string& out_checkpoint, Rng& rng);

}  // namespace bcres

#endif  // BCRES_COMPRESS_HPP_
