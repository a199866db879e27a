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
#ifndef BCRES_MODEL_HPP_
#define BCRES_MODEL_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bcres/augment.hpp"
#include "bcres/tensor.hpp"

namespace bcres {

struct CompressionState;  // defined in compress.hpp

// Where the five frequency-normalization placements sit and what they do:
// kResNorm  lambda*x + FreqIN(x) at input and after each stage
// kFreqIn   plain FreqIN at the same placements (the lambda=0 ablation)
// kNone     no normalization modules (the baseline)
enum class NormMode { kResNorm, kFreqIn, kNone };

struct ModelConfig {
  std::int64_t base_channels = 10;  // 10 for the 8.1k model, 80 for the 315k one
  std::int64_t num_classes = 10;
  double dropout = 0.1;
  std::int64_t ssn_sub_bands = 4;
  double resnorm_lambda = 0.1;
  NormMode norm_mode = NormMode::kResNorm;

  // Stage widths {c, 1.5c, 2c, 2.5c} (floor) with repeats {2, 2, 2, 3}.
  std::vector<std::int64_t> stage_channels() const;
  static const std::vector<std::int64_t>& stage_repeats();
  void validate() const;
};

template <typename T>
struct Conv2dLayer {
  std::string name;
  TensorPtr<T> weight;
  TensorPtr<T> bias;  // null for all convs except the classifier
  std::int64_t stride_f = 1, stride_t = 1, pad_f = 0, pad_t = 0, groups = 1;
};

template <typename T>
struct NormLayer {
  std::string name;
  TensorPtr<T> gamma, beta;
  TensorPtr<T> running_mean, running_var;  // buffers, not learnable
  std::int64_t sub_bands = 1;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Broadcasted residual block. The 2-D path f2 is a frequency-depthwise conv
// with subspectral norm; the 1-D path f1 pools frequency away, runs a
// temporal depthwise conv + norm + swish + pointwise conv + dropout, and is
// broadcast back over frequency:
//   normal:     y = relu(x + f2(x) + bc(f1(avgpool_f(f2(x)))))
//   transition: x' = relu(bn(conv1x1(x))); y = relu(f2(x') + bc(f1(...)))
template <typename T>
struct BcResBlock {
  bool transition = false;
  Conv2dLayer<T> adapter;
  NormLayer<T> adapter_bn;
  Conv2dLayer<T> freq_dw;
  NormLayer<T> ssn;
  Conv2dLayer<T> temp_dw;
  NormLayer<T> bn;
  Conv2dLayer<T> pointwise;
  double dropout_p = 0.1;
};

template <typename T>
struct ParamEntry {
  std::string name;
  TensorPtr<T> tensor;
  bool is_conv_weight = false;  // prunable + 8-bit quantizable
  bool is_conv_bias = false;
  bool decay = false;  // weight decay applies (conv weights only)
};

// Per-forward context. Evaluation uses the defaults; training sets `training`
// and `rng`; the compression fine-tune additionally points at the
// CompressionState so conv weights run through the fake-quantizer.
template <typename T>
struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;
  const AugmentConfig* spec_aug = nullptr;     // applied when training
  const CompressionState* compression = nullptr;
  std::map<std::string, TensorPtr<T>>* capture = nullptr;
};

template <typename T>
struct ModelGraph {
  ModelConfig cfg;
  Conv2dLayer<T> stem;
  NormLayer<T> stem_bn;
  std::vector<std::vector<BcResBlock<T>>> stages;
  Conv2dLayer<T> classifier;

  std::vector<ParamEntry<T>> params;   // ordered learnable registry
  std::vector<ParamEntry<T>> buffers;  // running statistics

  // Forward to logits {N, num_classes}. Input {N, 1, F, T}; F must keep the
  // subspectral bands divisible through the two pools (F % 32 == 0 with 4
  // sub-bands).
  TensorPtr<T> forward(const TensorPtr<T>& x, const ForwardCtx<T>& ctx) const;

  TensorPtr<T> find_param(const std::string& name) const;
  void set_requires_grad(bool value);
  void zero_grads();

  // Deep copies of every param + buffer payload, in registry order.
  std::vector<std::vector<T>> snapshot_state() const;
  void restore_state(const std::vector<std::vector<T>>& state);
};

// Builds the graph per the layer table: 5x5 stride-2 stem to 2c channels,
// stages {2,2,2,3} blocks wide {c, 1.5c, 2c, 2.5c} with max-pools after
// stages 1 and 2, 1x1 classifier conv, global average pool. Normalization
// placements at input and after each stage (after the pool where present).
template <typename T>
ModelGraph<T> build_model(const ModelConfig& cfg, Rng& rng);

// One broadcasted residual block (see BcResBlock for the dataflow).
template <typename T>
TensorPtr<T> bc_resblock_forward(const BcResBlock<T>& block, const TensorPtr<T>& x,
                                 const ForwardCtx<T>& ctx);

// Rebuilds an identically-shaped graph in the other precision.
ModelGraph<double> model_to_double(const ModelGraph<float>& g);

// ---------------------------------------------------------------------------
// Structural analysis
// ---------------------------------------------------------------------------

struct SpatialDescriptor {
  std::string name;
  std::int64_t kf = 1, kt = 1;
  std::int64_t sf = 1, st = 1;
  std::int64_t pf = 0, pt = 0;
  bool is_pool = false;
};

// The conv/pool backbone in forward order (stem, per-block depthwise convs,
// the two max-pools, classifier). The broadcast branch's global frequency
// pooling is excluded: receptive-field accounting follows the conv path.
std::vector<SpatialDescriptor> spatial_chain(const ModelConfig& cfg);

struct RfResult {
  std::int64_t freq = 1;
  std::int64_t time = 1;
};

// Receptive field by the usual recursion rf += (k-1)*jump, jump *= stride.
// Pooling layers advance the jump only (pure downsampling) unless
// include_pool_extent is set; the window-extent variant is the conservative
// bound used by the empirical containment oracle.
RfResult receptive_field(const ModelConfig& cfg, bool include_pool_extent = false);

RfResult receptive_field_of_chain(const std::vector<SpatialDescriptor>& chain,
                                  bool include_pool_extent = false);

template <typename T>
RfResult receptive_field(const ModelGraph<T>& g, bool include_pool_extent = false);

// Input interval [lo, hi] covered by output index `out_index` along one axis
// of the spatial chain (freq axis when `freq_axis`, else time). Includes
// pool window extents; intervals may extend past the input edges where
// padding reaches out of bounds.
std::pair<std::int64_t, std::int64_t> rf_input_interval(const ModelConfig& cfg, bool freq_axis,
                                                        std::int64_t out_index);

// Spatial extents after each backbone layer for a given input size,
// floor-division semantics throughout.
std::vector<std::pair<std::string, std::pair<std::int64_t, std::int64_t>>> stage_extents(
    const ModelConfig& cfg, std::int64_t freq, std::int64_t time);

// ---------------------------------------------------------------------------
// Parameter counting
// ---------------------------------------------------------------------------

struct ParamCountRow {
  std::string name;
  std::int64_t count = 0;
  bool conv_split = false;  // conv weights + conv biases; rest is norm/other
};

struct ParamCountReport {
  std::vector<ParamCountRow> rows;
  std::int64_t total = 0;
  std::int64_t conv_total = 0;
  std::int64_t other_total = 0;

  std::string to_table() const;
};

template <typename T>
ParamCountReport count_params(const ModelGraph<T>& g);

// ---------------------------------------------------------------------------
// Checkpoints ("BCRA"): magic, u16 version, config record, then one entry
// per tensor: {name, dtype tag in {f32, f16, i8}, shape, little-endian
// payload, f32 quant scale for i8 entries}. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

struct LoadedCheckpoint {
  ModelGraph<float> model;
  bool compressed = false;
  // For compressed checkpoints: per-conv-weight dequantization scales and the
  // masks implied by stored zeros.
  std::map<std::string, float> scales;
  std::map<std::string, std::vector<std::uint8_t>> masks;
};

void save_checkpoint(const ModelGraph<float>& g, const std::string& path);
void save_checkpoint_compressed(const ModelGraph<float>& g, const CompressionState& state,
                                const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace bcres

#endif  // BCRES_MODEL_HPP_
