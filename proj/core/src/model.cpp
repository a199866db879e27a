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
#include "bcres/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bcres/compress.hpp"
#include "bcres/normalization.hpp"

namespace bcres {

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

std::vector<std::int64_t> ModelConfig::stage_channels() const {
  const std::int64_t c = base_channels;
  return {c, 3 * c / 2, 2 * c, 5 * c / 2};
}

const std::vector<std::int64_t>& ModelConfig::stage_repeats() {
  static const std::vector<std::int64_t> repeats = {2, 2, 2, 3};
  return repeats;
}

void ModelConfig::validate() const {
  if (base_channels <= 0) throw ConfigError("ModelConfig: base_channels must be positive");
  if (num_classes < 2) throw ConfigError("ModelConfig: num_classes must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ModelConfig: dropout must lie in [0, 1)");
  if (ssn_sub_bands < 1) throw ConfigError("ModelConfig: ssn_sub_bands must be >= 1");
  if (resnorm_lambda < 0.0) throw ConfigError("ModelConfig: resnorm_lambda must be >= 0");
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

template <typename T>
TensorPtr<T> he_normal(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng rng) {
  auto t = make_tensor<T>(std::move(shape), /*requires_grad=*/true);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t->data) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
struct Builder {
  ModelGraph<T>* g;
  Rng* rng;

  void add_param(const std::string& name, const TensorPtr<T>& t, bool conv_weight,
                 bool conv_bias) {
    g->params.push_back({name, t, conv_weight, conv_bias, conv_weight});
  }

  Conv2dLayer<T> conv(const std::string& name, std::int64_t cin, std::int64_t cout,
                      std::int64_t kf, std::int64_t kt, std::int64_t sf, std::int64_t st,
                      std::int64_t pf, std::int64_t pt, std::int64_t groups, bool with_bias) {
    Conv2dLayer<T> layer;
    layer.name = name;
    const std::int64_t cin_pg = cin / groups;
    layer.weight = he_normal<T>({cout, cin_pg, kf, kt}, cin_pg * kf * kt,
                                rng->substream(name + ".weight"));
    add_param(name + ".weight", layer.weight, /*conv_weight=*/true, /*conv_bias=*/false);
    if (with_bias) {
      layer.bias = make_tensor<T>({cout}, /*requires_grad=*/true);
      add_param(name + ".bias", layer.bias, /*conv_weight=*/false, /*conv_bias=*/true);
    }
    layer.stride_f = sf;
    layer.stride_t = st;
    layer.pad_f = pf;
    layer.pad_t = pt;
    layer.groups = groups;
    return layer;
  }

  NormLayer<T> norm(const std::string& name, std::int64_t channels, std::int64_t sub_bands) {
    NormLayer<T> layer;
    layer.name = name;
    layer.sub_bands = sub_bands;
    const std::int64_t n = channels * sub_bands;
    layer.gamma = full_tensor<T>({n}, T(1), /*requires_grad=*/true);
    layer.beta = make_tensor<T>({n}, /*requires_grad=*/true);
    layer.running_mean = make_tensor<T>({n});
    layer.running_var = full_tensor<T>({n}, T(1));
    add_param(name + ".gamma", layer.gamma, false, false);
    add_param(name + ".beta", layer.beta, false, false);
    g->buffers.push_back({name + ".running_mean", layer.running_mean, false, false, false});
    g->buffers.push_back({name + ".running_var", layer.running_var, false, false, false});
    return layer;
  }

  BcResBlock<T> block(const std::string& name, std::int64_t cin, std::int64_t cout,
                      const ModelConfig& cfg) {
    BcResBlock<T> b;
    b.transition = cin != cout;
    b.dropout_p = cfg.dropout;
    if (b.transition) {
      b.adapter = conv(name + ".adapter.conv", cin, cout, 1, 1, 1, 1, 0, 0, 1, false);
      b.adapter_bn = norm(name + ".adapter.bn", cout, 1);
    }
    b.freq_dw = conv(name + ".freq_dw.conv", cout, cout, 3, 1, 1, 1, 1, 0, cout, false);
    b.ssn = norm(name + ".ssn", cout, cfg.ssn_sub_bands);
    b.temp_dw = conv(name + ".temp_dw.conv", cout, cout, 1, 3, 1, 1, 0, 1, cout, false);
    b.bn = norm(name + ".bn", cout, 1);
    b.pointwise = conv(name + ".pointwise.conv", cout, cout, 1, 1, 1, 1, 0, 0, 1, false);
    return b;
  }
};

}  // namespace

template <typename T>
ModelGraph<T> build_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelGraph<T> g;
  g.cfg = cfg;
  Builder<T> b{&g, &rng};

  const std::int64_t stem_out = 2 * cfg.base_channels;
  g.stem = b.conv("stem.conv", 1, stem_out, 5, 5, 2, 2, 2, 2, 1, false);
  g.stem_bn = b.norm("stem.bn", stem_out, 1);

  const auto widths = cfg.stage_channels();
  const auto& repeats = ModelConfig::stage_repeats();
  std::int64_t cin = stem_out;
  g.stages.resize(widths.size());
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const std::int64_t cout = widths[s];
    for (std::int64_t r = 0; r < repeats[s]; ++r) {
      const std::string name =
          "stage" + std::to_string(s + 1) + ".block" + std::to_string(r);
      g.stages[s].push_back(b.block(name, cin, cout, cfg));
      cin = cout;
    }
  }
  g.classifier = b.conv("classifier", cin, cfg.num_classes, 1, 1, 1, 1, 0, 0, 1, true);
  return g;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
TensorPtr<T> f16_rounded_copy(const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    out->data[i] = static_cast<T>(f16_round(static_cast<float>(x->data[i])));
  }
  return out;
}

template <typename T>
TensorPtr<T> conv_forward(const Conv2dLayer<T>& layer, const TensorPtr<T>& x,
                          const ForwardCtx<T>& ctx) {
  TensorPtr<T> w = layer.weight;
  TensorPtr<T> bias = layer.bias;
  if (ctx.compression && ctx.compression->active) {
    w = fake_quant(w, ctx.compression->conv_bits);
    if (bias) bias = fp16_round_op(bias);
  }
  return conv2d(x, w, bias, layer.stride_f, layer.stride_t, layer.pad_f, layer.pad_t,
                layer.groups);
}

template <typename T>
TensorPtr<T> norm_forward(const NormLayer<T>& layer, const TensorPtr<T>& x,
                          const ForwardCtx<T>& ctx) {
  TensorPtr<T> gamma = layer.gamma;
  TensorPtr<T> beta = layer.beta;
  TensorPtr<T> rm = layer.running_mean;
  TensorPtr<T> rv = layer.running_var;
  if (ctx.compression && ctx.compression->active) {
    gamma = fp16_round_op(gamma);
    beta = fp16_round_op(beta);
    if (!ctx.training) {
      // Eval statistics are served in the precision the checkpoint stores.
      rm = f16_rounded_copy(rm);
      rv = f16_rounded_copy(rv);
    }
  }
  return batch_norm_grouped(x, gamma, beta, rm, rv, layer.sub_bands, layer.momentum,
                            ctx.training, layer.eps);
}

template <typename T>
TensorPtr<T> placement(const TensorPtr<T>& x, const ModelConfig& cfg) {
  switch (cfg.norm_mode) {
    case NormMode::kResNorm:
      return res_norm(x, cfg.resnorm_lambda);
    case NormMode::kFreqIn:
      return freq_in(x);
    case NormMode::kNone:
      return x;
  }
  throw ConfigError("unknown norm mode");
}

template <typename T>
void capture(const ForwardCtx<T>& ctx, const std::string& name, const TensorPtr<T>& x) {
  if (ctx.capture) (*ctx.capture)[name] = x;
}

}  // namespace

template <typename T>
TensorPtr<T> bc_resblock_forward(const BcResBlock<T>& b, const TensorPtr<T>& x,
                                 const ForwardCtx<T>& ctx) {
  TensorPtr<T> xin = x;
  if (b.transition) {
    xin = relu(norm_forward(b.adapter_bn, conv_forward(b.adapter, x, ctx), ctx));
  }
  auto f2 = norm_forward(b.ssn, conv_forward(b.freq_dw, xin, ctx), ctx);
  auto aux = pool2d(f2, PoolKind::kAvg, f2->shape[2], 1, 1, 1);  // {N,C,1,T}
  auto f1 = conv_forward(b.temp_dw, aux, ctx);
  f1 = swish(norm_forward(b.bn, f1, ctx));
  f1 = conv_forward(b.pointwise, f1, ctx);
  if (ctx.training && b.dropout_p > 0.0) {
    if (!ctx.rng) throw ConfigError("training forward requires an rng for dropout");
    f1 = dropout(f1, b.dropout_p, /*training=*/true, *ctx.rng);
  }
  auto bc = broadcast_freq(f1, f2->shape[2]);
  auto y = b.transition ? add(f2, bc) : add(add(xin, f2), bc);
  return relu(y);
}

template <typename T>
TensorPtr<T> ModelGraph<T>::forward(const TensorPtr<T>& input, const ForwardCtx<T>& ctx) const {
  if (input->shape.size() != 4 || input->shape[1] != 1) {
    throw ConfigError("model forward: expected {N,1,F,T} input");
  }
  auto x = placement(input, cfg);
  capture(ctx, "input_norm", x);
  if (ctx.training && ctx.spec_aug && ctx.spec_aug->specaugment_enabled) {
    if (!ctx.rng) throw ConfigError("spec_augment requires an rng");
    x = spec_augment(x, *ctx.spec_aug, *ctx.rng);
  }
  x = relu(norm_forward(stem_bn, conv_forward(stem, x, ctx), ctx));
  capture(ctx, "stem", x);

  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (const auto& blk : stages[s]) x = bc_resblock_forward(blk, x, ctx);
    if (s == 0 || s == 1) x = pool2d(x, PoolKind::kMax, 2, 2, 2, 2);
    x = placement(x, cfg);
    capture(ctx, "stage" + std::to_string(s + 1), x);
  }

  x = conv_forward(classifier, x, ctx);
  capture(ctx, "logit_map", x);
  x = pool2d(x, PoolKind::kAvg, x->shape[2], x->shape[3], 1, 1);
  x = reshape(x, {x->shape[0], cfg.num_classes});
  capture(ctx, "logits", x);
  return x;
}

template <typename T>
TensorPtr<T> ModelGraph<T>::find_param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p.tensor;
  }
  for (const auto& p : buffers) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("unknown parameter: " + name);
}

template <typename T>
void ModelGraph<T>::set_requires_grad(bool value) {
  for (auto& p : params) p.tensor->requires_grad = value;
}

template <typename T>
void ModelGraph<T>::zero_grads() {
  for (auto& p : params) p.tensor->zero_grad();
}

template <typename T>
std::vector<std::vector<T>> ModelGraph<T>::snapshot_state() const {
  std::vector<std::vector<T>> out;
  out.reserve(params.size() + buffers.size());
  for (const auto& p : params) out.push_back(p.tensor->data);
  for (const auto& p : buffers) out.push_back(p.tensor->data);
  return out;
}

template <typename T>
void ModelGraph<T>::restore_state(const std::vector<std::vector<T>>& state) {
  if (state.size() != params.size() + buffers.size()) {
    throw ConfigError("restore_state: snapshot layout mismatch");
  }
  std::size_t i = 0;
  for (auto& p : params) p.tensor->data = state[i++];
  for (auto& p : buffers) p.tensor->data = state[i++];
}

ModelGraph<double> model_to_double(const ModelGraph<float>& g) {
  Rng rng(0);
  auto out = build_model<double>(g.cfg, rng);
  for (std::size_t i = 0; i < g.params.size(); ++i) {
    auto& dst = out.params[i].tensor->data;
    const auto& src = g.params[i].tensor->data;
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<double>(src[k]);
  }
  for (std::size_t i = 0; i < g.buffers.size(); ++i) {
    auto& dst = out.buffers[i].tensor->data;
    const auto& src = g.buffers[i].tensor->data;
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<double>(src[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural analysis
// ---------------------------------------------------------------------------

std::vector<SpatialDescriptor> spatial_chain(const ModelConfig& cfg) {
  std::vector<SpatialDescriptor> chain;
  chain.push_back({"stem.conv", 5, 5, 2, 2, 2, 2, false});
  const auto& repeats = ModelConfig::stage_repeats();
  for (std::size_t s = 0; s < repeats.size(); ++s) {
    for (std::int64_t r = 0; r < repeats[s]; ++r) {
      const std::string base = "stage" + std::to_string(s + 1) + ".block" + std::to_string(r);
      chain.push_back({base + ".freq_dw", 3, 1, 1, 1, 1, 0, false});
      chain.push_back({base + ".temp_dw", 1, 3, 1, 1, 0, 1, false});
    }
    if (s == 0 || s == 1) {
      chain.push_back({"pool" + std::to_string(s + 1), 2, 2, 2, 2, 0, 0, true});
    }
  }
  chain.push_back({"classifier", 1, 1, 1, 1, 0, 0, false});
  return chain;
}

RfResult receptive_field_of_chain(const std::vector<SpatialDescriptor>& chain,
                                  bool include_pool_extent) {
  RfResult rf;
  std::int64_t jump_f = 1, jump_t = 1;
  for (const auto& d : chain) {
    const std::int64_t kf = (d.is_pool && !include_pool_extent) ? 1 : d.kf;
    const std::int64_t kt = (d.is_pool && !include_pool_extent) ? 1 : d.kt;
    rf.freq += (kf - 1) * jump_f;
    rf.time += (kt - 1) * jump_t;
    jump_f *= d.sf;
    jump_t *= d.st;
  }
  return rf;
}

RfResult receptive_field(const ModelConfig& cfg, bool include_pool_extent) {
  RfResult rf;
  std::int64_t jump_f = 1, jump_t = 1;
  for (const auto& d : spatial_chain(cfg)) {
    const std::int64_t kf = (d.is_pool && !include_pool_extent) ? 1 : d.kf;
    const std::int64_t kt = (d.is_pool && !include_pool_extent) ? 1 : d.kt;
    rf.freq += (kf - 1) * jump_f;
    rf.time += (kt - 1) * jump_t;
    jump_f *= d.sf;
    jump_t *= d.st;
  }
  return rf;
}

template <typename T>
RfResult receptive_field(const ModelGraph<T>& g, bool include_pool_extent) {
  return receptive_field(g.cfg, include_pool_extent);
}

std::pair<std::int64_t, std::int64_t> rf_input_interval(const ModelConfig& cfg, bool freq_axis,
                                                        std::int64_t out_index) {
  // Compose output -> input interval maps from the last layer backwards:
  // o covers [o*J + A, o*J + B].
  std::int64_t jump = 1, lo = 0, hi = 0;
  const auto chain = spatial_chain(cfg);
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    const std::int64_t k = freq_axis ? it->kf : it->kt;
    const std::int64_t s = freq_axis ? it->sf : it->st;
    const std::int64_t p = freq_axis ? it->pf : it->pt;
    lo = lo * s - p;
    hi = hi * s - p + k - 1;
    jump *= s;
  }
  return {out_index * jump + lo, out_index * jump + hi};
}

std::vector<std::pair<std::string, std::pair<std::int64_t, std::int64_t>>> stage_extents(
    const ModelConfig& cfg, std::int64_t freq, std::int64_t time) {
  std::vector<std::pair<std::string, std::pair<std::int64_t, std::int64_t>>> rows;
  rows.push_back({"input", {freq, time}});
  for (const auto& d : spatial_chain(cfg)) {
    freq = (freq + 2 * d.pf - d.kf) / d.sf + 1;
    time = (time + 2 * d.pt - d.kt) / d.st + 1;
    rows.push_back({d.name, {freq, time}});
  }
  rows.push_back({"avgpool", {1, 1}});
  return rows;
}

// ---------------------------------------------------------------------------
// Parameter counting
// ---------------------------------------------------------------------------

template <typename T>
ParamCountReport count_params(const ModelGraph<T>& g) {
  ParamCountReport report;
  for (const auto& p : g.params) {
    ParamCountRow row;
    row.name = p.name;
    row.count = p.tensor->size();
    row.conv_split = p.is_conv_weight || p.is_conv_bias;
    report.total += row.count;
    (row.conv_split ? report.conv_total : report.other_total) += row.count;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string ParamCountReport::to_table() const {
  std::ostringstream os;
  os << "parameter                                  count  split\n";
  for (const auto& row : rows) {
    os << row.name;
    for (std::size_t i = row.name.size(); i < 40; ++i) os << ' ';
    std::string c = std::to_string(row.count);
    for (std::size_t i = c.size(); i < 8; ++i) os << ' ';
    os << c << "  " << (row.conv_split ? "conv" : "norm/other") << '\n';
  }
  os << "total " << total << " (conv " << conv_total << ", norm/other " << other_total << ")\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'B', 'C', 'R', 'A'};
constexpr std::uint16_t kCkptVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF16 = 1;
constexpr std::uint8_t kDtypeI8 = 2;
constexpr std::uint8_t kFlagBuffer = 1;
constexpr std::uint8_t kFlagHasScale = 2;

void write_config(std::ostream& os, const ModelConfig& cfg, bool compressed) {
  write_u8(os, compressed ? 1 : 0);
  write_u32(os, static_cast<std::uint32_t>(cfg.base_channels));
  write_u32(os, static_cast<std::uint32_t>(cfg.num_classes));
  write_f32(os, static_cast<float>(cfg.dropout));
  write_u32(os, static_cast<std::uint32_t>(cfg.ssn_sub_bands));
  write_f32(os, static_cast<float>(cfg.resnorm_lambda));
  write_u8(os, static_cast<std::uint8_t>(cfg.norm_mode));
}

ModelConfig read_config(std::istream& is, bool* compressed) {
  *compressed = read_u8(is, "compressed flag") != 0;
  ModelConfig cfg;
  cfg.base_channels = read_u32(is, "base_channels");
  cfg.num_classes = read_u32(is, "num_classes");
  cfg.dropout = read_f32(is, "dropout");
  cfg.ssn_sub_bands = read_u32(is, "ssn_sub_bands");
  cfg.resnorm_lambda = read_f32(is, "resnorm_lambda");
  const std::uint8_t mode = read_u8(is, "norm_mode");
  if (mode > 2) throw IoError("checkpoint: bad norm_mode tag " + std::to_string(mode));
  cfg.norm_mode = static_cast<NormMode>(mode);
  return cfg;
}

void write_entry_header(std::ostream& os, const std::string& name, std::uint8_t dtype,
                        std::uint8_t flags, const std::vector<std::int64_t>& shape) {
  write_u16(os, static_cast<std::uint16_t>(name.size()));
  write_bytes(os, name.data(), name.size());
  write_u8(os, dtype);
  write_u8(os, flags);
  write_u8(os, static_cast<std::uint8_t>(shape.size()));
  for (const auto d : shape) write_u32(os, static_cast<std::uint32_t>(d));
}

void write_f32_entry(std::ostream& os, const ParamEntry<float>& p, bool buffer) {
  write_entry_header(os, p.name, kDtypeF32, buffer ? kFlagBuffer : 0, p.tensor->shape);
  for (const float v : p.tensor->data) write_f32(os, v);
}

void write_f16_entry(std::ostream& os, const ParamEntry<float>& p, bool buffer) {
  write_entry_header(os, p.name, kDtypeF16, buffer ? kFlagBuffer : 0, p.tensor->shape);
  for (const float v : p.tensor->data) write_u16(os, f32_to_f16(v));
}

}  // namespace

void save_checkpoint(const ModelGraph<float>& g, const std::string& path) {
  std::ostringstream os(std::ios::binary);
  write_bytes(os, kCkptMagic, 4);
  write_u16(os, kCkptVersion);
  write_config(os, g.cfg, /*compressed=*/false);
  write_u32(os, static_cast<std::uint32_t>(g.params.size() + g.buffers.size()));
  for (const auto& p : g.params) write_f32_entry(os, p, false);
  for (const auto& p : g.buffers) write_f32_entry(os, p, true);
  atomic_write_file(path, os.str());
}

void save_checkpoint_compressed(const ModelGraph<float>& g, const CompressionState& state,
                                const std::string& path) {
  std::ostringstream os(std::ios::binary);
  write_bytes(os, kCkptMagic, 4);
  write_u16(os, kCkptVersion);
  write_config(os, g.cfg, /*compressed=*/true);
  write_u32(os, static_cast<std::uint32_t>(g.params.size() + g.buffers.size()));
  for (const auto& p : g.params) {
    if (p.is_conv_weight) {
      const float scale = symmetric_scale(*p.tensor, state.conv_bits);
      write_entry_header(os, p.name, kDtypeI8, kFlagHasScale, p.tensor->shape);
      for (const float v : p.tensor->data) {
        write_u8(os, static_cast<std::uint8_t>(quantize_symmetric(v, scale, state.conv_bits)));
      }
      write_f32(os, scale);
    } else {
      write_f16_entry(os, p, false);
    }
  }
  for (const auto& p : g.buffers) write_f16_entry(os, p, true);
  atomic_write_file(path, os.str());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  read_bytes(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw IoError("bad checkpoint magic at offset 0: " + path);
  }
  const std::uint16_t version = read_u16(is, "checkpoint version");
  if (version != kCkptVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  bool compressed = false;
  const ModelConfig cfg = read_config(is, &compressed);

  Rng rng(0);
  LoadedCheckpoint out{build_model<float>(cfg, rng), compressed, {}, {}};
  const std::uint32_t n_entries = read_u32(is, "entry count");

  for (std::uint32_t e = 0; e < n_entries; ++e) {
    const auto offset = static_cast<std::int64_t>(is.tellg());
    try {
      const std::uint16_t name_len = read_u16(is, "entry name length");
      std::string name(name_len, '\0');
      read_bytes(is, name.data(), name_len, "entry name");
      const std::uint8_t dtype = read_u8(is, "entry dtype");
      const std::uint8_t flags = read_u8(is, "entry flags");
      const std::uint8_t rank = read_u8(is, "entry rank");
      std::vector<std::int64_t> shape(rank);
      for (auto& d : shape) d = read_u32(is, "entry dim");

      TensorPtr<float> target = out.model.find_param(name);
      if (target->shape != shape) {
        throw IoError("entry '" + name + "' shape mismatch");
      }
      if (dtype == kDtypeF32) {
        for (auto& v : target->data) v = read_f32(is, "f32 payload");
      } else if (dtype == kDtypeF16) {
        for (auto& v : target->data) v = f16_to_f32(read_u16(is, "f16 payload"));
      } else if (dtype == kDtypeI8) {
        std::vector<std::int8_t> q(target->data.size());
        read_bytes(is, q.data(), q.size(), "i8 payload");
        if (!(flags & kFlagHasScale)) throw IoError("i8 entry '" + name + "' missing scale");
        const float qscale = read_f32(is, "quant scale");
        std::vector<std::uint8_t> mask(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) {
          target->data[i] = static_cast<float>(q[i]) * qscale;
          mask[i] = q[i] != 0 ? 1 : 0;
        }
        out.scales[name] = qscale;
        out.masks[name] = std::move(mask);
      } else {
        throw IoError("entry '" + name + "' has unknown dtype tag " + std::to_string(dtype));
      }
      if ((flags & kFlagHasScale) && dtype != kDtypeI8) {
        read_f32(is, "unexpected scale");
      }
    } catch (const IoError& err) {
      throw IoError("checkpoint format error in entry " + std::to_string(e) + " at offset " +
                    std::to_string(offset) + ": " + err.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

template struct ModelGraph<float>;
template struct ModelGraph<double>;
template ModelGraph<float> build_model<float>(const ModelConfig&, Rng&);
template ModelGraph<double> build_model<double>(const ModelConfig&, Rng&);
template ParamCountReport count_params<float>(const ModelGraph<float>&);
template ParamCountReport count_params<double>(const ModelGraph<double>&);
template RfResult receptive_field<float>(const ModelGraph<float>&, bool);
template RfResult receptive_field<double>(const ModelGraph<double>&, bool);
template TensorPtr<float> bc_resblock_forward<float>(const BcResBlock<float>&,
                                                     const TensorPtr<float>&,
                                                     const ForwardCtx<float>&);
template TensorPtr<double> bc_resblock_forward<double>(const BcResBlock<double>&,
                                                       const TensorPtr<double>&,
                                                       const ForwardCtx<double>&);

}  // namespace bcres
