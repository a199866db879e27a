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
#include "bcres/compress.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bcres {

std::int64_t CompressionState::nonzero_conv_count() const {
  std::int64_t n = 0;
  for (const auto& [name, mask] : masks) {
    for (const auto m : mask) n += m != 0;
  }
  return n;
}

std::int64_t CompressionState::masked_total() const {
  std::int64_t n = 0;
  for (const auto& [name, mask] : masks) n += static_cast<std::int64_t>(mask.size());
  return n;
}

// ---------------------------------------------------------------------------
// Quantizers
// ---------------------------------------------------------------------------

template <typename T>
T symmetric_scale(const Tensor<T>& w, int bits) {
  if (bits < 2 || bits > 8) throw ConfigError("symmetric_scale: bits must lie in [2, 8]");
  T max_abs = T(0);
  for (const T v : w.data) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == T(0)) return T(1);  // sentinel: all-zero tensor quantizes to itself
  const auto qmax = static_cast<T>((1 << (bits - 1)) - 1);
  return max_abs / qmax;
}

std::int8_t quantize_symmetric(float w, float scale, int bits) {
  const auto qmax = static_cast<float>((1 << (bits - 1)) - 1);
  // std::nearbyint rounds half to even under the default FE_TONEAREST mode,
  // which this codebase assumes (checkpoints must be bit-portable).
  float q = std::nearbyint(w / scale);
  q = std::min(qmax, std::max(-qmax, q));
  return static_cast<std::int8_t>(q);
}

template <typename T>
TensorPtr<T> fake_quant(const TensorPtr<T>& w, int bits) {
  const T scale = symmetric_scale(*w, bits);
  const auto qmax = static_cast<T>((1 << (bits - 1)) - 1);
  auto out = make_tensor<T>(w->shape);
  auto pass = std::make_shared<std::vector<std::uint8_t>>(w->data.size(), 1);
  for (std::size_t i = 0; i < w->data.size(); ++i) {
    const T q = static_cast<T>(std::nearbyint(static_cast<double>(w->data[i] / scale)));
    if (q > qmax || q < -qmax) {
      (*pass)[i] = 0;  // outside the clamp range: gradient stops
      out->data[i] = std::min(qmax, std::max(-qmax, q)) * scale;
    } else {
      out->data[i] = q * scale;
    }
  }
  if (grad_enabled() && w->requires_grad) {
    out->requires_grad = true;
    out->op = "fake_quant";
    out->parents = {w};
    Tensor<T>* self = out.get();
    auto wc = w;
    out->backward_fn = [self, wc, pass]() {
      wc->ensure_grad();
      for (std::size_t i = 0; i < wc->data.size(); ++i) {
        if ((*pass)[i]) wc->grad[i] += self->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> fp16_round_op(const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    out->data[i] = static_cast<T>(f16_round(static_cast<float>(x->data[i])));
  }
  if (grad_enabled() && x->requires_grad) {
    out->requires_grad = true;
    out->op = "fp16_round";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc]() {
      xc->ensure_grad();
      for (std::size_t i = 0; i < xc->data.size(); ++i) xc->grad[i] += self->grad[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pruning
// ---------------------------------------------------------------------------

CompressionState prune_tensors(
    const std::vector<std::pair<std::string, TensorPtr<float>>>& weights, double ratio) {
  if (ratio < 0.0 || ratio >= 1.0) {
    throw ConfigError("prune: ratio must lie in [0, 1); " + std::to_string(ratio) +
                      " would zero the network");
  }
  CompressionState state;
  state.prune_ratio = ratio;

  // Gather (|w|, tensor index, coordinate) across all conv weights.
  struct Coord {
    float mag;
    std::uint32_t tensor;
    std::uint32_t offset;
  };
  std::vector<Coord> coords;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto& data = weights[i].second->data;
    for (std::size_t k = 0; k < data.size(); ++k) {
      coords.push_back({std::abs(data[k]), static_cast<std::uint32_t>(i),
                        static_cast<std::uint32_t>(k)});
    }
  }
  const auto total = static_cast<std::int64_t>(coords.size());
  const auto keep =
      static_cast<std::int64_t>(std::llround((1.0 - ratio) * static_cast<double>(total)));
  const std::int64_t cut = total - keep;

  // Global threshold: order by magnitude, stable on ties (tensor, offset).
  std::sort(coords.begin(), coords.end(), [](const Coord& a, const Coord& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    if (a.tensor != b.tensor) return a.tensor < b.tensor;
    return a.offset < b.offset;
  });

  for (const auto& [name, tensor] : weights) {
    state.masks[name].assign(tensor->data.size(), 1);
  }
  for (std::int64_t i = 0; i < cut; ++i) {
    const Coord& c = coords[static_cast<std::size_t>(i)];
    weights[c.tensor].second->data[c.offset] = 0.0f;
    state.masks[weights[c.tensor].first][c.offset] = 0;
  }
  return state;
}

CompressionState prune(ModelGraph<float>& model, double ratio) {
  std::vector<std::pair<std::string, TensorPtr<float>>> weights;
  for (const auto& p : model.params) {
    if (p.is_conv_weight) weights.push_back({p.name, p.tensor});
  }
  return prune_tensors(weights, ratio);
}

// ---------------------------------------------------------------------------
// Size accounting
// ---------------------------------------------------------------------------

SizeReport size_report(const ModelGraph<float>& model, const CompressionState& state) {
  SizeReport report;
  for (const auto& p : model.params) {
    SizeRow row;
    row.name = p.name;
    row.params = p.tensor->size();
    if (p.is_conv_weight) {
      const auto it = state.masks.find(p.name);
      if (it != state.masks.end()) {
        row.nonzero = 0;
        for (const auto m : it->second) row.nonzero += m != 0;
      } else {
        row.nonzero = 0;
        for (const float v : p.tensor->data) row.nonzero += v != 0.0f;
      }
      row.bits = 8;
      row.bytes = row.nonzero;
      report.conv_nonzero += row.nonzero;
    } else {
      row.nonzero = row.params;
      row.bits = 16;
      row.bytes = 2 * row.params;
      report.other_params += row.params;
    }
    report.total_bytes += row.bytes;
    report.rows.push_back(std::move(row));
  }
  return report;
}

SizeReport size_report_fp32(const ModelGraph<float>& model) {
  SizeReport report;
  for (const auto& p : model.params) {
    SizeRow row;
    row.name = p.name;
    row.params = p.tensor->size();
    row.nonzero = row.params;
    row.bits = 32;
    row.bytes = 4 * row.params;
    if (p.is_conv_weight) {
      report.conv_nonzero += row.params;
    } else {
      report.other_params += row.params;
    }
    report.total_bytes += row.bytes;
    report.rows.push_back(std::move(row));
  }
  return report;
}

SizeReport size_report_from_checkpoint(const std::string& path) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  if (!loaded.compressed) {
    return size_report_fp32(loaded.model);
  }
  CompressionState state;
  state.active = true;
  state.masks = loaded.masks;
  state.scales = loaded.scales;
  return size_report(loaded.model, state);
}

std::string SizeReport::to_table() const {
  std::ostringstream os;
  os << "parameter                                 params  nonzero  bits   bytes\n";
  for (const auto& row : rows) {
    os << row.name;
    for (std::size_t i = row.name.size(); i < 40; ++i) os << ' ';
    auto pad = [&](std::int64_t v, int width) {
      const std::string s = std::to_string(v);
      for (int i = static_cast<int>(s.size()); i < width; ++i) os << ' ';
      os << s;
    };
    pad(row.params, 8);
    pad(row.nonzero, 9);
    pad(row.bits, 6);
    pad(row.bytes, 8);
    os << '\n';
  }
  os << "total " << total_bytes << " bytes (" << format_fixed(total_kib(), 2) << " KiB): "
     << conv_nonzero << " nonzero 8-bit conv weights, " << other_params
     << " 16-bit other parameters\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

void CompressConfig::validate() const {
  if (prune_ratio < 0.0 || prune_ratio >= 1.0) {
    throw ConfigError("CompressConfig: prune_ratio must lie in [0, 1)");
  }
  if (finetune_epochs < 0) throw ConfigError("CompressConfig: finetune_epochs must be >= 0");
  if (finetune_peak_lr <= 0.0) throw ConfigError("CompressConfig: finetune_peak_lr > 0 required");
}

CompressResult compress_pipeline(ModelGraph<float>& model, const ModelGraph<float>* teacher,
                                 const SceneDataset& ds, const TrainConfig& train_cfg,
                                 const AugmentConfig& aug, const CompressConfig& cfg,
                                 const std::string& out_checkpoint, Rng& rng) {
  cfg.validate();
  if (cfg.kd && !teacher) {
    throw ConfigError("compress_pipeline: KD requested but no teacher given");
  }

  CompressResult result;
  result.state = prune(model, cfg.prune_ratio);
  result.state.active = true;

  if (cfg.finetune_epochs > 0) {
    TrainConfig ft = train_cfg;
    ft.epochs = cfg.finetune_epochs;
    ft.peak_lr = cfg.finetune_peak_lr;
    ft.warmup_epochs = std::min(cfg.finetune_warmup_epochs, cfg.finetune_epochs - 1);
    TrainHooks hooks;
    hooks.compression = &result.state;
    hooks.teacher = cfg.kd ? teacher : nullptr;
    auto ft_result = train(model, ds, ft, aug, rng, hooks);
    result.finetune_log = std::move(ft_result.records);
    // Keep the best-test-accuracy state, the same early-stopping convention
    // the training loop reports.
    if (!ft_result.best_state.empty()) model.restore_state(ft_result.best_state);
  }

  // Record emit-time scales, then write the i8/f16 checkpoint.
  for (const auto& p : model.params) {
    if (p.is_conv_weight) {
      result.state.scales[p.name] = symmetric_scale(*p.tensor, result.state.conv_bits);
    }
  }
  if (!out_checkpoint.empty()) {
    save_checkpoint_compressed(model, result.state, out_checkpoint);
  }
  result.size = size_report(model, result.state);
  result.eval = evaluate(model, ds, &result.state);
  return result;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

template float symmetric_scale<float>(const Tensor<float>&, int);
template double symmetric_scale<double>(const Tensor<double>&, int);
template TensorPtr<float> fake_quant<float>(const TensorPtr<float>&, int);
template TensorPtr<double> fake_quant<double>(const TensorPtr<double>&, int);
template TensorPtr<float> fp16_round_op<float>(const TensorPtr<float>&);
template TensorPtr<double> fp16_round_op<double>(const TensorPtr<double>&);

}  // namespace bcres
