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
#include "bcres/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bcres/compress.hpp"

namespace bcres {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (peak_lr <= 0.0) throw ConfigError("TrainConfig: peak_lr must be positive");
  if (epochs > 0 && warmup_epochs >= epochs) {
    throw ConfigError("TrainConfig: warmup_epochs must be < epochs");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("TrainConfig: momentum in [0, 1)");
  if (kd_temperature <= 0.0) throw ConfigError("TrainConfig: kd_temperature must be positive");
  if (kd_weight < 0.0 || kd_weight > 1.0) throw ConfigError("TrainConfig: kd_weight in [0, 1]");
}

double lr_at(std::int64_t step, std::int64_t steps_per_epoch, const TrainConfig& cfg) {
  if (steps_per_epoch < 1) throw ConfigError("lr_at: steps_per_epoch must be >= 1");
  const std::int64_t total = cfg.epochs * steps_per_epoch;
  const std::int64_t warmup = cfg.warmup_epochs * steps_per_epoch;
  if (step < 0 || step >= total) throw ConfigError("lr_at: step outside the schedule");
  if (step < warmup) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

void sgd_step(ModelGraph<float>& model, SgdState& state, double lr, const TrainConfig& cfg,
              const CompressionState* compression) {
  if (state.velocity.size() != model.params.size()) {
    state.velocity.assign(model.params.size(), {});
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      state.velocity[i].assign(model.params[i].tensor->data.size(), 0.0f);
    }
  }
  const auto mom = static_cast<float>(cfg.momentum);
  const auto flr = static_cast<float>(lr);

  for (std::size_t i = 0; i < model.params.size(); ++i) {
    auto& p = model.params[i];
    if (p.tensor->grad.size() != p.tensor->data.size()) {
      // Parameter unused in this graph (no gradient reached it); skip.
      continue;
    }
    const float wd = p.decay ? static_cast<float>(cfg.weight_decay) : 0.0f;
    const std::vector<std::uint8_t>* mask = nullptr;
    if (compression) {
      const auto it = compression->masks.find(p.name);
      if (it != compression->masks.end()) mask = &it->second;
    }
    auto& vel = state.velocity[i];
    auto& data = p.tensor->data;
    auto& grad = p.tensor->grad;
    for (std::size_t k = 0; k < data.size(); ++k) {
      if (!std::isfinite(grad[k])) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
      if (mask && (*mask)[k] == 0) {
        vel[k] = 0.0f;
        data[k] = 0.0f;  // pruned coordinates stay exactly zero
        continue;
      }
      vel[k] = mom * vel[k] + grad[k] + wd * data[k];
      data[k] -= flr * vel[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void softmax_rows(const std::vector<T>& logits, std::int64_t n, std::int64_t k, double temp,
                  std::vector<T>* out) {
  out->resize(logits.size());
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = logits.data() + r * k;
    T* orow = out->data() + r * k;
    T max_v = row[0];
    for (std::int64_t j = 1; j < k; ++j) max_v = std::max(max_v, row[j]);
    T denom = T(0);
    for (std::int64_t j = 0; j < k; ++j) {
      orow[j] = std::exp((row[j] - max_v) / static_cast<T>(temp));
      denom += orow[j];
    }
    for (std::int64_t j = 0; j < k; ++j) orow[j] /= denom;
  }
}

}  // namespace

template <typename T>
TensorPtr<T> cross_entropy_soft(const TensorPtr<T>& logits, const std::vector<T>& targets) {
  if (logits->shape.size() != 2) throw ConfigError("cross_entropy_soft: logits must be {N, K}");
  const std::int64_t n = logits->shape[0], k = logits->shape[1];
  if (static_cast<std::int64_t>(targets.size()) != n * k) {
    throw ConfigError("cross_entropy_soft: target table size mismatch");
  }
  auto probs = std::make_shared<std::vector<T>>();
  softmax_rows(logits->data, n, k, 1.0, probs.get());

  auto out = make_tensor<T>({1});
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = logits->data.data() + r * k;
    T max_v = row[0];
    for (std::int64_t j = 1; j < k; ++j) max_v = std::max(max_v, row[j]);
    double log_denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      log_denom += std::exp(static_cast<double>(row[j] - max_v));
    }
    log_denom = std::log(log_denom);
    for (std::int64_t j = 0; j < k; ++j) {
      const double log_p = static_cast<double>(row[j] - max_v) - log_denom;
      loss -= static_cast<double>(targets[static_cast<std::size_t>(r * k + j)]) * log_p;
    }
  }
  out->data[0] = static_cast<T>(loss / static_cast<double>(n));

  if (grad_enabled() && logits->requires_grad) {
    out->requires_grad = true;
    out->op = "cross_entropy";
    out->parents = {logits};
    Tensor<T>* self = out.get();
    auto lc = logits;
    auto tgt = std::make_shared<std::vector<T>>(targets);
    out->backward_fn = [self, lc, tgt, probs, n, k]() {
      lc->ensure_grad();
      const T g = self->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < lc->data.size(); ++i) {
        lc->grad[i] += g * ((*probs)[i] - (*tgt)[i]);
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> kd_loss(const TensorPtr<T>& student_logits, const std::vector<T>& teacher_logits,
                     const std::vector<T>& targets, double temperature, double weight) {
  if (temperature <= 0.0) throw ConfigError("kd_loss: temperature must be positive");
  if (weight < 0.0 || weight > 1.0) throw ConfigError("kd_loss: weight must lie in [0, 1]");
  if (student_logits->shape.size() != 2) throw ConfigError("kd_loss: logits must be {N, K}");
  const std::int64_t n = student_logits->shape[0], k = student_logits->shape[1];
  if (static_cast<std::int64_t>(teacher_logits.size()) != n * k) {
    throw ConfigError("kd_loss: teacher logits shape mismatch");
  }

  // CE term reuses the fused op; the KL term is added with its own backward.
  auto ce = cross_entropy_soft(student_logits, targets);

  auto p_teacher = std::make_shared<std::vector<T>>();
  auto p_student = std::make_shared<std::vector<T>>();
  softmax_rows(teacher_logits, n, k, temperature, p_teacher.get());
  softmax_rows(student_logits->data, n, k, temperature, p_student.get());

  double kl = 0.0;
  for (std::size_t i = 0; i < p_teacher->size(); ++i) {
    const double p = (*p_teacher)[i];
    if (p > 0.0) kl += p * (std::log(p) - std::log(std::max(static_cast<double>((*p_student)[i]), 1e-300)));
  }
  kl /= static_cast<double>(n);

  auto out = make_tensor<T>({1});
  out->data[0] = static_cast<T>((1.0 - weight) * static_cast<double>(ce->data[0]) +
                                weight * temperature * temperature * kl);

  if (grad_enabled() && student_logits->requires_grad) {
    out->requires_grad = true;
    out->op = "kd_loss";
    out->parents = {student_logits, ce};
    Tensor<T>* self = out.get();
    auto sc = student_logits;
    auto cec = ce;
    out->backward_fn = [self, sc, cec, p_teacher, p_student, n, temperature, weight]() {
      const T g = self->grad[0];
      // CE part flows through the fused CE node.
      cec->ensure_grad();
      cec->grad[0] += g * static_cast<T>(1.0 - weight);
      // d/ds of T^2 * mean KL(p_t || softmax(s/T)) = (T / N) * (p_s - p_t).
      sc->ensure_grad();
      const T coeff = g * static_cast<T>(weight * temperature / static_cast<double>(n));
      for (std::size_t i = 0; i < sc->data.size(); ++i) {
        sc->grad[i] += coeff * ((*p_student)[i] - (*p_teacher)[i]);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate(const ModelGraph<float>& model, const SceneDataset& ds,
                    const CompressionState* compression) {
  const auto test = ds.split_view(Split::kTest);
  if (test.empty()) throw ConfigError("evaluate: empty test split");

  std::map<std::string, std::pair<std::int64_t, std::int64_t>> per_device;  // correct, total
  std::int64_t correct = 0;

  NoGradGuard ng;
  ForwardCtx<float> ctx;
  ctx.compression = compression;

  // Forward in batches of same-shaped features.
  constexpr std::size_t kEvalBatch = 64;
  std::size_t begin = 0;
  while (begin < test.size()) {
    const std::int64_t freq = test[begin]->feature->shape[2];
    const std::int64_t time = test[begin]->feature->shape[3];
    std::size_t end = begin;
    while (end < test.size() && end - begin < kEvalBatch &&
           test[end]->feature->shape[2] == freq && test[end]->feature->shape[3] == time) {
      ++end;
    }
    const auto bsz = static_cast<std::int64_t>(end - begin);
    auto batch = make_tensor<float>({bsz, 1, freq, time});
    for (std::int64_t i = 0; i < bsz; ++i) {
      std::copy(test[begin + static_cast<std::size_t>(i)]->feature->data.begin(),
                test[begin + static_cast<std::size_t>(i)]->feature->data.end(),
                batch->data.begin() + i * freq * time);
    }
    const auto logits = model.forward(batch, ctx);
    const std::int64_t k = logits->shape[1];
    for (std::int64_t i = 0; i < bsz; ++i) {
      const float* row = logits->data.data() + i * k;
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < k; ++j) {
        if (row[j] > row[best]) best = j;
      }
      const SceneExample* ex = test[begin + static_cast<std::size_t>(i)];
      auto& entry = per_device[ex->device];
      entry.second += 1;
      if (best == ex->scene_class) {
        entry.first += 1;
        ++correct;
      }
    }
    begin = end;
  }

  EvalResult out;
  for (const auto& token : device_tokens()) {
    const auto it = per_device.find(token);
    if (it == per_device.end()) continue;
    out.devices.push_back(token);
    out.accuracy[token] =
        100.0 * static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
  }
  out.overall = 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
  return out;
}

// ---------------------------------------------------------------------------
// Metrics formatting
// ---------------------------------------------------------------------------

std::string format_metrics_line(const EpochRecord& rec) {
  std::ostringstream os;
  os << "epoch=" << rec.epoch << " lr=" << format_fixed(rec.lr, 6) << " train_loss="
     << format_fixed(rec.train_loss, 6);
  for (const auto& device : rec.eval.devices) {
    os << " acc." << device << "=" << format_fixed(rec.eval.accuracy.at(device), 2);
  }
  os << " overall=" << format_fixed(rec.eval.overall, 2);
  return os.str();
}

std::string format_metrics_log(const std::vector<EpochRecord>& records) {
  std::ostringstream os;
  for (const auto& rec : records) os << format_metrics_line(rec) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct Batch {
  TensorPtr<float> features;    // {B, 1, F, T}
  std::vector<float> targets;   // {B * K}
};

// Roll + mixup on raw features, per the augmentation ordering: model-side
// spec-augment follows the input normalization inside forward().
Batch assemble_batch(const SceneDataset& ds, const std::vector<const SceneExample*>& train,
                     const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                     const AugmentConfig& aug, Rng& rng) {
  const std::int64_t bsz = static_cast<std::int64_t>(end - begin);
  const std::int64_t k = ds.num_classes;
  const auto& first = train[order[begin]]->feature;
  const std::int64_t freq = first->shape[2], time = first->shape[3];

  std::vector<TensorPtr<float>> rolled(static_cast<std::size_t>(bsz));
  std::vector<std::vector<float>> labels(static_cast<std::size_t>(bsz));
  for (std::int64_t i = 0; i < bsz; ++i) {
    const SceneExample* ex = train[order[begin + static_cast<std::size_t>(i)]];
    if (ex->feature->shape[2] != freq || ex->feature->shape[3] != time) {
      throw ConfigError("assemble_batch: inconsistent feature extents");
    }
    const std::int64_t shift = aug.roll_frames > 0
                                   ? rng.uniform_int(-aug.roll_frames, aug.roll_frames)
                                   : 0;
    rolled[static_cast<std::size_t>(i)] = time_roll(ex->feature, shift);
    labels[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(k), 0.0f);
    labels[static_cast<std::size_t>(i)][static_cast<std::size_t>(ex->scene_class)] = 1.0f;
  }

  // Batch-level mixup: one lam per batch, partners from a random permutation.
  const double lam = aug.mixup_enabled ? rng.beta(aug.mixup_alpha, aug.mixup_alpha) : 1.0;
  std::vector<std::size_t> partner(static_cast<std::size_t>(bsz));
  std::iota(partner.begin(), partner.end(), 0);
  for (std::size_t i = partner.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(partner[i - 1], partner[j]);
  }

  Batch batch;
  batch.features = make_tensor<float>({bsz, 1, freq, time});
  batch.targets.assign(static_cast<std::size_t>(bsz * k), 0.0f);
  const auto l = static_cast<float>(lam);
  for (std::int64_t i = 0; i < bsz; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const auto& a = rolled[ii];
    const auto& b = rolled[partner[ii]];
    float* dst = batch.features->data.data() + i * freq * time;
    for (std::int64_t j = 0; j < freq * time; ++j) {
      dst[j] = l * a->data[static_cast<std::size_t>(j)] +
               (1.0f - l) * b->data[static_cast<std::size_t>(j)];
    }
    for (std::int64_t j = 0; j < k; ++j) {
      batch.targets[static_cast<std::size_t>(i * k + j)] =
          l * labels[ii][static_cast<std::size_t>(j)] +
          (1.0f - l) * labels[partner[ii]][static_cast<std::size_t>(j)];
    }
  }
  return batch;
}

}  // namespace

TrainResult train(ModelGraph<float>& model, const SceneDataset& ds, const TrainConfig& cfg,
                  const AugmentConfig& aug, Rng& rng, const TrainHooks& hooks) {
  cfg.validate();
  aug.validate();
  const auto train_view = ds.split_view(Split::kTrain);
  if (train_view.empty()) throw ConfigError("train: empty train split");
  if (ds.split_view(Split::kTest).empty()) throw ConfigError("train: empty test split");

  TrainResult result;
  if (cfg.epochs == 0) return result;

  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(train_view.size()) + cfg.batch_size - 1) / cfg.batch_size;

  model.set_requires_grad(true);
  SgdState sgd;
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = rng.substream(0x45504f43ull + static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(train_view.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j =
          static_cast<std::size_t>(epoch_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    double last_lr = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      Rng batch_rng = epoch_rng.substream(begin);
      Batch batch = assemble_batch(ds, train_view, order, begin, end, aug, batch_rng);

      ForwardCtx<float> ctx;
      ctx.training = true;
      ctx.rng = &batch_rng;
      ctx.spec_aug = &aug;
      ctx.compression = hooks.compression;
      auto logits = model.forward(batch.features, ctx);

      TensorPtr<float> loss;
      if (hooks.teacher) {
        std::vector<float> teacher_logits;
        {
          NoGradGuard ng;
          ForwardCtx<float> tctx;  // eval mode, uncompressed
          teacher_logits = hooks.teacher->forward(batch.features, tctx)->data;
        }
        loss = kd_loss(logits, teacher_logits, batch.targets, cfg.kd_temperature, cfg.kd_weight);
      } else {
        loss = cross_entropy_soft(logits, batch.targets);
      }
      if (!std::isfinite(loss->data[0])) {
        throw NumericError("train: non-finite loss at step " + std::to_string(step));
      }
      loss_sum += loss->data[0];

      model.zero_grads();
      backward(loss);
      const double lr = lr_at(step, steps_per_epoch, cfg);
      last_lr = lr;
      sgd_step(model, sgd, lr, cfg, hooks.compression);
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = last_lr;
    rec.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    rec.eval = evaluate(model, ds, hooks.compression);
    result.records.push_back(rec);

    if (rec.eval.overall > result.best_overall || result.best_epoch < 0) {
      result.best_overall = rec.eval.overall;
      result.best_epoch = rec.epoch;
      result.best_state = model.snapshot_state();
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

template TensorPtr<float> cross_entropy_soft<float>(const TensorPtr<float>&,
                                                    const std::vector<float>&);
template TensorPtr<double> cross_entropy_soft<double>(const TensorPtr<double>&,
                                                      const std::vector<double>&);
template TensorPtr<float> kd_loss<float>(const TensorPtr<float>&, const std::vector<float>&,
                                         const std::vector<float>&, double, double);
template TensorPtr<double> kd_loss<double>(const TensorPtr<double>&, const std::vector<double>&,
                                           const std::vector<double>&, double, double);

}  // namespace bcres
