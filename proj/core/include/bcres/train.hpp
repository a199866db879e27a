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
#ifndef BCRES_TRAIN_HPP_
#define BCRES_TRAIN_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bcres/augment.hpp"
#include "bcres/data.hpp"
#include "bcres/model.hpp"

namespace bcres {

struct CompressionState;

struct TrainConfig {
  std::int64_t epochs = 100;
  std::int64_t batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 0.001;
  double peak_lr = 0.06;
  std::int64_t warmup_epochs = 5;

  // Knowledge distillation (used by the compression fine-tune).
  double kd_temperature = 4.0;
  double kd_weight = 0.5;

  void validate() const;
};

// Linear 0 -> peak over the warmup steps, then cosine to zero:
// peak * 0.5 * (1 + cos(pi * progress)) over the remaining steps.
double lr_at(std::int64_t step, std::int64_t steps_per_epoch, const TrainConfig& cfg);

// Classic momentum SGD with coupled weight decay on conv weights only:
//   v <- momentum * v + grad + wd * param;  param <- param - lr * v
// Pruned coordinates (mask 0) receive no update. Throws NumericError on a
// non-finite gradient, naming the parameter.
struct SgdState {
  std::vector<std::vector<float>> velocity;  // aligned with the param registry
};

void sgd_step(ModelGraph<float>& model, SgdState& state, double lr, const TrainConfig& cfg,
              const CompressionState* compression = nullptr);

// ---------------------------------------------------------------------------
// Losses (fused ops with analytic backward, gradcheckable).
// ---------------------------------------------------------------------------

// Mean over the batch of -sum_k target_k * log softmax(logits)_k.
// Targets are a constant {N*K} row-major distribution table.
template <typename T>
TensorPtr<T> cross_entropy_soft(const TensorPtr<T>& logits, const std::vector<T>& targets);

// (1-w) * CE(student, targets) + w * T^2 * mean_n KL(softmax(teacher/T) ||
// softmax(student/T)). Teacher logits are constants.
template <typename T>
TensorPtr<T> kd_loss(const TensorPtr<T>& student_logits, const std::vector<T>& teacher_logits,
                     const std::vector<T>& targets, double temperature, double weight);

// ---------------------------------------------------------------------------
// Training loop and evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  std::vector<std::string> devices;                // ordered A,B,C,S1..S6 (present ones)
  std::map<std::string, double> accuracy;          // percent per device
  double overall = 0.0;                            // percent over all examples
};

EvalResult evaluate(const ModelGraph<float>& model, const SceneDataset& ds,
                    const CompressionState* compression = nullptr);

struct EpochRecord {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  EvalResult eval;
};

// One metrics line per epoch: "epoch=.. lr=.. train_loss=.. acc.A=.. ...
// overall=..", fixed formatting so reruns are byte-identical.
std::string format_metrics_line(const EpochRecord& rec);
std::string format_metrics_log(const std::vector<EpochRecord>& records);

struct TrainResult {
  std::vector<EpochRecord> records;
  std::vector<std::vector<float>> best_state;  // registry snapshot at best overall
  double best_overall = 0.0;
  std::int64_t best_epoch = -1;
};

struct TrainHooks {
  // Teacher for distillation; when set the loss is kd_loss against its
  // eval-mode logits on the same (augmented) batch.
  const ModelGraph<float>* teacher = nullptr;
  // Compression fine-tune: fake-quant forward + masked updates.
  const CompressionState* compression = nullptr;
};

// Runs the full schedule; the model is trained in place. Per-epoch test
// accuracy is recorded and the best-overall state kept. All randomness
// derives from `rng`.
TrainResult train(ModelGraph<float>& model, const SceneDataset& ds, const TrainConfig& cfg,
                  const AugmentConfig& aug, Rng& rng, const TrainHooks& hooks = {});

}  // namespace bcres

#endif  // BCRES_TRAIN_HPP_
