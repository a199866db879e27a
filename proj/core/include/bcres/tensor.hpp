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
#ifndef BCRES_TENSOR_HPP_
#define BCRES_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bcres/common.hpp"

namespace bcres {

// Dense N-d tensor with optional reverse-mode gradient. Feature maps are
// rank-4 {batch, channel, frequency, time}, row-major, time fastest.
//
// Tensors are immutable once produced by an op; the optimizer's in-place
// parameter update is the only sanctioned mutation. Training runs in float;
// the same ops instantiate with double for gradient checking.
template <typename T>
struct Tensor : std::enable_shared_from_this<Tensor<T>> {
  std::vector<std::int64_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // same length as data once ensure_grad() ran
  bool requires_grad = false;

  // Reverse-mode bookkeeping. `parents` keeps the inputs alive; backward_fn
  // scatters this node's grad into its parents' grads (additive across
  // fan-out). Leaves have no backward_fn.
  const char* op = "leaf";
  std::vector<std::shared_ptr<Tensor>> parents;
  std::function<void()> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t extent(int axis) const { return shape.at(static_cast<std::size_t>(axis)); }

  std::int64_t index4(std::int64_t n, std::int64_t c, std::int64_t f, std::int64_t t) const {
    return ((n * shape[1] + c) * shape[2] + f) * shape[3] + t;
  }
  T& at4(std::int64_t n, std::int64_t c, std::int64_t f, std::int64_t t) {
    return data[static_cast<std::size_t>(index4(n, c, f, t))];
  }
  const T& at4(std::int64_t n, std::int64_t c, std::int64_t f, std::int64_t t) const {
    return data[static_cast<std::size_t>(index4(n, c, f, t))];
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

std::int64_t shape_size(const std::vector<std::int64_t>& shape);

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::int64_t> shape, bool requires_grad = false);

template <typename T>
TensorPtr<T> full_tensor(std::vector<std::int64_t> shape, T value, bool requires_grad = false);

template <typename T>
TensorPtr<T> tensor_from(std::vector<std::int64_t> shape, std::vector<T> values,
                         bool requires_grad = false);

// Converts between precisions (data only; grads and tape are not carried).
TensorPtr<double> to_double(const TensorPtr<float>& x);
TensorPtr<float> to_float(const TensorPtr<double>& x);

// ---------------------------------------------------------------------------
// Tape control
// ---------------------------------------------------------------------------

bool grad_enabled();

// RAII guard disabling tape construction (evaluation forwards).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Runs reverse-mode accumulation from a scalar root. Visits each node exactly
// once in reverse topological order. With check_finite set, throws
// NumericError naming the op whose output turned non-finite.
template <typename T>
void backward(const TensorPtr<T>& root, bool check_finite = false);

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

// 2-D correlation over {frequency, time}. Weight shape {Cout, Cin/groups, KF,
// KT}; bias may be null. Covers regular (groups=1), depthwise
// (groups=channels) and pointwise (1x1) cases. Output extents follow
// floor((in + 2*pad - k) / stride) + 1. Zero padding.
template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& bias,
                    std::int64_t stride_f, std::int64_t stride_t, std::int64_t pad_f,
                    std::int64_t pad_t, std::int64_t groups);

enum class PoolKind { kMax, kAvg };

// Windowed pooling, no padding: output extent floor((in - window)/stride)+1.
// Max backward routes to the argmax (first occurrence in row-major window
// order on ties); avg distributes uniformly.
template <typename T>
TensorPtr<T> pool2d(const TensorPtr<T>& x, PoolKind kind, std::int64_t win_f, std::int64_t win_t,
                    std::int64_t stride_f, std::int64_t stride_t);

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x);

// swish(v) = v * sigmoid(v)
template <typename T>
TensorPtr<T> swish(const TensorPtr<T>& x);

// Inverted dropout: survivors scaled by 1/(1-p); identity when not training.
template <typename T>
TensorPtr<T> dropout(const TensorPtr<T>& x, double p, bool training, Rng& rng);

template <typename T>
TensorPtr<T> identity(const TensorPtr<T>& x);

enum class ActKind { kRelu, kSwish, kDropout, kIdentity };

template <typename T>
TensorPtr<T> pointwise_activation(const TensorPtr<T>& x, ActKind kind, double p = 0.0,
                                  bool training = false, Rng* rng = nullptr);

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& x, T alpha);

// Elementwise multiply by a constant (non-differentiated) mask.
template <typename T>
TensorPtr<T> mul_mask(const TensorPtr<T>& x, const std::vector<T>& mask);

// {N,C,1,T} -> {N,C,F,T}; backward sums over the broadcast axis.
template <typename T>
TensorPtr<T> broadcast_freq(const TensorPtr<T>& x, std::int64_t freq);

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& x, std::vector<std::int64_t> new_shape);

// Sum of all elements -> scalar {1}.
template <typename T>
TensorPtr<T> sum_all(const TensorPtr<T>& x);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradcheckOptions {
  double eps = 1e-4;
  // 0 = check every coordinate; otherwise a seeded random subset per tensor.
  std::int64_t max_coords_per_tensor = 0;
  std::uint64_t coord_seed = 17;
  // Coordinates whose error stays above early_exit are re-measured at
  // eps/8^k, keeping the smallest error. A relu/max-pool kink inside the
  // perturbation radius produces a one-sided spike that vanishes as eps
  // shrinks; a wrong analytic derivative survives every radius.
  int shrink_retries = 2;
  double early_exit = 1e-6;
};

// f must map the inputs to a scalar tensor (sum-reduced). Returns the max
// over checked coordinates of |analytic - central difference| /
// max(|analytic|, |numeric|, 1e-8). Inputs are restored on return. 64-bit
// mode only.
double gradcheck(const std::function<TensorPtr<double>(const std::vector<TensorPtr<double>>&)>& f,
                 const std::vector<TensorPtr<double>>& inputs,
                 const GradcheckOptions& options = {});

}  // namespace bcres

#endif  // BCRES_TENSOR_HPP_
