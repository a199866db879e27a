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
#include "bcres/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace bcres {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
bool any_requires_grad(std::initializer_list<TensorPtr<T>> ts) {
  for (const auto& t : ts) {
    if (t && t->requires_grad) return true;
  }
  return false;
}

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  std::string s = "{";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(t.shape[i]);
  }
  return s + "}";
}

template <typename T>
void require_rank4(const TensorPtr<T>& x, const char* op) {
  if (!x || x->shape.size() != 4) {
    throw ConfigError(std::string(op) + ": expected rank-4 input, got " +
                      (x ? shape_str(*x) : std::string("null")));
  }
}

// Valid output range [lo, hi] such that o*stride - pad + k lies inside
// [0, in_extent) for all o in range.
inline void valid_out_range(std::int64_t out_extent, std::int64_t in_extent, std::int64_t stride,
                            std::int64_t pad, std::int64_t k, std::int64_t* lo, std::int64_t* hi) {
  std::int64_t l = pad - k;
  *lo = l <= 0 ? 0 : (l + stride - 1) / stride;
  std::int64_t h = in_extent - 1 + pad - k;
  *hi = h < 0 ? -1 : std::min(out_extent - 1, h / stride);
}

}  // namespace

std::int64_t shape_size(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (const auto e : shape) {
    if (e < 0) throw ConfigError("negative extent in shape");
    n *= e;
  }
  return n;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<std::int64_t> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor<T>>();
  t->data.assign(static_cast<std::size_t>(shape_size(shape)), T(0));
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
TensorPtr<T> full_tensor(std::vector<std::int64_t> shape, T value, bool requires_grad) {
  auto t = make_tensor<T>(std::move(shape), requires_grad);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

template <typename T>
TensorPtr<T> tensor_from(std::vector<std::int64_t> shape, std::vector<T> values,
                         bool requires_grad) {
  if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
    throw ConfigError("tensor_from: data length does not match shape");
  }
  auto t = std::make_shared<Tensor<T>>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr<double> to_double(const TensorPtr<float>& x) {
  auto out = make_tensor<double>(x->shape, x->requires_grad);
  for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = static_cast<double>(x->data[i]);
  return out;
}

TensorPtr<float> to_float(const TensorPtr<double>& x) {
  auto out = make_tensor<float>(x->shape, x->requires_grad);
  for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = static_cast<float>(x->data[i]);
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& bias,
                    std::int64_t stride_f, std::int64_t stride_t, std::int64_t pad_f,
                    std::int64_t pad_t, std::int64_t groups) {
  require_rank4(x, "conv2d");
  if (!w || w->shape.size() != 4) throw ConfigError("conv2d: weight must be rank 4");
  if (stride_f < 1 || stride_t < 1) throw ConfigError("conv2d: strides must be >= 1");
  if (pad_f < 0 || pad_t < 0) throw ConfigError("conv2d: negative padding");
  if (groups < 1) throw ConfigError("conv2d: groups must be >= 1");

  const std::int64_t batch = x->shape[0], cin = x->shape[1], in_f = x->shape[2], in_t = x->shape[3];
  const std::int64_t cout = w->shape[0], cin_pg = w->shape[1], kf = w->shape[2], kt = w->shape[3];
  if (cin % groups != 0) {
    throw ConfigError("conv2d: input channels " + std::to_string(cin) +
                      " not divisible by groups " + std::to_string(groups) + " (axis 1)");
  }
  if (cout % groups != 0) {
    throw ConfigError("conv2d: output channels " + std::to_string(cout) +
                      " not divisible by groups " + std::to_string(groups) + " (weight axis 0)");
  }
  if (cin_pg != cin / groups) {
    throw ConfigError("conv2d: weight expects " + std::to_string(cin_pg) +
                      " channels per group, input provides " + std::to_string(cin / groups) +
                      " (input axis 1 = " + std::to_string(cin) + ")");
  }
  if (bias && bias->size() != cout) {
    throw ConfigError("conv2d: bias length " + std::to_string(bias->size()) +
                      " != output channels " + std::to_string(cout));
  }
  const std::int64_t out_f = (in_f + 2 * pad_f - kf) / stride_f + 1;
  const std::int64_t out_t = (in_t + 2 * pad_t - kt) / stride_t + 1;
  if (in_f + 2 * pad_f < kf || in_t + 2 * pad_t < kt) {
    throw ConfigError("conv2d: kernel " + std::to_string(kf) + "x" + std::to_string(kt) +
                      " does not fit padded input " + std::to_string(in_f + 2 * pad_f) + "x" +
                      std::to_string(in_t + 2 * pad_t) + " (axes 2,3)");
  }

  auto out = make_tensor<T>({batch, cout, out_f, out_t});
  const std::int64_t cout_pg = cout / groups;
  const T* xd = x->data.data();
  const T* wd = w->data.data();
  T* od = out->data.data();

  const std::int64_t x_cs = in_f * in_t;       // channel stride
  const std::int64_t x_ns = cin * x_cs;        // batch stride
  const std::int64_t o_cs = out_f * out_t;
  const std::int64_t o_ns = cout * o_cs;
  const std::int64_t w_os = cin_pg * kf * kt;  // per-output-channel stride

#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t oc = 0; oc < cout; ++oc) {
      const std::int64_t g = oc / cout_pg;
      T* oplane = od + n * o_ns + oc * o_cs;
      const T bv = bias ? bias->data[static_cast<std::size_t>(oc)] : T(0);
      std::fill(oplane, oplane + o_cs, bv);
      for (std::int64_t icg = 0; icg < cin_pg; ++icg) {
        const T* xplane = xd + n * x_ns + (g * cin_pg + icg) * x_cs;
        const T* wrow = wd + oc * w_os + icg * kf * kt;
        for (std::int64_t dkf = 0; dkf < kf; ++dkf) {
          std::int64_t of_lo, of_hi;
          valid_out_range(out_f, in_f, stride_f, pad_f, dkf, &of_lo, &of_hi);
          for (std::int64_t of = of_lo; of <= of_hi; ++of) {
            const T* xrow = xplane + (of * stride_f - pad_f + dkf) * in_t;
            T* orow = oplane + of * out_t;
            for (std::int64_t dkt = 0; dkt < kt; ++dkt) {
              const T wv = wrow[dkf * kt + dkt];
              std::int64_t ot_lo, ot_hi;
              valid_out_range(out_t, in_t, stride_t, pad_t, dkt, &ot_lo, &ot_hi);
              const T* xrs = xrow - pad_t + dkt;
              if (stride_t == 1) {
                for (std::int64_t ot = ot_lo; ot <= ot_hi; ++ot) orow[ot] += wv * xrs[ot];
              } else {
                for (std::int64_t ot = ot_lo; ot <= ot_hi; ++ot) {
                  orow[ot] += wv * xrs[ot * stride_t];
                }
              }
            }
          }
        }
      }
    }
  }

  if (g_grad_enabled && any_requires_grad<T>({x, w, bias})) {
    out->requires_grad = true;
    out->op = "conv2d";
    out->parents = {x, w};
    if (bias) out->parents.push_back(bias);
    Tensor<T>* self = out.get();
    auto xc = x;
    auto wc = w;
    auto bc = bias;
    out->backward_fn = [self, xc, wc, bc, stride_f, stride_t, pad_f, pad_t, groups, batch, cin,
                        in_f, in_t, cout, cin_pg, kf, kt, out_f, out_t, x_cs, x_ns, o_cs, o_ns,
                        w_os]() {
      const T* gd = self->grad.data();
      const std::int64_t cout_pg2 = cout / groups;

      if (xc->requires_grad) {
        xc->ensure_grad();
        T* dxd = xc->grad.data();
        const T* wd2 = wc->data.data();
#pragma omp parallel for schedule(static)
        for (std::int64_t n = 0; n < batch; ++n) {
          for (std::int64_t oc = 0; oc < cout; ++oc) {
            const std::int64_t g = oc / cout_pg2;
            const T* gplane = gd + n * o_ns + oc * o_cs;
            for (std::int64_t icg = 0; icg < cin_pg; ++icg) {
              T* dxplane = dxd + n * x_ns + (g * cin_pg + icg) * x_cs;
              const T* wrow = wd2 + oc * w_os + icg * kf * kt;
              for (std::int64_t dkf = 0; dkf < kf; ++dkf) {
                std::int64_t of_lo, of_hi;
                valid_out_range(out_f, in_f, stride_f, pad_f, dkf, &of_lo, &of_hi);
                for (std::int64_t of = of_lo; of <= of_hi; ++of) {
                  T* dxrow = dxplane + (of * stride_f - pad_f + dkf) * in_t;
                  const T* grow = gplane + of * out_t;
                  for (std::int64_t dkt = 0; dkt < kt; ++dkt) {
                    const T wv = wrow[dkf * kt + dkt];
                    std::int64_t ot_lo, ot_hi;
                    valid_out_range(out_t, in_t, stride_t, pad_t, dkt, &ot_lo, &ot_hi);
                    T* dxrs = dxrow - pad_t + dkt;
                    for (std::int64_t ot = ot_lo; ot <= ot_hi; ++ot) {
                      dxrs[ot * stride_t] += wv * grow[ot];
                    }
                  }
                }
              }
            }
          }
        }
      }

      if (wc->requires_grad) {
        wc->ensure_grad();
        T* dwd = wc->grad.data();
        const T* xd2 = xc->data.data();
#pragma omp parallel for schedule(static)
        for (std::int64_t oc = 0; oc < cout; ++oc) {
          const std::int64_t g = oc / cout_pg2;
          for (std::int64_t n = 0; n < batch; ++n) {
            const T* gplane = gd + n * o_ns + oc * o_cs;
            for (std::int64_t icg = 0; icg < cin_pg; ++icg) {
              const T* xplane = xd2 + n * x_ns + (g * cin_pg + icg) * x_cs;
              T* dwrow = dwd + oc * w_os + icg * kf * kt;
              for (std::int64_t dkf = 0; dkf < kf; ++dkf) {
                std::int64_t of_lo, of_hi;
                valid_out_range(out_f, in_f, stride_f, pad_f, dkf, &of_lo, &of_hi);
                for (std::int64_t of = of_lo; of <= of_hi; ++of) {
                  const T* xrow = xplane + (of * stride_f - pad_f + dkf) * in_t;
                  const T* grow = gplane + of * out_t;
                  for (std::int64_t dkt = 0; dkt < kt; ++dkt) {
                    std::int64_t ot_lo, ot_hi;
                    valid_out_range(out_t, in_t, stride_t, pad_t, dkt, &ot_lo, &ot_hi);
                    const T* xrs = xrow - pad_t + dkt;
                    T acc = T(0);
                    if (stride_t == 1) {
                      for (std::int64_t ot = ot_lo; ot <= ot_hi; ++ot) acc += grow[ot] * xrs[ot];
                    } else {
                      for (std::int64_t ot = ot_lo; ot <= ot_hi; ++ot) {
                        acc += grow[ot] * xrs[ot * stride_t];
                      }
                    }
                    dwrow[dkf * kt + dkt] += acc;
                  }
                }
              }
            }
          }
        }
      }

      if (bc && bc->requires_grad) {
        bc->ensure_grad();
        T* dbd = bc->grad.data();
        for (std::int64_t oc = 0; oc < cout; ++oc) {
          T acc = T(0);
          for (std::int64_t n = 0; n < batch; ++n) {
            const T* gplane = gd + n * o_ns + oc * o_cs;
            for (std::int64_t i = 0; i < o_cs; ++i) acc += gplane[i];
          }
          dbd[oc] += acc;
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// pool2d
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> pool2d(const TensorPtr<T>& x, PoolKind kind, std::int64_t win_f, std::int64_t win_t,
                    std::int64_t stride_f, std::int64_t stride_t) {
  require_rank4(x, "pool2d");
  if (win_f < 1 || win_t < 1) throw ConfigError("pool2d: zero-size window");
  if (stride_f < 1 || stride_t < 1) throw ConfigError("pool2d: strides must be >= 1");
  const std::int64_t batch = x->shape[0], ch = x->shape[1], in_f = x->shape[2], in_t = x->shape[3];
  if (win_f > in_f || win_t > in_t) {
    throw ConfigError("pool2d: window " + std::to_string(win_f) + "x" + std::to_string(win_t) +
                      " exceeds input " + std::to_string(in_f) + "x" + std::to_string(in_t));
  }
  const std::int64_t out_f = (in_f - win_f) / stride_f + 1;
  const std::int64_t out_t = (in_t - win_t) / stride_t + 1;

  auto out = make_tensor<T>({batch, ch, out_f, out_t});
  const std::int64_t planes = batch * ch;
  const std::int64_t x_cs = in_f * in_t, o_cs = out_f * out_t;

  std::shared_ptr<std::vector<std::int64_t>> argmax;
  if (kind == PoolKind::kMax) {
    argmax = std::make_shared<std::vector<std::int64_t>>(out->data.size());
  }

  for (std::int64_t p = 0; p < planes; ++p) {
    const T* xp = x->data.data() + p * x_cs;
    T* op = out->data.data() + p * o_cs;
    for (std::int64_t of = 0; of < out_f; ++of) {
      for (std::int64_t ot = 0; ot < out_t; ++ot) {
        const std::int64_t f0 = of * stride_f, t0 = ot * stride_t;
        if (kind == PoolKind::kMax) {
          T best = xp[f0 * in_t + t0];
          std::int64_t best_idx = f0 * in_t + t0;
          for (std::int64_t df = 0; df < win_f; ++df) {
            for (std::int64_t dt = 0; dt < win_t; ++dt) {
              const std::int64_t idx = (f0 + df) * in_t + (t0 + dt);
              if (xp[idx] > best) {  // strict: first occurrence wins on ties
                best = xp[idx];
                best_idx = idx;
              }
            }
          }
          op[of * out_t + ot] = best;
          (*argmax)[static_cast<std::size_t>(p * o_cs + of * out_t + ot)] = best_idx;
        } else {
          T acc = T(0);
          for (std::int64_t df = 0; df < win_f; ++df) {
            for (std::int64_t dt = 0; dt < win_t; ++dt) {
              acc += xp[(f0 + df) * in_t + (t0 + dt)];
            }
          }
          op[of * out_t + ot] = acc / static_cast<T>(win_f * win_t);
        }
      }
    }
  }

  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = kind == PoolKind::kMax ? "max_pool2d" : "avg_pool2d";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc, kind, argmax, planes, x_cs, o_cs, out_f, out_t, in_t, win_f,
                        win_t, stride_f, stride_t]() {
      xc->ensure_grad();
      const T* gd = self->grad.data();
      T* dxd = xc->grad.data();
      if (kind == PoolKind::kMax) {
        for (std::int64_t p = 0; p < planes; ++p) {
          for (std::int64_t i = 0; i < o_cs; ++i) {
            dxd[p * x_cs + (*argmax)[static_cast<std::size_t>(p * o_cs + i)]] += gd[p * o_cs + i];
          }
        }
      } else {
        const T inv = T(1) / static_cast<T>(win_f * win_t);
        for (std::int64_t p = 0; p < planes; ++p) {
          T* dxp = dxd + p * x_cs;
          const T* gp = gd + p * o_cs;
          for (std::int64_t of = 0; of < out_f; ++of) {
            for (std::int64_t ot = 0; ot < out_t; ++ot) {
              const T gv = gp[of * out_t + ot] * inv;
              const std::int64_t f0 = of * stride_f, t0 = ot * stride_t;
              for (std::int64_t df = 0; df < win_f; ++df) {
                for (std::int64_t dt = 0; dt < win_t; ++dt) {
                  dxp[(f0 + df) * in_t + (t0 + dt)] += gv;
                }
              }
            }
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// pointwise activations
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
  }
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "relu";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc]() {
      xc->ensure_grad();
      for (std::size_t i = 0; i < xc->data.size(); ++i) {
        if (xc->data[i] > T(0)) xc->grad[i] += self->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> swish(const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  auto sig = std::make_shared<std::vector<T>>(x->data.size());
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-x->data[i]));
    (*sig)[i] = s;
    out->data[i] = x->data[i] * s;
  }
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "swish";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc, sig]() {
      xc->ensure_grad();
      for (std::size_t i = 0; i < xc->data.size(); ++i) {
        const T s = (*sig)[i];
        xc->grad[i] += self->grad[i] * s * (T(1) + xc->data[i] * (T(1) - s));
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> dropout(const TensorPtr<T>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return identity(x);
  auto keep = std::make_shared<std::vector<T>>(x->data.size());
  const T inv_keep = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    (*keep)[i] = rng.uniform() >= p ? inv_keep : T(0);
  }
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] * (*keep)[i];
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "dropout";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc, keep]() {
      xc->ensure_grad();
      for (std::size_t i = 0; i < xc->data.size(); ++i) {
        xc->grad[i] += self->grad[i] * (*keep)[i];
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> identity(const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  out->data = x->data;
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "identity";
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

template <typename T>
TensorPtr<T> pointwise_activation(const TensorPtr<T>& x, ActKind kind, double p, bool training,
                                  Rng* rng) {
  switch (kind) {
    case ActKind::kRelu:
      return relu(x);
    case ActKind::kSwish:
      return swish(x);
    case ActKind::kDropout:
      if (!rng) throw ConfigError("pointwise_activation: dropout requires an rng");
      return dropout(x, p, training, *rng);
    case ActKind::kIdentity:
      return identity(x);
  }
  throw ConfigError("pointwise_activation: unknown kind");
}

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape) {
    throw ConfigError("add: shape mismatch " + shape_str(*a) + " vs " + shape_str(*b));
  }
  auto out = make_tensor<T>(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (g_grad_enabled && any_requires_grad<T>({a, b})) {
    out->requires_grad = true;
    out->op = "add";
    out->parents = {a, b};
    Tensor<T>* self = out.get();
    auto ac = a;
    auto bc = b;
    out->backward_fn = [self, ac, bc]() {
      if (ac->requires_grad) {
        ac->ensure_grad();
        for (std::size_t i = 0; i < ac->data.size(); ++i) ac->grad[i] += self->grad[i];
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        for (std::size_t i = 0; i < bc->data.size(); ++i) bc->grad[i] += self->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape) {
    throw ConfigError("mul: shape mismatch " + shape_str(*a) + " vs " + shape_str(*b));
  }
  auto out = make_tensor<T>(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (g_grad_enabled && any_requires_grad<T>({a, b})) {
    out->requires_grad = true;
    out->op = "mul";
    out->parents = {a, b};
    Tensor<T>* self = out.get();
    auto ac = a;
    auto bc = b;
    out->backward_fn = [self, ac, bc]() {
      if (ac->requires_grad) {
        ac->ensure_grad();
        for (std::size_t i = 0; i < ac->data.size(); ++i) {
          ac->grad[i] += self->grad[i] * bc->data[i];
        }
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        for (std::size_t i = 0; i < bc->data.size(); ++i) {
          bc->grad[i] += self->grad[i] * ac->data[i];
        }
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& x, T alpha) {
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = alpha * x->data[i];
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "scale";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc, alpha]() {
      xc->ensure_grad();
      for (std::size_t i = 0; i < xc->data.size(); ++i) xc->grad[i] += alpha * self->grad[i];
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> mul_mask(const TensorPtr<T>& x, const std::vector<T>& mask) {
  if (mask.size() != x->data.size()) throw ConfigError("mul_mask: mask length mismatch");
  auto m = std::make_shared<std::vector<T>>(mask);
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] * (*m)[i];
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "mul_mask";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc, m]() {
      xc->ensure_grad();
      for (std::size_t i = 0; i < xc->data.size(); ++i) xc->grad[i] += self->grad[i] * (*m)[i];
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> broadcast_freq(const TensorPtr<T>& x, std::int64_t freq) {
  require_rank4(x, "broadcast_freq");
  if (x->shape[2] != 1) {
    throw ConfigError("broadcast_freq: expected frequency extent 1, got " +
                      std::to_string(x->shape[2]) + " (axis 2)");
  }
  const std::int64_t batch = x->shape[0], ch = x->shape[1], time = x->shape[3];
  auto out = make_tensor<T>({batch, ch, freq, time});
  for (std::int64_t p = 0; p < batch * ch; ++p) {
    const T* src = x->data.data() + p * time;
    T* dst = out->data.data() + p * freq * time;
    for (std::int64_t f = 0; f < freq; ++f) {
      std::copy(src, src + time, dst + f * time);
    }
  }
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "broadcast_freq";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc, batch, ch, freq, time]() {
      xc->ensure_grad();
      for (std::int64_t p = 0; p < batch * ch; ++p) {
        T* dst = xc->grad.data() + p * time;
        const T* src = self->grad.data() + p * freq * time;
        for (std::int64_t f = 0; f < freq; ++f) {
          for (std::int64_t t = 0; t < time; ++t) dst[t] += src[f * time + t];
        }
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& x, std::vector<std::int64_t> new_shape) {
  if (shape_size(new_shape) != x->size()) {
    throw ConfigError("reshape: size mismatch " + shape_str(*x));
  }
  auto out = make_tensor<T>(std::move(new_shape));
  out->data = x->data;
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "reshape";
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

template <typename T>
TensorPtr<T> sum_all(const TensorPtr<T>& x) {
  auto out = make_tensor<T>({1});
  T acc = T(0);
  for (const T v : x->data) acc += v;
  out->data[0] = acc;
  if (g_grad_enabled && x->requires_grad) {
    out->requires_grad = true;
    out->op = "sum";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc]() {
      xc->ensure_grad();
      const T g = self->grad[0];
      for (std::size_t i = 0; i < xc->data.size(); ++i) xc->grad[i] += g;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void backward(const TensorPtr<T>& root, bool check_finite) {
  if (!root || root->size() != 1) throw ConfigError("backward: root must be a scalar");
  if (!root->requires_grad) return;

  std::vector<Tensor<T>*> topo;
  std::unordered_set<const Tensor<T>*> done;
  std::vector<std::pair<Tensor<T>*, std::size_t>> stack;
  stack.push_back({root.get(), 0});
  while (!stack.empty()) {
    auto& frame = stack.back();
    Tensor<T>* node = frame.first;
    if (frame.second == 0 && done.count(node)) {
      stack.pop_back();
      continue;
    }
    if (frame.second < node->parents.size()) {
      Tensor<T>* parent = node->parents[frame.second].get();
      ++frame.second;
      if (parent->requires_grad && !done.count(parent)) stack.push_back({parent, 0});
    } else {
      if (!done.count(node)) {
        done.insert(node);
        topo.push_back(node);
      }
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Tensor<T>* node = *it;
    if (check_finite) {
      for (const T v : node->data) {
        if (!std::isfinite(static_cast<double>(v))) {
          throw NumericError(std::string("non-finite value in output of op '") + node->op + "'");
        }
      }
    }
    if (node->backward_fn) node->backward_fn();
  }
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

double gradcheck(const std::function<TensorPtr<double>(const std::vector<TensorPtr<double>>&)>& f,
                 const std::vector<TensorPtr<double>>& inputs, const GradcheckOptions& options) {
  std::vector<bool> saved_flags;
  saved_flags.reserve(inputs.size());
  for (const auto& in : inputs) {
    saved_flags.push_back(in->requires_grad);
    in->requires_grad = true;
    in->ensure_grad();
    in->zero_grad();
  }

  auto out = f(inputs);
  if (out->size() != 1) throw ConfigError("gradcheck: f must be scalar-valued (sum-reduce it)");
  const double f_base = out->data[0];
  backward(out, /*check_finite=*/true);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) {
    in->ensure_grad();
    analytic.push_back(in->grad);
  }

  const double eps = options.eps;
  double max_rel = 0.0;
  Rng coord_rng(options.coord_seed);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& x = inputs[ti];
    std::vector<std::int64_t> coords;
    const std::int64_t n = x->size();
    if (options.max_coords_per_tensor > 0 && n > options.max_coords_per_tensor) {
      std::vector<std::int64_t> all(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
      for (std::int64_t i = 0; i < options.max_coords_per_tensor; ++i) {
        const std::int64_t j = coord_rng.uniform_int(i, n - 1);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
      }
      coords.assign(all.begin(), all.begin() + options.max_coords_per_tensor);
    } else {
      coords.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    }

    for (const std::int64_t c : coords) {
      const auto ci = static_cast<std::size_t>(c);
      const double orig = x->data[ci];
      const double a = analytic[ti][ci];
      double coord_err = 1e300;
      double e = eps;
      for (int attempt = 0; attempt <= options.shrink_retries; ++attempt) {
        double f_plus, f_minus;
        {
          NoGradGuard ng;
          x->data[ci] = orig + e;
          f_plus = f(inputs)->data[0];
          x->data[ci] = orig - e;
          f_minus = f(inputs)->data[0];
          x->data[ci] = orig;
        }
        const double numeric = (f_plus - f_minus) / (2.0 * e);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        coord_err = std::min(coord_err, std::abs(a - numeric) / denom);
        // At a kink straddled by the stencil the central difference blends
        // the two one-sided slopes; the analytic value is right as long as
        // it lies between them (any subgradient is acceptable there).
        const double fwd = (f_plus - f_base) / e;
        const double bwd = (f_base - f_minus) / e;
        const double lo = std::min(fwd, bwd), hi = std::max(fwd, bwd);
        if (a < lo || a > hi) {
          const double gap = a < lo ? lo - a : a - hi;
          const double bdenom = std::max({std::abs(a), std::abs(lo), std::abs(hi), 1e-8});
          coord_err = std::min(coord_err, gap / bdenom);
        } else {
          coord_err = 0.0;
        }
        if (coord_err <= options.early_exit) break;
        e /= 8.0;
      }
      max_rel = std::max(max_rel, coord_err);
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i]->requires_grad = saved_flags[i];
    inputs[i]->zero_grad();
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define BCRES_INSTANTIATE(T)                                                                      \
  template TensorPtr<T> make_tensor<T>(std::vector<std::int64_t>, bool);                          \
  template TensorPtr<T> full_tensor<T>(std::vector<std::int64_t>, T, bool);                       \
  template TensorPtr<T> tensor_from<T>(std::vector<std::int64_t>, std::vector<T>, bool);          \
  template TensorPtr<T> conv2d<T>(const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&, \
                                  std::int64_t, std::int64_t, std::int64_t, std::int64_t,        \
                                  std::int64_t);                                                 \
  template TensorPtr<T> pool2d<T>(const TensorPtr<T>&, PoolKind, std::int64_t, std::int64_t,     \
                                  std::int64_t, std::int64_t);                                   \
  template TensorPtr<T> relu<T>(const TensorPtr<T>&);                                            \
  template TensorPtr<T> swish<T>(const TensorPtr<T>&);                                           \
  template TensorPtr<T> dropout<T>(const TensorPtr<T>&, double, bool, Rng&);                     \
  template TensorPtr<T> identity<T>(const TensorPtr<T>&);                                        \
  template TensorPtr<T> pointwise_activation<T>(const TensorPtr<T>&, ActKind, double, bool,      \
                                                Rng*);                                           \
  template TensorPtr<T> add<T>(const TensorPtr<T>&, const TensorPtr<T>&);                        \
  template TensorPtr<T> mul<T>(const TensorPtr<T>&, const TensorPtr<T>&);                        \
  template TensorPtr<T> scale<T>(const TensorPtr<T>&, T);                                        \
  template TensorPtr<T> mul_mask<T>(const TensorPtr<T>&, const std::vector<T>&);                 \
  template TensorPtr<T> broadcast_freq<T>(const TensorPtr<T>&, std::int64_t);                    \
  template TensorPtr<T> reshape<T>(const TensorPtr<T>&, std::vector<std::int64_t>);              \
  template TensorPtr<T> sum_all<T>(const TensorPtr<T>&);                                         \
  template void backward<T>(const TensorPtr<T>&, bool);

BCRES_INSTANTIATE(float)
BCRES_INSTANTIATE(double)

#undef BCRES_INSTANTIATE

}  // namespace bcres
