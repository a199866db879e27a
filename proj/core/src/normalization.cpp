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
#include "bcres/normalization.hpp"

#include <cmath>
#include <sstream>

namespace bcres {

namespace {

template <typename T>
void require_rank4(const TensorPtr<T>& x, const char* op) {
  if (!x || x->shape.size() != 4) {
    throw ConfigError(std::string(op) + ": expected rank-4 input");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// FreqIN
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> freq_in(const TensorPtr<T>& x, double epsilon) {
  require_rank4(x, "freq_in");
  if (epsilon <= 0.0) throw ConfigError("freq_in: epsilon must be positive");
  const std::int64_t batch = x->shape[0], ch = x->shape[1], freq = x->shape[2], time = x->shape[3];
  const std::int64_t group = ch * time;  // statistics pool per (n, f)

  auto out = make_tensor<T>(x->shape);
  // Saved for backward: 1/std per (n, f) and the normalized values.
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(batch * freq));

  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t f = 0; f < freq; ++f) {
      T mean = T(0);
      for (std::int64_t c = 0; c < ch; ++c) {
        const T* row = &x->at4(n, c, f, 0);
        for (std::int64_t t = 0; t < time; ++t) mean += row[t];
      }
      mean /= static_cast<T>(group);
      T var = T(0);
      for (std::int64_t c = 0; c < ch; ++c) {
        const T* row = &x->at4(n, c, f, 0);
        for (std::int64_t t = 0; t < time; ++t) {
          const T d = row[t] - mean;
          var += d * d;
        }
      }
      var /= static_cast<T>(group);
      const T is = T(1) / std::sqrt(var + static_cast<T>(epsilon));
      (*inv_std)[static_cast<std::size_t>(n * freq + f)] = is;
      for (std::int64_t c = 0; c < ch; ++c) {
        const T* row = &x->at4(n, c, f, 0);
        T* orow = &out->at4(n, c, f, 0);
        for (std::int64_t t = 0; t < time; ++t) orow[t] = (row[t] - mean) * is;
      }
    }
  }

  if (grad_enabled() && x->requires_grad) {
    out->requires_grad = true;
    out->op = "freq_in";
    out->parents = {x};
    Tensor<T>* self = out.get();
    auto xc = x;
    out->backward_fn = [self, xc, inv_std, batch, ch, freq, time, group]() {
      // dL/dx = (1/s) * (g - mean(g) - xhat * mean(g * xhat)) per (n, f)
      // where means run over channel x time; xhat is this op's output.
      xc->ensure_grad();
      for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t f = 0; f < freq; ++f) {
          const T is = (*inv_std)[static_cast<std::size_t>(n * freq + f)];
          T g_mean = T(0), gx_mean = T(0);
          for (std::int64_t c = 0; c < ch; ++c) {
            const std::int64_t base = self->index4(n, c, f, 0);
            for (std::int64_t t = 0; t < time; ++t) {
              const T g = self->grad[static_cast<std::size_t>(base + t)];
              g_mean += g;
              gx_mean += g * self->data[static_cast<std::size_t>(base + t)];
            }
          }
          g_mean /= static_cast<T>(group);
          gx_mean /= static_cast<T>(group);
          for (std::int64_t c = 0; c < ch; ++c) {
            const std::int64_t base = self->index4(n, c, f, 0);
            for (std::int64_t t = 0; t < time; ++t) {
              const auto i = static_cast<std::size_t>(base + t);
              xc->grad[i] += is * (self->grad[i] - g_mean - self->data[i] * gx_mean);
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> res_norm(const TensorPtr<T>& x, double lambda, double epsilon) {
  require_rank4(x, "res_norm");
  if (lambda < 0.0) throw ConfigError("res_norm: lambda must be non-negative");
  return add(scale(x, static_cast<T>(lambda)), freq_in(x, epsilon));
}

// ---------------------------------------------------------------------------
// Grouped batch normalization (BN / SSN)
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> batch_norm_grouped(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                                const TensorPtr<T>& beta, const TensorPtr<T>& running_mean,
                                const TensorPtr<T>& running_var, std::int64_t sub_bands,
                                double momentum, bool training, double epsilon) {
  require_rank4(x, "batch_norm_grouped");
  const std::int64_t batch = x->shape[0], ch = x->shape[1], freq = x->shape[2], time = x->shape[3];
  if (sub_bands < 1) throw ConfigError("batch_norm_grouped: sub_bands must be >= 1");
  if (freq % sub_bands != 0) {
    throw ConfigError("batch_norm_grouped: frequency extent " + std::to_string(freq) +
                      " not divisible by sub_bands " + std::to_string(sub_bands));
  }
  const std::int64_t n_groups = ch * sub_bands;
  if (gamma->size() != n_groups || beta->size() != n_groups ||
      running_mean->size() != n_groups || running_var->size() != n_groups) {
    throw ConfigError("batch_norm_grouped: parameter length != channels * sub_bands");
  }
  const std::int64_t band = freq / sub_bands;
  const std::int64_t group = batch * band * time;  // elements per (channel, band)

  auto out = make_tensor<T>(x->shape);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n_groups));
  auto xhat = std::make_shared<std::vector<T>>(x->data.size());

  for (std::int64_t c = 0; c < ch; ++c) {
    for (std::int64_t s = 0; s < sub_bands; ++s) {
      const auto gi = static_cast<std::size_t>(c * sub_bands + s);
      T mean, var;
      if (training) {
        T acc = T(0);
        for (std::int64_t n = 0; n < batch; ++n) {
          for (std::int64_t b = 0; b < band; ++b) {
            const T* row = &x->at4(n, c, s * band + b, 0);
            for (std::int64_t t = 0; t < time; ++t) acc += row[t];
          }
        }
        mean = acc / static_cast<T>(group);
        acc = T(0);
        for (std::int64_t n = 0; n < batch; ++n) {
          for (std::int64_t b = 0; b < band; ++b) {
            const T* row = &x->at4(n, c, s * band + b, 0);
            for (std::int64_t t = 0; t < time; ++t) {
              const T d = row[t] - mean;
              acc += d * d;
            }
          }
        }
        var = acc / static_cast<T>(group);
        running_mean->data[gi] = static_cast<T>((1.0 - momentum) * running_mean->data[gi] +
                                                momentum * mean);
        running_var->data[gi] = static_cast<T>((1.0 - momentum) * running_var->data[gi] +
                                               momentum * var);
      } else {
        mean = running_mean->data[gi];
        var = running_var->data[gi];
      }
      const T is = T(1) / std::sqrt(var + static_cast<T>(epsilon));
      (*inv_std)[gi] = is;
      const T gv = gamma->data[gi], bv = beta->data[gi];
      for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t b = 0; b < band; ++b) {
          const std::int64_t base = x->index4(n, c, s * band + b, 0);
          for (std::int64_t t = 0; t < time; ++t) {
            const auto i = static_cast<std::size_t>(base + t);
            const T h = (x->data[i] - mean) * is;
            (*xhat)[i] = h;
            out->data[i] = gv * h + bv;
          }
        }
      }
    }
  }

  if (grad_enabled() && (x->requires_grad || gamma->requires_grad || beta->requires_grad)) {
    out->requires_grad = true;
    out->op = "batch_norm";
    out->parents = {x, gamma, beta};
    Tensor<T>* self = out.get();
    auto xc = x;
    auto gc = gamma;
    auto bc = beta;
    out->backward_fn = [self, xc, gc, bc, inv_std, xhat, batch, ch, sub_bands, band, time,
                        group, training]() {
      for (std::int64_t c = 0; c < ch; ++c) {
        for (std::int64_t s = 0; s < sub_bands; ++s) {
          const auto gi = static_cast<std::size_t>(c * sub_bands + s);
          const T is = (*inv_std)[gi];
          const T gv = gc->data[gi];
          T dgamma = T(0), dbeta = T(0), gmean = T(0), gxmean = T(0);
          for (std::int64_t n = 0; n < batch; ++n) {
            for (std::int64_t b = 0; b < band; ++b) {
              const std::int64_t base = self->index4(n, c, s * band + b, 0);
              for (std::int64_t t = 0; t < time; ++t) {
                const auto i = static_cast<std::size_t>(base + t);
                const T g = self->grad[i];
                dgamma += g * (*xhat)[i];
                dbeta += g;
                gmean += g;
                gxmean += g * (*xhat)[i];
              }
            }
          }
          if (gc->requires_grad) {
            gc->ensure_grad();
            gc->grad[gi] += dgamma;
          }
          if (bc->requires_grad) {
            bc->ensure_grad();
            bc->grad[gi] += dbeta;
          }
          if (xc->requires_grad) {
            xc->ensure_grad();
            gmean /= static_cast<T>(group);
            gxmean /= static_cast<T>(group);
            for (std::int64_t n = 0; n < batch; ++n) {
              for (std::int64_t b = 0; b < band; ++b) {
                const std::int64_t base = self->index4(n, c, s * band + b, 0);
                for (std::int64_t t = 0; t < time; ++t) {
                  const auto i = static_cast<std::size_t>(base + t);
                  if (training) {
                    // Batch statistics depend on x.
                    xc->grad[i] +=
                        gv * is * (self->grad[i] - gmean - (*xhat)[i] * gxmean);
                  } else {
                    // Running statistics are constants.
                    xc->grad[i] += gv * is * self->grad[i];
                  }
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
// Domain statistics export
// ---------------------------------------------------------------------------

DomainStats export_domain_stats(const TensorPtr<float>& x) {
  require_rank4(x, "export_domain_stats");
  const std::int64_t batch = x->shape[0], ch = x->shape[1], freq = x->shape[2], time = x->shape[3];
  DomainStats out;
  out.examples = batch;
  out.freq = freq;
  out.channels = ch;
  out.freq_stats.assign(static_cast<std::size_t>(batch * 2 * freq), 0.0f);
  out.chan_stats.assign(static_cast<std::size_t>(batch * 2 * ch), 0.0f);

  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t f = 0; f < freq; ++f) {
      double sum = 0.0, sum_sq = 0.0;
      for (std::int64_t c = 0; c < ch; ++c) {
        for (std::int64_t t = 0; t < time; ++t) {
          const double v = x->at4(n, c, f, t);
          sum += v;
          sum_sq += v * v;
        }
      }
      const double count = static_cast<double>(ch * time);
      const double mean = sum / count;
      const double var = std::max(0.0, sum_sq / count - mean * mean);
      out.freq_stats[static_cast<std::size_t>(n * 2 * freq + f)] = static_cast<float>(mean);
      out.freq_stats[static_cast<std::size_t>(n * 2 * freq + freq + f)] =
          static_cast<float>(std::sqrt(var));
    }
    for (std::int64_t c = 0; c < ch; ++c) {
      double sum = 0.0, sum_sq = 0.0;
      for (std::int64_t f = 0; f < freq; ++f) {
        for (std::int64_t t = 0; t < time; ++t) {
          const double v = x->at4(n, c, f, t);
          sum += v;
          sum_sq += v * v;
        }
      }
      const double count = static_cast<double>(freq * time);
      const double mean = sum / count;
      const double var = std::max(0.0, sum_sq / count - mean * mean);
      out.chan_stats[static_cast<std::size_t>(n * 2 * ch + c)] = static_cast<float>(mean);
      out.chan_stats[static_cast<std::size_t>(n * 2 * ch + ch + c)] =
          static_cast<float>(std::sqrt(var));
    }
  }
  return out;
}

void write_domain_stats_tsv(const std::string& path, const std::vector<std::string>& ids,
                            const std::vector<float>& rows, std::int64_t row_len) {
  if (ids.size() * static_cast<std::size_t>(row_len) != rows.size()) {
    throw ConfigError("write_domain_stats_tsv: row length mismatch");
  }
  std::ostringstream os;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    os << ids[n];
    for (std::int64_t i = 0; i < row_len; ++i) {
      os << '\t' << format_fixed(rows[n * static_cast<std::size_t>(row_len) +
                                      static_cast<std::size_t>(i)], 6);
    }
    os << '\n';
  }
  atomic_write_file(path, os.str());
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define BCRES_INSTANTIATE(T)                                                                  \
  template TensorPtr<T> freq_in<T>(const TensorPtr<T>&, double);                              \
  template TensorPtr<T> res_norm<T>(const TensorPtr<T>&, double, double);                     \
  template TensorPtr<T> batch_norm_grouped<T>(const TensorPtr<T>&, const TensorPtr<T>&,       \
                                              const TensorPtr<T>&, const TensorPtr<T>&,       \
                                              const TensorPtr<T>&, std::int64_t, double,      \
                                              bool, double);

BCRES_INSTANTIATE(float)
BCRES_INSTANTIATE(double)

#undef BCRES_INSTANTIATE

}  // namespace bcres
