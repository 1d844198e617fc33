/*
 * Copyright 2026 The cerespt Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Adam with bias correction, and the warmup/linear-decay learning rate.

#pragma once

#include <cmath>

#include "cerespt/nn/tensor.hpp"

namespace cerespt::nn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Every parameter must have received a gradient (possibly zero) since the
// last step. Gradients are cleared afterwards.
template <typename T>
void adam_step(ParamStore<T>& store, double lr, AdamOptions opt = {}) {
  for (const auto& [name, p] : store) {
    if (!p.grad_ready) throw InvalidArgument("adam_step: parameter '" + name + "' has no gradient");
  }
  const std::size_t t = store.step() + 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(opt.eps);
  for (auto& [name, p] : store) {
    T* w = p.value.data.data();
    T* m = p.adam_m.data();
    T* v = p.adam_v.data();
    T* g = p.grad.data();
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
      g[i] = T(0);
    }
    p.grad_ready = false;
  }
  store.set_step(t);
}

// Linear 0 -> peak over the first warmup_frac * total steps, then linear
// decay to floor at step == total.
inline double lr_schedule(std::size_t step, double peak, double warmup_frac, std::size_t total,
                          double floor) {
  if (floor > peak) throw InvalidArgument("lr_schedule: floor exceeds peak");
  if (warmup_frac < 0.0 || warmup_frac > 1.0) throw InvalidArgument("lr_schedule: warmup_frac not in [0,1]");
  if (step > total) throw InvalidArgument("lr_schedule: step beyond total");
  const double s = static_cast<double>(step);
  const double warm = warmup_frac * static_cast<double>(total);
  if (s < warm) return peak * s / warm;
  const double rest = static_cast<double>(total) - warm;
  if (rest <= 0.0) return peak;
  return floor + (peak - floor) * (static_cast<double>(total) - s) / rest;
}

}  // namespace cerespt::nn
