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

// Central-difference gradient verification.

#pragma once

#include <algorithm>
#include <functional>
#include <numeric>

#include "cerespt/nn/tape.hpp"

namespace cerespt::nn {

struct GradcheckOptions {
  // Five-point central stencil.
  double step = 1e-5;
  // Denominator floor for the relative error, so that gradients that are
  // zero up to rounding do not divide by ~0.
  double floor = 1e-5;
  // Elements checked per parameter; 0 checks all of them.
  std::size_t max_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel = 0;
};

struct GradcheckReport {
  double max_rel = 0;
  GradcheckEntry worst;
  std::size_t checked = 0;
  std::vector<std::pair<std::string, double>> per_param;  // max rel per parameter
};

using LossFn = std::function<Var<double>(Tape<double>&, ParamStore<double>&)>;

inline GradcheckReport gradcheck(ParamStore<double>& store, const LossFn& loss_fn,
                                 GradcheckOptions opt = {}) {
  store.zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = loss_fn(tape, store);
    tape.backward(loss, &store);
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return tape.scalar(loss_fn(tape, store));
  };
  GradcheckReport rep;
  Rng rng(derive_seed(opt.seed, 0x6c));
  for (auto& [name, p] : store) {
    std::vector<std::size_t> idx(p.value.data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_per_param && idx.size() > opt.max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_per_param);
      std::sort(idx.begin(), idx.end());
    }
    double worst_here = 0;
    for (std::size_t i : idx) {
      double& w = p.value.data[i];
      const double orig = w;
      const double h = opt.step;
      auto at = [&](double offset) {
        w = orig + offset;
        return eval();
      };
      const double numeric =
          (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      w = orig;
      const double analytic = p.grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      ++rep.checked;
      worst_here = std::max(worst_here, rel);
      if (rel > rep.max_rel || rep.checked == 1) {
        rep.max_rel = std::max(rep.max_rel, rel);
        if (rel >= rep.worst.rel) rep.worst = {name, i, analytic, numeric, rel};
      }
    }
    rep.per_param.emplace_back(name, worst_here);
  }
  store.zero_grad();
  return rep;
}

}  // namespace cerespt::nn
