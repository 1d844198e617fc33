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

// Dense row-major matrices and the named trainable parameter store.

#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cerespt/error.hpp"
#include "cerespt/rng.hpp"

namespace cerespt::nn {

// Buffers are over-aligned so that vectorized kernels take the same code path
// on every run.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(Shape s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

template <typename T>
struct Tensor {
  Shape shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::initializer_list<T> values) : shape(s), data(values) {
    if (data.size() != shape.size()) throw InvalidArgument("Tensor: value count != shape size");
  }

  T& operator()(std::size_t r, std::size_t c) { return data[r * shape.cols + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data[r * shape.cols + c]; }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Buffer<T> grad;
  Buffer<T> adam_m;
  Buffer<T> adam_v;
  bool grad_ready = false;
};

template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    if (params_.count(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
    Parameter<T> p;
    p.name = name;
    p.grad.assign(init.data.size(), T(0));
    p.adam_m.assign(init.data.size(), T(0));
    p.adam_v.assign(init.data.size(), T(0));
    p.value = std::move(init);
    return params_.emplace(name, std::move(p)).first->second;
  }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("no parameter '" + name + "'");
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("no parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void erase(const std::string& name) { params_.erase(name); }

  // Iteration is in name order.
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.data.size();
    return n;
  }

  std::size_t step() const { return step_; }
  void set_step(std::size_t s) { step_ = s; }

  void zero_grad() {
    for (auto& [name, p] : params_) {
      std::fill(p.grad.begin(), p.grad.end(), T(0));
      p.grad_ready = false;
    }
  }

  void mark_grads_ready() {
    for (auto& [name, p] : params_) p.grad_ready = true;
  }

  template <typename U>
  void copy_values_from(const ParamStore<U>& other) {
    for (auto& [name, p] : params_) {
      const auto& src = other.at(name);
      if (src.value.shape != p.value.shape) {
        throw InvalidArgument("shape mismatch copying parameter '" + name + "'");
      }
      for (std::size_t i = 0; i < p.value.data.size(); ++i) {
        p.value.data[i] = static_cast<T>(src.value.data[i]);
      }
    }
  }

 private:
  std::map<std::string, Parameter<T>> params_;
  std::size_t step_ = 0;
};

// Initializers.

template <typename T>
Tensor<T> normal_tensor(Shape s, double stddev, Rng& rng) {
  Tensor<T> t(s);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> xavier_tensor(Shape s, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
  Tensor<T> t(s);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace cerespt::nn
