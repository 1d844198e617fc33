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

// Multi-head scaled dot-product attention over packed, independent segments.
//
// Many short sequences (one per item) are stacked into one matrix and each
// segment attends only within itself, optionally under a boolean mask and a
// learned additive logit bias looked up per (row, column).

#pragma once

#include <limits>
#include <memory>
#include <optional>

#include "cerespt/nn/tape.hpp"

namespace cerespt::nn {

class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(std::size_t n, bool fill = false) : n_(n), allowed_(n * n, fill) {}

  static AttentionMask full(std::size_t n) { return AttentionMask(n, true); }
  static AttentionMask identity(std::size_t n) {
    AttentionMask m(n);
    for (std::size_t i = 0; i < n; ++i) m.allow(i, i);
    return m;
  }

  std::size_t size() const { return n_; }
  void allow(std::size_t i, std::size_t j, bool v = true) { allowed_[i * n_ + j] = v; }
  bool operator()(std::size_t i, std::size_t j) const { return allowed_[i * n_ + j]; }

  void validate() const {
    for (std::size_t i = 0; i < n_; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < n_ && !any; ++j) any = (*this)(i, j);
      if (!any) throw InvalidArgument("attention mask row " + std::to_string(i) + " is empty");
    }
  }

 private:
  std::size_t n_ = 0;
  std::vector<char> allowed_;
};

struct AttentionSegment {
  std::size_t begin = 0;
  std::size_t length = 0;
  std::shared_ptr<const AttentionMask> mask;    // null: every pair allowed
  std::shared_ptr<const std::vector<int>> bias_index;  // length*length, -1: none
};

inline std::vector<AttentionSegment> single_segment(std::size_t n,
                                                    std::shared_ptr<const AttentionMask> mask = {}) {
  return {AttentionSegment{0, n, std::move(mask), {}}};
}

// Per-(segment, head) attention probabilities, filled when requested.
template <typename T>
using AttentionProbs = std::vector<Tensor<T>>;

// qkv: [N x 3d] packed as [Q | K | V]; returns concat of head outputs [N x d].
// Rows outside every segment produce zeros.
template <typename T>
Var<T> segmented_attention(Var<T> qkv, std::size_t heads, std::vector<AttentionSegment> segments,
                           std::optional<Var<T>> bias = std::nullopt,
                           AttentionProbs<T>* probs_out = nullptr) {
  Tape<T>& tp = *qkv.tape;
  const Shape s = qkv.shape();
  if (s.cols % 3 != 0) throw InvalidArgument("attention: qkv width must be 3d, got " + to_string(s));
  const std::size_t d = s.cols / 3;
  if (heads == 0 || d % heads != 0) {
    throw InvalidArgument("attention: " + std::to_string(heads) + " heads do not divide d=" +
                          std::to_string(d));
  }
  const std::size_t dh = d / heads;
  const T scl = T(1) / std::sqrt(static_cast<T>(dh));
  std::size_t n_bias = 0;
  if (bias) {
    if (bias->tape != &tp || bias->shape().rows != 1) throw InvalidArgument("attention: bias must be [1 x B]");
    n_bias = bias->shape().cols;
  }
  std::size_t covered = 0;
  for (const auto& seg : segments) {
    if (seg.begin + seg.length > s.rows || seg.begin < covered) {
      throw InvalidArgument("attention: segments must be ordered, disjoint and in range");
    }
    covered = seg.begin + seg.length;
    if (seg.mask) {
      if (seg.mask->size() != seg.length) throw InvalidArgument("attention: mask size mismatch");
      seg.mask->validate();
    }
    if (seg.bias_index) {
      if (!bias) throw InvalidArgument("attention: bias index given without bias table");
      if (seg.bias_index->size() != seg.length * seg.length) {
        throw InvalidArgument("attention: bias index size mismatch");
      }
      for (int b : *seg.bias_index) {
        if (b >= static_cast<int>(n_bias)) throw InvalidArgument("attention: bias index out of range");
      }
    }
  }

  using Strided = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
  const T* px = tp.data(qkv);
  const T* pb = bias ? tp.data(*bias) : nullptr;
  auto probs = std::make_shared<std::vector<Buffer<T>>>();
  probs->reserve(segments.size() * heads);
  Buffer<T> out(s.rows * d, T(0));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  for (const auto& seg : segments) {
    const std::size_t L = seg.length;
    for (std::size_t h = 0; h < heads; ++h) {
      Strided q(px + seg.begin * s.cols + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
      Strided k(px + seg.begin * s.cols + d + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
      Strided v(px + seg.begin * s.cols + 2 * d + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
      Buffer<T> p(L * L);
      MatMap<T> pm(p.data(), L, L);
      pm.noalias() = q * k.transpose();
      for (std::size_t i = 0; i < L; ++i) {
        T* row = p.data() + i * L;
        T mx = neg_inf;
        for (std::size_t j = 0; j < L; ++j) {
          if (seg.mask && !(*seg.mask)(i, j)) {
            row[j] = neg_inf;
            continue;
          }
          row[j] *= scl;
          if (seg.bias_index) {
            const int b = (*seg.bias_index)[i * L + j];
            if (b >= 0) row[j] += pb[b];
          }
          mx = std::max(mx, row[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < L; ++j) {
          row[j] = row[j] == neg_inf ? T(0) : std::exp(row[j] - mx);
          z += row[j];
        }
        const T inv = T(1) / z;
        for (std::size_t j = 0; j < L; ++j) row[j] *= inv;
      }
      StridedOut o(out.data() + seg.begin * d + h * dh, L, dh, Eigen::OuterStride<>(d));
      o.noalias() = pm * v;
      if (probs_out) {
        Tensor<T> t({L, L});
        t.data = p;
        probs_out->push_back(std::move(t));
      }
      probs->push_back(std::move(p));
    }
  }

  std::vector<Var<T>> inputs{qkv};
  if (bias) inputs.push_back(*bias);
  return tp.record({s.rows, d}, std::move(out), inputs,
                   [&tp, qkv, bias, segments = std::move(segments), probs, s, d, dh, heads, scl,
                    id = tp.size()] {
    const T* g = tp.grad({&tp, static_cast<int>(id)});
    const T* px = tp.data(qkv);
    T* dx = tp.requires_grad(qkv) ? tp.grad(qkv) : nullptr;
    T* db = (bias && tp.requires_grad(*bias)) ? tp.grad(*bias) : nullptr;
    std::size_t pi = 0;
    for (const auto& seg : segments) {
      const std::size_t L = seg.length;
      Mat<T> dp(L, L);
      for (std::size_t h = 0; h < heads; ++h, ++pi) {
        ConstMatMap<T> p((*probs)[pi].data(), L, L);
        Strided q(px + seg.begin * s.cols + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
        Strided k(px + seg.begin * s.cols + d + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
        Strided v(px + seg.begin * s.cols + 2 * d + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
        Strided go(g + seg.begin * d + h * dh, L, dh, Eigen::OuterStride<>(d));
        dp.noalias() = go * v.transpose();
        // softmax backward in place: dS = P * (dP - rowsum(dP * P))
        for (std::size_t i = 0; i < L; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < L; ++j) dot += dp(i, j) * p(i, j);
          for (std::size_t j = 0; j < L; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot);
        }
        if (db && seg.bias_index) {
          for (std::size_t i = 0; i < L * L; ++i) {
            const int b = (*seg.bias_index)[i];
            if (b >= 0) db[b] += dp.data()[i];
          }
        }
        if (dx) {
          StridedOut dq(dx + seg.begin * s.cols + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
          StridedOut dk(dx + seg.begin * s.cols + d + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
          StridedOut dv(dx + seg.begin * s.cols + 2 * d + h * dh, L, dh, Eigen::OuterStride<>(s.cols));
          dv.noalias() += p.transpose() * go;
          dq.noalias() += scl * (dp * k);
          dk.noalias() += scl * (dp.transpose() * q);
        }
      }
    }
  });
}

}  // namespace cerespt::nn
