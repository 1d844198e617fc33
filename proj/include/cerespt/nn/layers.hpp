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

// Pre-norm transformer blocks built from tape ops.

#pragma once

#include "cerespt/nn/attention.hpp"

namespace cerespt::nn {

struct BlockShape {
  std::size_t d = 64;
  std::size_t mlp_hidden = 128;
};

template <typename T>
void add_layer_norm_params(ParamStore<T>& store, const std::string& prefix, std::size_t d) {
  store.add(prefix + ".g", Tensor<T>({1, d}, T(1)));
  store.add(prefix + ".b", Tensor<T>({1, d}));
}

template <typename T>
void add_block_params(ParamStore<T>& store, const std::string& prefix, BlockShape bs, Rng& rng) {
  const std::size_t d = bs.d, m = bs.mlp_hidden;
  add_layer_norm_params(store, prefix + ".ln1", d);
  store.add(prefix + ".attn.wqkv", xavier_tensor<T>({d, 3 * d}, rng));
  store.add(prefix + ".attn.bqkv", Tensor<T>({1, 3 * d}));
  store.add(prefix + ".attn.wo", xavier_tensor<T>({d, d}, rng));
  store.add(prefix + ".attn.bo", Tensor<T>({1, d}));
  add_layer_norm_params(store, prefix + ".ln2", d);
  store.add(prefix + ".mlp.w1", xavier_tensor<T>({d, m}, rng));
  store.add(prefix + ".mlp.b1", Tensor<T>({1, m}));
  store.add(prefix + ".mlp.w2", xavier_tensor<T>({m, d}, rng));
  store.add(prefix + ".mlp.b2", Tensor<T>({1, d}));
}

template <typename T>
struct BlockVars {
  Var<T> ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  std::size_t heads = 1;
};

template <typename T>
BlockVars<T> block_vars(Tape<T>& tp, ParamStore<T>& store, const std::string& prefix,
                        std::size_t heads) {
  auto p = [&](const std::string& n) { return tp.param(store, prefix + "." + n); };
  return {p("ln1.g"),    p("ln1.b"),  p("attn.wqkv"), p("attn.bqkv"), p("attn.wo"), p("attn.bo"),
          p("ln2.g"),    p("ln2.b"),  p("mlp.w1"),    p("mlp.b1"),    p("mlp.w2"),  p("mlp.b2"),
          heads};
}

// Concatenated head outputs before the output projection.
template <typename T>
Var<T> multihead_self_attention(Var<T> h, Var<T> wqkv, Var<T> bqkv, std::size_t heads,
                                std::vector<AttentionSegment> segments,
                                std::optional<Var<T>> bias = std::nullopt,
                                AttentionProbs<T>* probs_out = nullptr) {
  return segmented_attention(linear(h, wqkv, bqkv), heads, std::move(segments), bias, probs_out);
}

// x + Attn(LN(x)) then + MLP(LN(.)), GELU in the MLP.
template <typename T>
Var<T> transformer_block(Var<T> x, const BlockVars<T>& p, std::vector<AttentionSegment> segments,
                         std::optional<Var<T>> bias = std::nullopt) {
  const std::size_t d = x.cols();
  if (p.wo.shape() != Shape{d, d}) {
    throw InvalidArgument("transformer_block: input " + to_string(x.shape()) +
                          " does not match block width " + std::to_string(p.wo.rows()));
  }
  Var<T> a = multihead_self_attention(layer_norm(x, p.ln1_g, p.ln1_b), p.wqkv, p.bqkv, p.heads,
                                      std::move(segments), bias);
  Var<T> x1 = add(x, linear(a, p.wo, p.bo));
  Var<T> m = linear(gelu(linear(layer_norm(x1, p.ln2_g, p.ln2_b), p.w1, p.b1)), p.w2, p.b2);
  return add(x1, m);
}

}  // namespace cerespt::nn
