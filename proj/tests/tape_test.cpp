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

#include <gtest/gtest.h>

#include <cmath>

#include "cerespt/nn/gradcheck.hpp"
#include "cerespt/nn/layers.hpp"

namespace cerespt::nn {
namespace {

using D = double;

Tensor<D> random_tensor(Shape s, Rng& rng, double scale = 1.0) { return normal_tensor<D>(s, scale, rng); }

TEST(Tape, SumGivesOnes) {
  ParamStore<D> store;
  Rng rng(1);
  store.add("w", random_tensor({3, 4}, rng));
  Tape<D> tp;
  tp.backward(sum(tp.param(store, "w")), &store);
  for (D g : store.at("w").grad) EXPECT_EQ(g, 1.0);
}

TEST(Tape, HalfSquareGivesTheta) {
  ParamStore<D> store;
  Rng rng(2);
  store.add("w", random_tensor({2, 5}, rng));
  Tape<D> tp;
  Var<D> w = tp.param(store, "w");
  tp.backward(scale(sum(mul(w, w)), 0.5), &store);
  const auto& p = store.at("w");
  for (std::size_t i = 0; i < p.grad.size(); ++i) EXPECT_DOUBLE_EQ(p.grad[i], p.value.data[i]);
}

TEST(Tape, UnreachedParameterHasZeroGradient) {
  ParamStore<D> store;
  store.add("a", Tensor<D>({1, 2}, {1, 2}));
  store.add("b", Tensor<D>({1, 2}, {3, 4}));
  Tape<D> tp;
  tp.param(store, "b");
  tp.backward(sum(tp.param(store, "a")), &store);
  EXPECT_TRUE(store.at("b").grad_ready);
  for (D g : store.at("b").grad) EXPECT_EQ(g, 0.0);
}

TEST(Tape, NonScalarLossRejected) {
  ParamStore<D> store;
  store.add("a", Tensor<D>({1, 2}, {1, 2}));
  Tape<D> tp;
  EXPECT_THROW(tp.backward(tp.param(store, "a")), InvalidArgument);
}

TEST(Tape, ShapeErrors) {
  Tape<D> tp;
  Var<D> a = tp.constant(Tensor<D>({2, 3}));
  Var<D> b = tp.constant(Tensor<D>({2, 3}));
  EXPECT_THROW(matmul(a, b), InvalidArgument);
  EXPECT_THROW(add(a, tp.constant(Tensor<D>({3, 2}))), InvalidArgument);
}

TEST(Tape, ForwardValuesAgreeWithDirectFormulas) {
  Tape<D> tp;
  Var<D> a = tp.constant(Tensor<D>({2, 2}, {1, 2, 3, 4}));
  Var<D> b = tp.constant(Tensor<D>({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(tp.value(matmul(a, b)).data, (Buffer<D>{19, 22, 43, 50}));
  EXPECT_EQ(tp.value(matmul_nt(a, b)).data, (Buffer<D>{17, 23, 39, 53}));
  const auto g = tp.value(gelu(tp.constant(Tensor<D>({1, 3}, {-1, 0, 2})))).data;
  auto gelu_ref = [](double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); };
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(g[i], gelu_ref(std::vector<double>{-1, 0, 2}[i]), 1e-15);

  const auto ln = tp.value(layer_norm(a, tp.constant(Tensor<D>({1, 2}, {1, 1})), tp.constant(Tensor<D>({1, 2}))));
  // Row {1, 2}: mean 1.5, variance 0.25.
  const double inv = 0.5 / std::sqrt(0.25 + 1e-5);
  EXPECT_NEAR(ln(0, 0), -inv, 1e-12);
  EXPECT_NEAR(ln(1, 1), inv, 1e-12);
}

TEST(CrossEntropy, UniformLogits) {
  Tape<D> tp;
  Var<D> z = tp.constant(Tensor<D>({3, 4}));
  EXPECT_NEAR(tp.scalar(cross_entropy(z, {0, 1, 2}, {0, 2})), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, HugeCorrectLogit) {
  Tape<D> tp;
  Var<D> z = tp.constant(Tensor<D>({1, 3}, {0, 80, 0}));
  EXPECT_LT(tp.scalar(cross_entropy(z, {1}, {0})), 1e-30);
}

TEST(CrossEntropy, RandomCaseMatchesLogSumExp) {
  Rng rng(5);
  const Tensor<D> logits = random_tensor({5, 7}, rng, 3.0);
  const std::vector<int> targets = {3, 0, 6, 2, 5};
  const std::vector<int> positions = {0, 2, 3};
  double ref = 0;
  for (int p : positions) {
    double mx = -1e300;
    for (int j = 0; j < 7; ++j) mx = std::max(mx, logits(p, j));
    double s = 0;
    for (int j = 0; j < 7; ++j) s += std::exp(logits(p, j) - mx);
    ref += mx + std::log(s) - logits(p, targets[p]);
  }
  ref /= positions.size();
  Tape<D> tp;
  EXPECT_NEAR(tp.scalar(cross_entropy(tp.constant(logits), targets, positions)), ref, 1e-12);
}

TEST(CrossEntropy, EmptyPositionsIsZeroWithZeroGradient) {
  ParamStore<D> store;
  Rng rng(1);
  store.add("z", random_tensor({2, 3}, rng));
  Tape<D> tp;
  Var<D> loss = cross_entropy(tp.param(store, "z"), {0, 1}, {});
  EXPECT_EQ(tp.scalar(loss), 0.0);
  tp.backward(loss, &store);
  for (D g : store.at("z").grad) EXPECT_EQ(g, 0.0);
}

// Runs every op on the tape inside one scalar loss.
Var<D> op_zoo(Tape<D>& tp, ParamStore<D>& s) {
  Var<D> x = tp.param(s, "x"), w = tp.param(s, "w"), b = tp.param(s, "b"), g = tp.param(s, "g"),
         e = tp.param(s, "e");
  Var<D> h = gelu(linear(x, w, b));
  h = layer_norm(h, g, b);
  h = add(h, mul(h, h));
  Var<D> picked = gather_rows(h, {3, 0, 0, 2});
  RowMix mix;
  mix.out_rows = 2;
  mix.add(0, 0, 0.3);
  mix.add(0, 1, 0.7);
  mix.add(1, 3, -1.2);
  Var<D> mixed = row_mix(picked, mix);
  Var<D> cat = concat_rows<D>({mixed, slice_rows(h, 1, 2)});
  Var<D> logits = add_rowvec(matmul_nt(cat, e), scale(b, 0.5));
  Var<D> ce = cross_entropy(logits, {1, 0, 2, 3}, {0, 2, 3});
  Var<D> cos = cosine_rows(slice_rows(h, 0, 2), slice_rows(reshape(h, Shape{4, 4}), 2, 2));
  Var<D> hinge = hinge_loss(cos, 0.9, -0.5);
  return add(add(ce, hinge), mean(matmul(x, w)));
}

TEST(Gradcheck, EveryOp) {
  ParamStore<D> s;
  Rng rng(9);
  s.add("x", random_tensor({4, 4}, rng));
  s.add("w", random_tensor({4, 4}, rng, 0.5));
  s.add("b", random_tensor({1, 4}, rng, 0.1));
  s.add("g", random_tensor({1, 4}, rng, 1.0));
  s.add("e", random_tensor({4, 4}, rng));
  const auto rep = gradcheck(s, op_zoo);
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst.param << "[" << rep.worst.index << "]";
  EXPECT_EQ(rep.checked, s.num_values());
}

TEST(Gradcheck, RandomThreeLayerComposite) {
  for (std::uint64_t seed : {1, 2, 3}) {
    ParamStore<D> s;
    Rng rng(seed);
    s.add("x", random_tensor({6, 5}, rng));
    for (int l = 0; l < 3; ++l) {
      s.add("w" + std::to_string(l), random_tensor({5, 5}, rng, 0.6));
      s.add("b" + std::to_string(l), random_tensor({1, 5}, rng, 0.1));
    }
    auto fn = [](Tape<D>& tp, ParamStore<D>& st) {
      Var<D> h = tp.param(st, "x");
      for (int l = 0; l < 3; ++l) {
        h = gelu(linear(h, tp.param(st, "w" + std::to_string(l)), tp.param(st, "b" + std::to_string(l))));
      }
      return mean(mul(h, h));
    };
    EXPECT_LT(gradcheck(s, fn).max_rel, 1e-4) << seed;
  }
}

TEST(Gradcheck, TransformerBlockOnFourByEight) {
  ParamStore<D> s;
  Rng rng(4);
  s.add("x", random_tensor({4, 8}, rng));
  add_block_params(s, "blk", BlockShape{8, 16}, rng);
  for (auto& [name, p] : s) {
    for (auto& v : p.value.data) v += 0.05 * std::normal_distribution<double>()(rng);
  }
  AttentionMask m(4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.allow(i, j);
  }
  auto mask = std::make_shared<const AttentionMask>(m);
  auto fn = [&](Tape<D>& tp, ParamStore<D>& st) {
    Var<D> y = transformer_block(tp.param(st, "x"), block_vars(tp, st, "blk", 2), single_segment(4, mask));
    return sum(mul(y, tp.constant(Tensor<D>({4, 8}, 0.37))));
  };
  const auto rep = gradcheck(s, fn);
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst.param << "[" << rep.worst.index << "]";
}

TEST(Gradcheck, AttentionWithRelationBias) {
  ParamStore<D> s;
  Rng rng(6);
  s.add("qkv", random_tensor({5, 12}, rng));
  s.add("bias", random_tensor({1, 3}, rng));
  auto idx = std::make_shared<std::vector<int>>(9, -1);
  for (int i = 0; i < 9; ++i) (*idx)[i] = i % 4 - 1;
  AttentionMask m(3, true);
  m.allow(0, 2, false);
  auto fn = [&](Tape<D>& tp, ParamStore<D>& st) {
    std::vector<AttentionSegment> segs = {{0, 2, {}, {}}, {2, 3, std::make_shared<const AttentionMask>(m), idx}};
    Var<D> o = segmented_attention(tp.param(st, "qkv"), 2, segs, std::optional<Var<D>>(tp.param(st, "bias")));
    return sum(mul(o, o));
  };
  const auto rep = gradcheck(s, fn);
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst.param << "[" << rep.worst.index << "]";
}

TEST(Hinge, DeadZonesHaveZeroGradient) {
  ParamStore<D> s;
  s.add("sims", Tensor<D>({3, 1}, {0.95, 0.1, 0.15}));
  Tape<D> tp;
  Var<D> loss = hinge_loss(tp.param(s, "sims"), 0.9, 0.2);
  EXPECT_EQ(tp.scalar(loss), 0.0);
  tp.backward(loss, &s);
  for (D g : s.at("sims").grad) EXPECT_EQ(g, 0.0);
  // Same at the numerical level.
  const auto rep = gradcheck(s, [](Tape<D>& t, ParamStore<D>& st) { return hinge_loss(t.param(st, "sims"), 0.9, 0.2); });
  EXPECT_EQ(rep.max_rel, 0.0);
}

TEST(Determinism, SameInputsSameBits) {
  auto run = [] {
    ParamStore<D> s;
    Rng rng(12);
    s.add("x", random_tensor({4, 8}, rng));
    add_block_params(s, "blk", BlockShape{8, 16}, rng);
    Tape<D> tp;
    Var<D> y = transformer_block(tp.param(s, "x"), block_vars(tp, s, "blk", 4), single_segment(4));
    return tp.value(y).data;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace cerespt::nn
