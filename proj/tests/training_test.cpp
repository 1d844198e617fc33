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

#include <random>
#include <sstream>

#include "cerespt/pipeline.hpp"
#include "cerespt/synth.hpp"
#include "test_util.hpp"

namespace cerespt {
namespace {

TEST(Hinge, Examples) {
  EXPECT_EQ(hinge_value(0.95, {0.1}, 0.9, 0.2), 0.0);
  EXPECT_NEAR(hinge_value(0.5, {0.2}, 0.9, 0.2), 0.16, 1e-15);
  EXPECT_EQ(hinge_value(0.9, {0.2, -1.0}, 0.9, 0.2), 0.0);
  EXPECT_NEAR(hinge_value(1.0, {0.4, 0.0}, 0.9, 0.2), 0.04 / 2, 1e-15);
  EXPECT_NEAR(hinge_value(0.0, {}, 0.9, 0.2), 0.81, 1e-15);
}

TEST(Hinge, ZeroExactlyWhenBothMarginsHold) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 5000; ++t) {
    const double pos = t % 5 == 0 ? 0.9 : u(rng);
    std::vector<double> neg(1 + t % 6);
    for (auto& v : neg) v = t % 7 == 0 ? 0.2 : u(rng) * 0.6;
    const double loss = hinge_value(pos, neg, 0.9, 0.2);
    const bool holds = pos >= 0.9 && std::all_of(neg.begin(), neg.end(), [](double v) { return v <= 0.2; });
    EXPECT_GE(loss, 0.0);
    EXPECT_EQ(loss == 0.0, holds) << pos;

    // The tape op agrees with the scalar form.
    Tensor<double> sims({neg.size() + 1, 1});
    sims.data[0] = pos;
    std::copy(neg.begin(), neg.end(), sims.data.begin() + 1);
    Tape<double> tp(false);
    EXPECT_NEAR(tp.scalar(nn::hinge_loss(tp.constant(sims), 0.9, 0.2)), loss, 1e-15);
  }
}

TEST(Hinge, GradientDeadZones) {
  nn::ParamStore<double> s;
  s.add("sims", Tensor<double>({4, 1}, {0.95, 0.1, 0.5, 0.2}));
  Tape<double> tp;
  tp.backward(nn::hinge_loss(tp.param(s, "sims"), 0.9, 0.2), &s);
  const auto& g = s.at("sims").grad;
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_NEAR(g[2], 2 * 0.3 / 3, 1e-15);
  EXPECT_EQ(g[3], 0.0);
  s.add("low", Tensor<double>({2, 1}, {0.5, 0.0}));
  Tape<double> tp2;
  tp2.backward(nn::hinge_loss(tp2.param(s, "low"), 0.9, 0.2), &s);
  EXPECT_NEAR(s.at("low").grad[0], -2 * 0.4, 1e-15);
  EXPECT_EQ(s.at("low").grad[1], 0.0);
}

struct World {
  std::vector<SessionGraph> sessions;
  Vocab vocab;
  RunConfig cfg;

  explicit World(std::size_t n, std::uint64_t seed = 1) {
    GenConfig g;
    g.num_sessions = n;
    g.vocab_topics = 6;
    g.seed = seed;
    g.desk_factor = 0.1;
    g.title_len_mean = 6;
    const Catalog cat = build_catalog(g);
    sessions = generate(g, cat);
    vocab = world_vocab(cat);
    cfg.model.d = 16;
    cfg.model.heads = 2;
    cfg.model.item_layers = 1;
    cfg.model.gat_layers = 1;
    cfg.model.cond_layers = 1;
    cfg.model.K = 2;
    cfg.model.max_token_pos = 48;
    cfg.model.vocab_size = static_cast<std::size_t>(vocab.size());
  }
};

TEST(Pretrain, SingleSessionOverfits) {
  World w(1);
  Model m(w.cfg.model, 3);
  const auto data = encode_all(w.sessions, w.vocab, w.cfg.model);
  StepLosses first, last;
  for (int step = 0; step < 60; ++step) {
    Rng rng(5);
    last = pretrain_step(m, {&data[0]}, rng, 3e-3, w.vocab.first_content_id());
    if (step == 0) first = last;
  }
  ASSERT_FALSE(first.skipped);
  EXPECT_LT(last.loss_intra, 0.5 * first.loss_intra);
  EXPECT_LT(last.loss_gmlm, 0.5 * first.loss_gmlm);
  EXPECT_EQ(m.params().step(), 60u);
}

TEST(Pretrain, NeverMasksSpecialTokens) {
  World w(30);
  const auto data = encode_all(w.sessions, w.vocab, w.cfg.model);
  std::vector<const EncodedSession*> ptrs;
  for (const auto& d : data) ptrs.push_back(&d);
  Rng rng(2);
  const MaskedBatch mb = mask_batch(ptrs, rng, w.vocab.first_content_id(), w.vocab.size());
  ASSERT_FALSE(mb.targets.empty());
  for (int t : mb.targets) EXPECT_FALSE(w.vocab.is_special(t));
}

TEST(Pretrain, WithoutConditioningOnlyIntraLoss) {
  World w(20);
  RunConfig cfg = w.cfg;
  cfg.model.use_cond = false;
  Model m(cfg.model, 3);
  const auto data = encode_all(w.sessions, w.vocab, cfg.model);
  Rng rng(1);
  const StepLosses l = pretrain_step(m, {&data[0], &data[1]}, rng, 1e-3, w.vocab.first_content_id());
  EXPECT_EQ(l.loss_gmlm, 0.0);
  EXPECT_EQ(l.total, l.loss_intra);
  // Session-encoder weights receive zero gradient and stay put.
  Model fresh(cfg.model, 3);
  EXPECT_EQ(m.params().at("cond.blk0.attn.wqkv").value.data, fresh.params().at("cond.blk0.attn.wqkv").value.data);
  EXPECT_NE(m.params().at("tok_emb").value.data, fresh.params().at("tok_emb").value.data);
}

TEST(Pretrain, ReplayIsBitIdenticalAndLogsEveryStep) {
  World w(40);
  const auto data = encode_all(w.sessions, w.vocab, w.cfg.model);
  PretrainConfig pc;
  pc.steps = 6;
  pc.batch_size = 4;
  pc.peak_lr = 1e-3;
  pc.floor_lr = 1e-4;
  Model a(w.cfg.model, 9), b(w.cfg.model, 9);
  std::ostringstream la, lb;
  pretrain(a, data, pc, w.vocab.first_content_id(), &la);
  pretrain(b, data, pc, w.vocab.first_content_id(), &lb);
  EXPECT_EQ(la.str(), lb.str());
  const std::string text = la.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
  for (const auto& [name, p] : a.params()) EXPECT_EQ(p.value.data, b.params().at(name).value.data) << name;
  pc.seed = 2;
  Model c(w.cfg.model, 9);
  pretrain(c, data, pc, w.vocab.first_content_id());
  EXPECT_NE(c.params().at("tok_emb").value.data, a.params().at("tok_emb").value.data);
}

TEST(Pretrain, RejectsBadConfig) {
  World w(4);
  const auto data = encode_all(w.sessions, w.vocab, w.cfg.model);
  Model m(w.cfg.model, 1);
  PretrainConfig pc;
  pc.floor_lr = 1;
  EXPECT_THROW(pretrain(m, data, pc, w.vocab.first_content_id()), InvalidArgument);
  EXPECT_THROW(pretrain(m, {}, PretrainConfig{}, w.vocab.first_content_id()), InvalidArgument);
}

struct Prepared {
  TaskSplits splits;
  PreparedSplit train, val;
};

Prepared prepare(const World& w, Task task) {
  Prepared p;
  p.splits = build_task_dataset(w.sessions, task_variant(task), {0.7, 0.3, 0.0}, 3);
  p.train = prepare_split(task, p.splits.train, w.vocab, w.cfg.model);
  p.val = prepare_split(task, p.splits.val, w.vocab, w.cfg.model);
  return p;
}

TEST(Finetune, GridRunsAndBestSelection) {
  World w(120);
  Model base(w.cfg.model, 4);
  const Prepared p = prepare(w, Task::kProductSearch);
  FinetuneConfig fc;
  fc.epochs = 2;
  fc.lr_grid = {1e-3, 1e-4};
  std::ostringstream log;
  const auto res = finetune(base, p.train, p.val, fc, &log);
  ASSERT_EQ(res.runs.size(), 2u);
  double best = -1;
  for (const auto& r : res.runs) {
    EXPECT_EQ(r.val_map1.size(), 3u);
    for (double v : r.val_map1) best = std::max(best, v);
  }
  EXPECT_EQ(res.best_val_map1, best);
  EXPECT_TRUE(res.best.contains("ft.session.w"));
  const std::string text = log.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
  // The base model is left untouched.
  EXPECT_FALSE(base.has_finetune_maps());
}

TEST(Finetune, TrainingImprovesValidationMap) {
  World w(300);
  Model base(w.cfg.model, 5);
  const Prepared p = prepare(w, Task::kQuerySearch);
  FinetuneConfig fc;
  fc.task = Task::kQuerySearch;
  fc.epochs = 4;
  fc.lr_grid = {2e-3};
  const auto res = finetune(base, p.train, p.val, fc);
  EXPECT_GT(res.best_val_map1, res.runs[0].val_map1[0]);
  EXPECT_GT(res.best_epoch, 0u);
}

TEST(Finetune, DeterministicForFixedSeed) {
  World w(80);
  Model base(w.cfg.model, 6);
  const Prepared p = prepare(w, Task::kProductSearch);
  FinetuneConfig fc;
  fc.epochs = 1;
  fc.lr_grid = {1e-3};
  const auto a = finetune(base, p.train, p.val, fc);
  const auto b = finetune(base, p.train, p.val, fc);
  EXPECT_EQ(a.runs[0].val_map1, b.runs[0].val_map1);
  for (const auto& [name, q] : a.best) EXPECT_EQ(q.value.data, b.best.at(name).value.data) << name;
}

TEST(Finetune, StepReducesLossOnRepeatedBatch) {
  World w(40);
  Model m(w.cfg.model, 7);
  m.add_finetune_maps();
  const Prepared p = prepare(w, Task::kProductSearch);
  std::vector<const EncodedSession*> sessions;
  std::vector<std::vector<const EncodedItem*>> cands;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& ex = p.splits.train.examples[i];
    sessions.push_back(&p.train.sessions[i]);
    std::vector<const EncodedItem*> g{&p.train.pool.items[p.train.pool.index.at(ex.label.product.product_id)].item};
    for (const auto& c : p.train.pool.items) {
      if (c.id != ex.label.product.product_id && g.size() < 4) g.push_back(&c.item);
    }
    cands.push_back(g);
  }
  FinetuneConfig fc;
  const double first = finetune_step(m, sessions, cands, fc, 3e-3);
  double last = first;
  for (int i = 0; i < 30; ++i) last = finetune_step(m, sessions, cands, fc, 3e-3);
  EXPECT_LT(last, first);
}

TEST(Finetune, RejectsBadConfig) {
  FinetuneConfig fc;
  fc.eps_neg = 0.95;
  EXPECT_THROW(fc.validate(), InvalidArgument);
  fc = FinetuneConfig{};
  fc.lr_grid.clear();
  EXPECT_THROW(fc.validate(), InvalidArgument);
}

}  // namespace
}  // namespace cerespt
