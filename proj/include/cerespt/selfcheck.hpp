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

// Built-in checks run by `ceres gradcheck` and `ceres selftest`.

#pragma once

#include "cerespt/nn/gradcheck.hpp"
#include "cerespt/training.hpp"

namespace cerespt {

// Two queries and two products: a query chain edge, a view and a purchase.
inline SessionGraph toy_session() {
  SessionGraph s;
  s.session_id = "toy";
  s.queries = {{0, {"red", "mug"}}, {1, {"red", "ceramic", "mug"}}};
  s.products.push_back({"A", {make_product_sequence({"ceramic", "mug"}, {{"holds", "tea"}, {"red", "glaze"}}),
                               {"color", {"red"}}, {"brand", {"acme"}}}});
  s.products.push_back({"B", {make_product_sequence({"steel", "mug"}, {{"holds", "coffee"}}),
                               {"color", {"grey"}}}});
  s.edges = {Edge::query_product(0, "B", Action::kView), Edge::query_product(1, "A", Action::kPurchase)};
  s.purchase = Purchase{1, "A"};
  return s;
}

inline CeresConfig tiny_config(std::size_t vocab_size) {
  CeresConfig c;
  c.d = 8;
  c.heads = 2;
  c.item_layers = 1;
  c.gat_layers = 1;
  c.cond_layers = 1;
  c.K = 2;
  c.mlp_ratio = 2;
  c.max_token_pos = 16;
  c.max_item_pos = 4;
  c.vocab_size = vocab_size;
  return c;
}

// Max relative error of dL/dtheta against central differences for the joint
// pretraining loss plus a retrieval hinge term, on the toy session.
inline nn::GradcheckReport full_model_gradcheck(std::uint64_t seed, nn::GradcheckOptions opt = {}) {
  const SessionGraph s = toy_session();
  const Vocab vocab = build_vocab(std::vector<SessionGraph>{s});
  CeresModel<double> model(tiny_config(static_cast<std::size_t>(vocab.size())), seed);
  model.add_finetune_maps();
  // Perturb the zero-initialized biases and maps so no term sits at a
  // degenerate point.
  Rng rng(derive_seed(seed, 0x9C));
  for (auto& [name, p] : model.params()) {
    for (auto& v : p.value.data) v += 0.05 * (uniform01(rng) - 0.5);
  }
  const EncodedSession enc = encode_session(s, vocab, model.config());
  MaskingRates rates;
  rates.long_select = 0.4;
  MaskedBatch mb;
  for (std::uint64_t k = 0; mb.positions.size() < 4; ++k) {
    Rng mrng(derive_seed(seed, 0x3A5C, k));
    mb = mask_batch({&enc}, mrng, vocab.first_content_id(), vocab.size(), rates);
  }
  const std::vector<const EncodedItem*> cands{&enc.items[2], &enc.items[3], &enc.items[0]};
  nn::LossFn fn = [&](Tape<double>& tp, nn::ParamStore<double>&) {
    auto obj = pretrain_objective(model, tp, mb);
    Var<double> sess = model.project(tp, model.embed_sessions(tp, {&enc}, true), true);
    Var<double> items = model.project(tp, model.embed_items(tp, cands), false);
    Var<double> sims = nn::cosine_rows(nn::gather_rows(sess, {0, 0, 0}), items);
    return nn::add(obj.total, nn::hinge_loss(sims, 0.9, 0.2));
  };
  opt.seed = seed;
  return nn::gradcheck(model.params(), fn, opt);
}

struct CheckResult {
  std::string name;
  bool ok = false;
  std::string detail;
};

// Metric oracles on random rankings and masking frequencies.
inline std::vector<CheckResult> selftest(std::uint64_t seed = 1) {
  std::vector<CheckResult> out;
  Rng rng(derive_seed(seed, 0x5E1F));
  {
    std::vector<RankedResult> rs(3);
    const std::size_t ranks[] = {1, 2, 4};
    for (int i = 0; i < 3; ++i) rs[i].rank = ranks[i];
    const double v = map_at_n(rs, 10);
    out.push_back({"map hand case", std::abs(v - 1.75 / 3) < 1e-12, std::to_string(v)});
  }
  {
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<RankedResult> rs(1 + uniform_index(rng, 30));
      for (auto& r : rs) {
        r.query_key = "q" + std::to_string(uniform_index(rng, 5));
        r.rank = bernoulli(rng, 0.2) ? kNotRetrieved : 1 + uniform_index(rng, 20);
      }
      const std::size_t N = 1 + uniform_index(rng, 16);
      double naive = 0;
      for (const auto& r : rs) naive += (r.rank <= N) ? 1.0 / static_cast<double>(r.rank) : 0.0;
      worst = std::max(worst, std::abs(naive / static_cast<double>(rs.size()) - map_at_n(rs, N)));
      std::size_t hit = 0;
      for (const auto& r : rs) hit += r.rank <= N;
      worst = std::max(worst, std::abs(static_cast<double>(hit) / static_cast<double>(rs.size()) - recall_at_n(rs, N)));
      if (mapq_at_n(rs, N) < 0 || mapq_at_n(rs, N) > 1 || mrrq_at_n(rs, N) > hit_by_query(rs, N) + 1e-12) worst = 1;
    }
    out.push_back({"metric oracles", worst < 1e-12, "max deviation " + std::to_string(worst)});
  }
  {
    TokenSeq seq(100000, Vocab::kBullet + 1);
    for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = Vocab::kBullet + 1 + static_cast<int>(i % 50);
    Rng mrng(derive_seed(seed, 0x3A));
    MaskedSeq m = mask(seq, FieldClass::kLong, mrng, Vocab::kBullet + 1, Vocab::kBullet + 51);
    const double rate = static_cast<double>(m.mask_positions.size()) / seq.size();
    std::size_t masked = 0;
    for (int p : m.mask_positions) masked += m.input_ids[p] == Vocab::kMask;
    const double frac = static_cast<double>(masked) / m.mask_positions.size();
    out.push_back({"long masking rates", std::abs(rate - 0.15) <= 0.005 && std::abs(frac - 0.8) <= 0.01,
                   "selected " + std::to_string(rate) + ", [MASK] " + std::to_string(frac)});
  }
  {
    const TokenSeq seq{Vocab::kSearch, Vocab::kBullet + 1, Vocab::kBullet + 2};
    bool special_ok = true;
    for (int i = 0; i < 2000; ++i) {
      MaskedSeq m = mask(seq, FieldClass::kShort, rng, Vocab::kBullet + 1, Vocab::kBullet + 3);
      for (int p : m.mask_positions) special_ok = special_ok && p != 0;
      for (std::size_t p = 0; p < seq.size(); ++p) {
        const bool sel = std::find(m.mask_positions.begin(), m.mask_positions.end(), static_cast<int>(p)) !=
                         m.mask_positions.end();
        if (!sel) special_ok = special_ok && m.input_ids[p] == m.target_ids[p];
      }
    }
    out.push_back({"special tokens never masked", special_ok, ""});
  }
  return out;
}

}  // namespace cerespt
