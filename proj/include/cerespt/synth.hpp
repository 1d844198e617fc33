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

// Deterministic synthetic session generator with a planted intent topic.
//
// The world is a fixed product catalog derived from `world_seed`: every topic
// owns an anchor word, a few product types, and (type, brand, color) product
// clusters. A session picks a topic and a target product, issues queries that
// converge on the target's canonical search phrase, interacts with related
// products (same-type, same-brand siblings tend to be added to cart) and ends
// with the purchase of the target from the last query.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cerespt/error.hpp"
#include "cerespt/rng.hpp"
#include "cerespt/session.hpp"

namespace cerespt {

struct GenConfig {
  std::size_t num_sessions = 1000;
  int vocab_topics = 40;
  int tokens_per_topic = 24;
  int types_per_topic = 4;
  int brands_per_type = 2;
  int colors_per_brand = 3;
  int num_brands = 30;
  int num_colors = 12;
  int num_noise_words = 200;
  double query_len_mean = 5.63;
  double title_len_mean = 17.42;
  double bullet_len_mean = 96.01;
  double desk_factor = 0.25;
  double queries_per_session_mean = 3.24;
  double products_per_session_mean = 4.36;
  double noise_rate = 0.3;
  std::uint64_t seed = 1;
  std::uint64_t world_seed = 1;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0)) throw InvalidArgument(std::string("GenConfig.") + name + " must be > 0");
    };
    positive(query_len_mean, "query_len_mean");
    positive(title_len_mean, "title_len_mean");
    positive(bullet_len_mean, "bullet_len_mean");
    positive(desk_factor, "desk_factor");
    positive(queries_per_session_mean, "queries_per_session_mean");
    positive(products_per_session_mean, "products_per_session_mean");
    if (queries_per_session_mean < 1 || products_per_session_mean < 1) {
      throw InvalidArgument("GenConfig: sessions need at least one query and one product");
    }
    if (!(noise_rate >= 0 && noise_rate <= 1)) {
      throw InvalidArgument("GenConfig.noise_rate must lie in [0, 1]");
    }
    if (vocab_topics < 1 || types_per_topic < 1 || brands_per_type < 1 || colors_per_brand < 1) {
      throw InvalidArgument("GenConfig: catalog dimensions must be >= 1");
    }
    if (tokens_per_topic < types_per_topic + 2) {
      throw InvalidArgument("GenConfig.tokens_per_topic must exceed types_per_topic + 1");
    }
    if (brands_per_type > num_brands || colors_per_brand > num_colors || num_noise_words < 1) {
      throw InvalidArgument("GenConfig: not enough brand, color or noise words");
    }
  }
};

struct CatalogProduct {
  Product product;
  int topic = 0;
  std::string type, brand, color;
  Tokens phrase;  // canonical search phrase
};

struct Catalog {
  std::vector<std::vector<CatalogProduct>> topics;
  std::vector<std::string> noise_words;
  std::vector<std::string> anchors;
  std::vector<std::vector<std::string>> filler;  // per-topic filler words
};

namespace detail {

inline int poisson(Rng& rng, double mean) {
  if (mean <= 0) return 0;
  return std::poisson_distribution<int>(mean)(rng);
}

inline std::string topic_word(int t, int j) {
  return "t" + std::to_string(t) + "_w" + std::to_string(j);
}

}  // namespace detail

inline Catalog build_catalog(const GenConfig& cfg) {
  cfg.validate();
  Catalog cat;
  for (int j = 0; j < cfg.num_noise_words; ++j) cat.noise_words.push_back("n" + std::to_string(j));
  Rng rng(derive_seed(cfg.world_seed, 0xCA7A106));
  auto pick = [&](const std::vector<std::string>& v) { return v[uniform_index(rng, v.size())]; };
  cat.topics.resize(cfg.vocab_topics);
  cat.filler.resize(cfg.vocab_topics);
  for (int t = 0; t < cfg.vocab_topics; ++t) {
    const std::string anchor = detail::topic_word(t, 0);
    cat.anchors.push_back(anchor);
    for (int j = 1 + cfg.types_per_topic; j < cfg.tokens_per_topic; ++j) {
      cat.filler[t].push_back(detail::topic_word(t, j));
    }
    const auto& filler = cat.filler[t];
    int k = 0;
    for (int ty = 0; ty < cfg.types_per_topic; ++ty) {
      const std::string type = detail::topic_word(t, 1 + ty);
      std::vector<int> brands(cfg.num_brands);
      for (int b = 0; b < cfg.num_brands; ++b) brands[b] = b;
      std::shuffle(brands.begin(), brands.end(), rng);
      for (int bi = 0; bi < cfg.brands_per_type; ++bi) {
        const std::string brand = "brand" + std::to_string(brands[bi]);
        std::vector<int> colors(cfg.num_colors);
        for (int c = 0; c < cfg.num_colors; ++c) colors[c] = c;
        std::shuffle(colors.begin(), colors.end(), rng);
        for (int ci = 0; ci < cfg.colors_per_brand; ++ci, ++k) {
          CatalogProduct cp;
          cp.topic = t;
          cp.type = type;
          cp.brand = brand;
          cp.color = "color" + std::to_string(colors[ci]);
          char id[32];
          std::snprintf(id, sizeof(id), "P%03d-%02d", t, k);
          cp.product.product_id = id;

          Tokens title = {brand, anchor, type, cp.color};
          const int extra_title = detail::poisson(rng, cfg.title_len_mean - 4.0);
          for (int i = 0; i < extra_title; ++i) title.push_back(pick(filler));
          std::vector<Tokens> bullets;
          const double bullet_mean = cfg.bullet_len_mean * cfg.desk_factor;
          const int bullet_tokens = 1 + detail::poisson(rng, bullet_mean - 1.0);
          for (int i = 0; i < bullet_tokens; ++i) {
            if (bullets.empty() || (bullets.back().size() >= 4 && bernoulli(rng, 0.15))) {
              bullets.emplace_back();
            }
            bullets.back().push_back(bernoulli(rng, 0.7) ? pick(filler) : pick(cat.noise_words));
          }
          cp.product.attributes.push_back(make_product_sequence(title, bullets));
          cp.product.attributes.push_back({"product_type", {type}});
          cp.product.attributes.push_back({"brand", {brand}});
          cp.product.attributes.push_back({"color", {cp.color}});

          cp.phrase = {anchor, type, cp.color};
          if (bernoulli(rng, 0.5)) cp.phrase.push_back(brand);
          const int extra_phrase = detail::poisson(rng, cfg.query_len_mean - 3.0);
          for (int i = static_cast<int>(cp.phrase.size()); i < 3 + extra_phrase; ++i) {
            cp.phrase.push_back(pick(filler));
          }
          cat.topics[t].push_back(std::move(cp));
        }
      }
    }
  }
  return cat;
}

// Every token and attribute type the world can emit, in a stable order.
inline std::vector<std::string> world_tokens(const Catalog& cat) {
  std::set<std::string> toks(cat.noise_words.begin(), cat.noise_words.end());
  for (const auto& topic : cat.topics) {
    for (const auto& cp : topic) {
      for (const auto& a : cp.product.attributes) {
        for (const auto& t : a.tokens) {
          if (t != kTitleMarker && t != kBulletMarker) toks.insert(t);
        }
      }
      toks.insert(cp.phrase.begin(), cp.phrase.end());
    }
  }
  for (const auto& f : cat.filler) toks.insert(f.begin(), f.end());
  toks.insert(cat.anchors.begin(), cat.anchors.end());
  return {toks.begin(), toks.end()};
}

inline SessionGraph generate_session(const GenConfig& cfg, const Catalog& cat, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, 0x5E55, index));
  auto pick = [&](const std::vector<std::string>& v) { return v[uniform_index(rng, v.size())]; };
  auto noised = [&](Tokens toks) {
    for (auto& t : toks) {
      if (bernoulli(rng, cfg.noise_rate)) t = pick(cat.noise_words);
    }
    return toks;
  };

  SessionGraph s;
  s.session_id = "s" + std::to_string(cfg.seed) + "-" + std::to_string(index);
  const int topic = static_cast<int>(uniform_index(rng, cat.topics.size()));
  s.intent = topic;
  const auto& shelf = cat.topics[topic];
  const std::size_t target_idx = uniform_index(rng, shelf.size());
  const CatalogProduct& target = shelf[target_idx];

  const int nq = 1 + detail::poisson(rng, cfg.queries_per_session_mean - 1.0);
  const int np = 1 + detail::poisson(rng, cfg.products_per_session_mean - 1.0);

  for (int i = 0; i + 1 < nq; ++i) {
    const double progress = static_cast<double>(i + 1) / nq;
    Tokens q = {cat.anchors[topic]};
    if (bernoulli(rng, progress)) q.push_back(target.type);
    if (bernoulli(rng, 0.5 * progress)) q.push_back(target.color);
    const int len = std::max<int>(static_cast<int>(q.size()),
                                  1 + detail::poisson(rng, cfg.query_len_mean - 1.0));
    while (static_cast<int>(q.size()) < len) q.push_back(pick(cat.filler[topic]));
    s.queries.push_back({i, noised(std::move(q))});
  }
  s.queries.push_back({nq - 1, noised(target.phrase)});

  // Interactions, each attached to the query it followed.
  struct Interaction {
    const CatalogProduct* product;
    int query;
    Action action;
  };
  std::vector<Interaction> acts;
  std::set<std::string> used = {target.product.product_id};
  for (int k = 0; k + 1 < np; ++k) {
    const CatalogProduct* chosen = nullptr;
    Action action = Action::kView;
    int query = static_cast<int>(uniform_index(rng, nq));
    for (int attempt = 0; attempt < 32 && chosen == nullptr; ++attempt) {
      const CatalogProduct* cand = nullptr;
      bool sibling = false;
      if (bernoulli(rng, cfg.noise_rate)) {
        const auto& other = cat.topics[uniform_index(rng, cat.topics.size())];
        cand = &other[uniform_index(rng, other.size())];
      } else if (bernoulli(rng, 0.35)) {
        std::vector<const CatalogProduct*> sibs;
        for (const auto& cp : shelf) {
          if (cp.type == target.type && cp.brand == target.brand && &cp != &target) {
            sibs.push_back(&cp);
          }
        }
        if (!sibs.empty()) {
          cand = sibs[uniform_index(rng, sibs.size())];
          sibling = true;
        }
      }
      if (cand == nullptr) cand = &shelf[uniform_index(rng, shelf.size())];
      if (used.count(cand->product.product_id)) continue;
      chosen = cand;
      if (sibling) {
        action = bernoulli(rng, 0.8) ? Action::kAddToCart : Action::kView;
        query = nq / 2 + static_cast<int>(uniform_index(rng, nq - nq / 2));
      } else {
        action = bernoulli(rng, 0.85) ? Action::kView : Action::kAddToCart;
      }
    }
    if (chosen == nullptr) continue;
    used.insert(chosen->product.product_id);
    acts.push_back({chosen, query, action});
  }
  if (bernoulli(rng, 0.3)) {
    acts.push_back({&target, static_cast<int>(uniform_index(rng, nq)), Action::kView});
  }
  std::stable_sort(acts.begin(), acts.end(),
                   [](const Interaction& a, const Interaction& b) { return a.query < b.query; });
  acts.push_back({&target, nq - 1, Action::kPurchase});

  std::set<std::string> listed;
  for (const auto& a : acts) {
    s.edges.push_back(Edge::query_product(a.query, a.product->product.product_id, a.action));
    if (listed.insert(a.product->product.product_id).second) {
      s.products.push_back(a.product->product);
    }
  }
  s.purchase = Purchase{nq - 1, target.product.product_id};
  return s;
}

inline std::vector<SessionGraph> generate(const GenConfig& cfg, const Catalog& cat) {
  cfg.validate();
  std::vector<SessionGraph> out;
  out.reserve(cfg.num_sessions);
  for (std::size_t i = 0; i < cfg.num_sessions; ++i) out.push_back(generate_session(cfg, cat, i));
  return out;
}

inline std::vector<SessionGraph> generate(const GenConfig& cfg) {
  return generate(cfg, build_catalog(cfg));
}

// Ground truth for tests: the planted topic of a generated session.
inline int intent_oracle(const SessionGraph& s) {
  if (!s.intent) throw InvalidArgument("session '" + s.session_id + "' is not synthetic");
  return *s.intent;
}

}  // namespace cerespt
