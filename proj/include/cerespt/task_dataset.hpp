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

// Finetuning datasets with the purchase (and optionally the last query)
// scrubbed from each session, split so that test last queries never occur in
// train or validation.

#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cerespt/error.hpp"
#include "cerespt/rng.hpp"
#include "cerespt/session.hpp"

namespace cerespt {

enum class DatasetVariant { kFull, kWithoutPurchase, kWithoutLastQuery };
enum class Split { kTrain, kVal, kTest };

inline std::string_view variant_name(DatasetVariant v) {
  switch (v) {
    case DatasetVariant::kFull:
      return "full";
    case DatasetVariant::kWithoutPurchase:
      return "without_purchase";
    case DatasetVariant::kWithoutLastQuery:
      return "without_last_query";
  }
  return "full";
}

// Targets are extracted from the original session before any scrubbing.
struct TaskLabel {
  Product product;                    // purchased product
  Query last_query;                   // query that led to the purchase
  std::vector<Attribute> attributes;  // purchased product's non-sequence attributes
};

struct TaskExample {
  SessionGraph session;
  TaskLabel label;
  std::string last_query_key;
};

struct TaskDataset {
  DatasetVariant variant = DatasetVariant::kFull;
  Split split = Split::kTrain;
  std::vector<TaskExample> examples;
};

struct TaskSplits {
  TaskDataset train, val, test;
  std::size_t dropped = 0;  // sessions that became illegal after scrubbing
};

struct SplitRatios {
  double train = 0.8, val = 0.1, test = 0.1;
};

namespace detail {

inline void reindex_queries(SessionGraph& s, const std::vector<bool>& keep) {
  std::vector<int> remap(s.queries.size(), -1);
  std::vector<Query> queries;
  for (std::size_t i = 0; i < s.queries.size(); ++i) {
    if (!keep[i]) continue;
    remap[i] = static_cast<int>(queries.size());
    queries.push_back(s.queries[i]);
    queries.back().index = remap[i];
  }
  s.queries = std::move(queries);
  std::vector<Edge> edges;
  for (auto e : s.edges) {
    if (e.kind == EdgeKind::kQueryQuery) continue;
    if (remap[e.src] < 0) continue;
    e.src = remap[e.src];
    edges.push_back(std::move(e));
  }
  s.edges = std::move(edges);
  if (s.purchase) {
    if (remap[s.purchase->query] < 0) {
      s.purchase.reset();
    } else {
      s.purchase->query = remap[s.purchase->query];
    }
  }
}

inline void drop_products(SessionGraph& s, const std::set<std::string>& ids) {
  std::erase_if(s.products, [&](const Product& p) { return ids.count(p.product_id) > 0; });
  std::erase_if(s.edges, [&](const Edge& e) {
    return e.kind == EdgeKind::kQueryProduct && ids.count(e.product_id) > 0;
  });
  if (s.purchase && ids.count(s.purchase->product_id)) s.purchase.reset();
}

}  // namespace detail

// Removes the purchase action and every trace of the purchased product.
inline SessionGraph without_purchase(const SessionGraph& s) {
  SessionGraph out = canonicalize(s);
  if (!s.purchase) return out;
  detail::drop_products(out, {s.purchase->product_id});
  std::erase_if(out.edges, [](const Edge& e) { return e.action == Action::kPurchase; });
  out.purchase.reset();
  return out;
}

// Additionally removes the purchase query, its earlier occurrences (same
// token sequence) and the products interacted with from those queries.
// Returns nullopt when no query would remain.
inline std::optional<SessionGraph> without_last_query(const SessionGraph& s) {
  if (!s.purchase) return without_purchase(s);
  const Tokens& last = s.queries.at(s.purchase->query).tokens;
  SessionGraph out = without_purchase(s);
  std::vector<bool> keep(out.queries.size(), true);
  std::set<int> removed;
  for (std::size_t i = 0; i < out.queries.size(); ++i) {
    if (out.queries[i].tokens == last) {
      keep[i] = false;
      removed.insert(static_cast<int>(i));
    }
  }
  std::set<std::string> products;
  for (const auto& e : out.edges) {
    if (e.kind == EdgeKind::kQueryProduct && removed.count(e.src)) products.insert(e.product_id);
  }
  detail::drop_products(out, products);
  detail::reindex_queries(out, keep);
  if (out.queries.empty()) return std::nullopt;
  return out;
}

inline TaskSplits build_task_dataset(const std::vector<SessionGraph>& sessions,
                                     DatasetVariant variant, SplitRatios ratios,
                                     std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      ratios.train + ratios.val + ratios.test <= 0) {
    throw InvalidArgument("split ratios must be non-negative with a positive sum");
  }
  std::vector<TaskExample> examples;
  TaskSplits out;
  for (const auto& s : sessions) {
    if (!s.purchase) throw InvalidArgument("session '" + s.session_id + "' has no purchase");
    const Product* bought = s.find_product(s.purchase->product_id);
    if (bought == nullptr || s.purchase->query < 0 ||
        s.purchase->query >= static_cast<int>(s.queries.size())) {
      throw InvalidArgument("session '" + s.session_id + "' has a dangling purchase");
    }
    TaskExample ex;
    ex.label.product = *bought;
    ex.label.last_query = s.queries[s.purchase->query];
    for (std::size_t k = 1; k < bought->attributes.size(); ++k) {
      ex.label.attributes.push_back(bought->attributes[k]);
    }
    ex.last_query_key = query_key(ex.label.last_query.tokens);
    switch (variant) {
      case DatasetVariant::kFull:
        ex.session = canonicalize(s);
        break;
      case DatasetVariant::kWithoutPurchase:
        ex.session = without_purchase(s);
        break;
      case DatasetVariant::kWithoutLastQuery: {
        auto scrubbed = without_last_query(s);
        if (!scrubbed) {
          ++out.dropped;
          continue;
        }
        ex.session = std::move(*scrubbed);
        break;
      }
    }
    examples.push_back(std::move(ex));
  }

  // Whole last-query groups go to test, so test last queries are disjoint
  // from train and validation.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) groups[examples[i].last_query_key].push_back(i);
  std::vector<const std::vector<std::size_t>*> order;
  for (const auto& [key, members] : groups) order.push_back(&members);
  Rng rng(derive_seed(seed, 0x5e17));
  std::shuffle(order.begin(), order.end(), rng);

  const double total = ratios.train + ratios.val + ratios.test;
  const auto n = examples.size();
  const auto test_target = static_cast<std::size_t>(n * ratios.test / total + 0.5);
  std::vector<bool> in_test(n, false);
  std::size_t n_test = 0;
  for (const auto* g : order) {
    if (n_test >= test_target) break;
    for (auto i : *g) in_test[i] = true;
    n_test += g->size();
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!in_test[i]) rest.push_back(i);
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  const double tv = ratios.train + ratios.val;
  const auto n_val =
      tv > 0 ? static_cast<std::size_t>(rest.size() * ratios.val / tv + 0.5) : std::size_t{0};
  std::vector<bool> in_val(n, false);
  for (std::size_t k = 0; k < n_val && k < rest.size(); ++k) in_val[rest[k]] = true;

  out.train.variant = out.val.variant = out.test.variant = variant;
  out.train.split = Split::kTrain;
  out.val.split = Split::kVal;
  out.test.split = Split::kTest;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = in_test[i] ? out.test : (in_val[i] ? out.val : out.train);
    dst.examples.push_back(std::move(examples[i]));
  }
  return out;
}

}  // namespace cerespt
