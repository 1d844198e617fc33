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

// Session relational graph: ordered queries, a product set, and typed edges.

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cerespt/error.hpp"

namespace cerespt {

inline constexpr std::string_view kProductSequence = "product_sequence";
inline constexpr std::string_view kTitleMarker = "[TITLE]";
inline constexpr std::string_view kBulletMarker = "[BULLET]";

using Tokens = std::vector<std::string>;

struct Query {
  int index = 0;
  Tokens tokens;

  bool operator==(const Query&) const = default;
};

// For the product_sequence attribute the token stream carries [TITLE] and
// [BULLET] markers: [TITLE] t1 t2 [BULLET] b1 b2 [BULLET] b3.
struct Attribute {
  std::string attr_type;
  Tokens tokens;

  bool operator==(const Attribute&) const = default;
};

struct Product {
  std::string product_id;
  std::vector<Attribute> attributes;

  bool operator==(const Product&) const = default;
};

enum class EdgeKind { kQueryQuery, kQueryProduct };

enum class Action { kView, kAddToCart, kPurchase };

inline std::string_view action_name(Action a) {
  switch (a) {
    case Action::kView:
      return "view";
    case Action::kAddToCart:
      return "add_to_cart";
    case Action::kPurchase:
      return "purchase";
  }
  return "view";
}

// "click" is accepted as an alias of "view".
inline std::optional<Action> parse_action(std::string_view s) {
  if (s == "view" || s == "click") return Action::kView;
  if (s == "add_to_cart") return Action::kAddToCart;
  if (s == "purchase") return Action::kPurchase;
  return std::nullopt;
}

// QueryQuery edges are stored as (earlier, later) and read later -> earlier.
struct Edge {
  EdgeKind kind = EdgeKind::kQueryProduct;
  int src = 0;
  int dst_query = -1;
  std::string product_id;
  int distance = 0;
  Action action = Action::kView;

  static Edge query_query(int earlier, int later, int distance) {
    Edge e;
    e.kind = EdgeKind::kQueryQuery;
    e.src = earlier;
    e.dst_query = later;
    e.distance = distance;
    return e;
  }
  static Edge query_product(int query, std::string product, Action action) {
    Edge e;
    e.kind = EdgeKind::kQueryProduct;
    e.src = query;
    e.product_id = std::move(product);
    e.action = action;
    return e;
  }

  bool operator==(const Edge&) const = default;
};

struct Purchase {
  int query = 0;
  std::string product_id;

  bool operator==(const Purchase&) const = default;
};

struct SessionGraph {
  std::string session_id;
  std::vector<Query> queries;
  std::vector<Product> products;
  // Chronological. QueryQuery edges are optional here; they are derivable.
  std::vector<Edge> edges;
  std::optional<Purchase> purchase;
  // Planted intent topic of synthetic sessions; absent for real data.
  std::optional<int> intent;

  bool operator==(const SessionGraph&) const = default;

  const Product* find_product(std::string_view id) const {
    for (const auto& p : products) {
      if (p.product_id == id) return &p;
    }
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Product sequence helpers.

inline Attribute make_product_sequence(const Tokens& title,
                                       const std::vector<Tokens>& bullets) {
  Attribute a;
  a.attr_type = std::string(kProductSequence);
  a.tokens.emplace_back(kTitleMarker);
  a.tokens.insert(a.tokens.end(), title.begin(), title.end());
  for (const auto& b : bullets) {
    a.tokens.emplace_back(kBulletMarker);
    a.tokens.insert(a.tokens.end(), b.begin(), b.end());
  }
  return a;
}

struct ProductText {
  Tokens title;
  std::vector<Tokens> bullets;
};

inline ProductText split_product_sequence(const Attribute& a) {
  ProductText out;
  Tokens* cur = nullptr;
  for (const auto& tok : a.tokens) {
    if (tok == kTitleMarker) {
      cur = &out.title;
    } else if (tok == kBulletMarker) {
      out.bullets.emplace_back();
      cur = &out.bullets.back();
    } else if (cur != nullptr) {
      cur->push_back(tok);
    } else {
      // Unmarked leading text is treated as title.
      out.title.push_back(tok);
    }
  }
  return out;
}

inline std::string join_tokens(const Tokens& toks, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += sep;
    out += toks[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph laws.

struct Violation {
  std::string code;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

inline std::vector<Edge> derive_query_chain_edges(const SessionGraph& s) {
  std::vector<Edge> out;
  const int n = static_cast<int>(s.queries.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) out.push_back(Edge::query_query(i, j, j - i));
  }
  return out;
}

inline std::vector<Violation> validate_session(const SessionGraph& s) {
  std::vector<Violation> v;
  auto add = [&](std::string code, std::string detail) {
    v.push_back({std::move(code), std::move(detail)});
  };
  if (s.session_id.empty()) add("empty_session_id", "session_id");
  if (s.queries.empty()) add("no_queries", "session has no queries");
  const int nq = static_cast<int>(s.queries.size());
  for (int i = 0; i < nq; ++i) {
    const auto& q = s.queries[i];
    if (q.index != i) {
      add("query_index", "queries[" + std::to_string(i) + "] has index " +
                             std::to_string(q.index));
    }
    if (q.tokens.empty()) add("empty_query", "queries[" + std::to_string(i) + "]");
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < s.products.size(); ++i) {
    const auto& p = s.products[i];
    const std::string where = "products[" + std::to_string(i) + "]";
    if (p.product_id.empty()) add("empty_product_id", where);
    if (!ids.insert(p.product_id).second) add("duplicate_product", p.product_id);
    if (p.attributes.empty() || p.attributes[0].attr_type != kProductSequence) {
      add("missing_product_sequence", p.product_id);
    }
    for (std::size_t k = 0; k < p.attributes.size(); ++k) {
      const auto& a = p.attributes[k];
      const std::string aw = where + ".attributes[" + std::to_string(k) + "]";
      if (a.attr_type.empty()) add("empty_attr_type", aw);
      bool has_content = false;
      for (const auto& t : a.tokens) {
        if (t != kTitleMarker && t != kBulletMarker) has_content = true;
      }
      if (!has_content) add("empty_attribute", aw);
    }
    if (!p.attributes.empty() && p.attributes[0].attr_type == kProductSequence) {
      const auto text = split_product_sequence(p.attributes[0]);
      if (text.title.empty()) add("missing_title", p.product_id);
    }
  }
  std::set<std::string> linked;
  int purchases = 0;
  std::optional<Purchase> purchase_edge;
  for (std::size_t e = 0; e < s.edges.size(); ++e) {
    const auto& edge = s.edges[e];
    const std::string where = "edges[" + std::to_string(e) + "]";
    if (edge.src < 0 || edge.src >= nq) {
      add("dangling_edge", where + " source query " + std::to_string(edge.src));
      continue;
    }
    if (edge.kind == EdgeKind::kQueryQuery) {
      if (edge.dst_query < 0 || edge.dst_query >= nq) {
        add("dangling_edge", where + " target query " + std::to_string(edge.dst_query));
        continue;
      }
      if (edge.src >= edge.dst_query) {
        add("edge_direction", where + " expects src < dst");
      }
      if (edge.distance != edge.dst_query - edge.src) {
        add("distance_mismatch", where + " distance " + std::to_string(edge.distance) +
                                     " != " + std::to_string(edge.dst_query - edge.src));
      }
    } else {
      if (!ids.count(edge.product_id)) {
        add("dangling_edge", where + " product " + edge.product_id);
        continue;
      }
      linked.insert(edge.product_id);
      if (edge.action == Action::kPurchase) {
        ++purchases;
        purchase_edge = Purchase{edge.src, edge.product_id};
      }
    }
  }
  for (const auto& p : s.products) {
    if (!linked.count(p.product_id)) add("orphan_product", p.product_id);
  }
  if (purchases > 1) add("multiple_purchases", std::to_string(purchases) + " purchase edges");
  if (purchases <= 1 && purchase_edge != s.purchase) {
    add("purchase_mismatch", "purchase field disagrees with purchase edges");
  }
  return v;
}

// Canonical form drops the derivable QueryQuery edges.
inline SessionGraph canonicalize(SessionGraph s) {
  std::erase_if(s.edges, [](const Edge& e) { return e.kind == EdgeKind::kQueryQuery; });
  return s;
}

inline std::string query_key(const Tokens& tokens) { return join_tokens(tokens); }

// Items in session order: queries by search index, then products in order of
// their first edge.
inline std::vector<std::string> product_order(const SessionGraph& s) {
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const auto& e : s.edges) {
    if (e.kind != EdgeKind::kQueryProduct) continue;
    if (seen.insert(e.product_id).second) order.push_back(e.product_id);
  }
  for (const auto& p : s.products) {
    if (seen.insert(p.product_id).second) order.push_back(p.product_id);
  }
  return order;
}

}  // namespace cerespt
