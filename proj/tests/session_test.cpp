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

#include <sstream>

#include "cerespt/session_io.hpp"
#include "cerespt/synth.hpp"
#include "cerespt/task_dataset.hpp"
#include "test_util.hpp"

namespace cerespt {
namespace {

using testing::random_session;
using testing::simple_product;

SessionGraph minimal_session() {
  SessionGraph s;
  s.session_id = "m";
  s.queries = {{0, {"mug"}}};
  s.products = {simple_product("p", {"blue", "mug"})};
  s.edges = {Edge::query_product(0, "p", Action::kPurchase)};
  s.purchase = Purchase{0, "p"};
  return s;
}

std::vector<std::string> codes(const std::vector<Violation>& v) {
  std::vector<std::string> out;
  for (const auto& x : v) out.push_back(x.code);
  return out;
}

TEST(ValidateSession, MinimalSessionIsLegal) { EXPECT_TRUE(validate_session(minimal_session()).empty()); }

TEST(ValidateSession, DistanceMismatch) {
  SessionGraph s = minimal_session();
  s.queries.push_back({1, {"big", "mug"}});
  s.edges.push_back(Edge::query_query(0, 1, 2));
  EXPECT_EQ(codes(validate_session(s)), std::vector<std::string>{"distance_mismatch"});
}

TEST(ValidateSession, OrphanProduct) {
  SessionGraph s = minimal_session();
  s.products.push_back(simple_product("lonely", {"cup"}));
  const auto v = validate_session(s);
  ASSERT_EQ(codes(v), std::vector<std::string>{"orphan_product"});
  EXPECT_EQ(v[0].detail, "lonely");
}

TEST(ValidateSession, NamesEachBrokenLaw) {
  SessionGraph s = minimal_session();
  s.queries[0].index = 3;
  s.products[0].attributes.insert(s.products[0].attributes.begin(), Attribute{"color", {"red"}});
  s.edges.push_back(Edge::query_product(0, "ghost", Action::kView));
  s.edges.push_back(Edge::query_product(0, "p", Action::kPurchase));
  const auto c = codes(validate_session(s));
  for (const char* want : {"query_index", "missing_product_sequence", "dangling_edge", "multiple_purchases"}) {
    EXPECT_NE(std::find(c.begin(), c.end(), want), c.end()) << want;
  }
}

TEST(ValidateSession, PurchaseFieldMustAgreeWithEdges) {
  SessionGraph s = minimal_session();
  s.purchase.reset();
  EXPECT_EQ(codes(validate_session(s)), std::vector<std::string>{"purchase_mismatch"});
}

TEST(QueryChain, ThreeQueries) {
  SessionGraph s = minimal_session();
  s.queries = {{0, {"a"}}, {1, {"b"}}, {2, {"c"}}};
  const auto e = derive_query_chain_edges(s);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0], Edge::query_query(0, 1, 1));
  EXPECT_EQ(e[1], Edge::query_query(0, 2, 2));
  EXPECT_EQ(e[2], Edge::query_query(1, 2, 1));
}

TEST(QueryChain, SingleQueryHasNoEdges) { EXPECT_TRUE(derive_query_chain_edges(minimal_session()).empty()); }

TEST(QueryChain, FourQueriesDistances) {
  SessionGraph s = minimal_session();
  s.queries = {{0, {"a"}}, {1, {"b"}}, {2, {"c"}}, {3, {"d"}}};
  std::multiset<int> dist;
  for (const auto& e : derive_query_chain_edges(s)) dist.insert(e.distance);
  EXPECT_EQ(dist, (std::multiset<int>{1, 1, 1, 2, 2, 3}));
}

TEST(QueryChain, CountAndIdempotence) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    SessionGraph s = random_session(rng, "r" + std::to_string(t), 9, 3);
    const auto e = derive_query_chain_edges(s);
    const std::size_t n = s.queries.size();
    EXPECT_EQ(e.size(), n * (n - 1) / 2);
    SessionGraph with = s;
    with.edges.insert(with.edges.end(), e.begin(), e.end());
    EXPECT_TRUE(validate_session(with).empty());
    EXPECT_EQ(derive_query_chain_edges(with), e);
  }
}

TEST(SessionIo, RoundTripRandomSessions) {
  Rng rng(11);
  std::vector<SessionGraph> in;
  for (int i = 0; i < 50; ++i) in.push_back(random_session(rng, "s" + std::to_string(i)));
  in[3].intent = 7;
  std::stringstream buf;
  write_sessions(buf, in);
  const auto out = read_sessions(buf);
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(out[i], canonicalize(in[i])) << i;
}

TEST(SessionIo, StoredQueryEdgesAreValidatedAndDropped) {
  std::stringstream buf;
  buf << kSessionsHeader << "\n"
      << R"({"session_id":"x","queries":[{"index":0,"tokens":["a"]},{"index":1,"tokens":["b"]}],)"
      << R"("products":[{"product_id":"p","attributes":[{"type":"product_sequence","tokens":["[TITLE]","t"]}]}],)"
      << R"("edges":[{"query":1,"product":"p","action":"purchase"}],"purchase":{"query":1,"product":"p"},)"
      << R"("query_edges":[{"src":0,"dst":1,"distance":1}]})" << "\n";
  const auto s = read_sessions(buf);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].edges.size(), 1u);

  std::stringstream bad;
  bad << kSessionsHeader << "\n"
      << R"({"session_id":"x","queries":[{"index":0,"tokens":["a"]},{"index":1,"tokens":["b"]}],)"
      << R"("products":[{"product_id":"p","attributes":[{"type":"product_sequence","tokens":["[TITLE]","t"]}]}],)"
      << R"("edges":[{"query":1,"product":"p","action":"purchase"}],"purchase":{"query":1,"product":"p"},)"
      << R"("query_edges":[{"src":0,"dst":1,"distance":4}]})" << "\n";
  try {
    read_sessions(bad);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("distance_mismatch"), std::string::npos) << e.what();
  }
}

std::string error_of(const std::string& text) {
  std::stringstream in(text);
  try {
    read_sessions(in);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

TEST(SessionIo, TruncatedFinalLineReportsThatLine) {
  Rng rng(5);
  std::stringstream buf;
  write_sessions(buf, {random_session(rng, "a"), random_session(rng, "b")});
  std::string text = buf.str();
  text.resize(text.size() - 10);
  const std::string err = error_of(text);
  EXPECT_NE(err.find("line 3"), std::string::npos) << err;
}

TEST(SessionIo, UnknownActionNamesTheAction) {
  Rng rng(5);
  std::stringstream buf;
  write_sessions(buf, {random_session(rng, "a")});
  std::string text = buf.str();
  const std::string key = "\"action\":\"purchase\"";
  const auto at = text.find(key);
  ASSERT_NE(at, std::string::npos);
  text.replace(at, key.size(), "\"action\":\"wishlist\"");
  const std::string err = error_of(text);
  EXPECT_NE(err.find("wishlist"), std::string::npos) << err;
  EXPECT_NE(err.find("line 2"), std::string::npos) << err;
  EXPECT_NE(err.find(".action"), std::string::npos) << err;
}

TEST(SessionIo, MissingFieldNamesThePath) {
  std::string text = std::string(kSessionsHeader) + "\n" +
                     R"({"session_id":"x","queries":[{"index":0}],"products":[],"edges":[]})" + "\n";
  const std::string err = error_of(text);
  EXPECT_NE(err.find("queries[0].tokens"), std::string::npos) << err;
}

TEST(SessionIo, HeaderRequired) { EXPECT_NE(error_of("{}\n").find("header"), std::string::npos); }

TEST(SessionIo, ClickIsReadAsView) {
  std::string text = std::string(kSessionsHeader) + "\n" +
                     R"({"session_id":"x","queries":[{"index":0,"tokens":["a"]}],)"
                     R"("products":[{"product_id":"p","attributes":[{"type":"product_sequence","tokens":["[TITLE]","t"]}]},)"
                     R"({"product_id":"q","attributes":[{"type":"product_sequence","tokens":["[TITLE]","u"]}]}],)"
                     R"("edges":[{"query":0,"product":"q","action":"click"},{"query":0,"product":"p","action":"purchase"}],)"
                     R"("purchase":{"query":0,"product":"p"}})" + "\n";
  std::stringstream in(text);
  const auto s = read_sessions(in);
  EXPECT_EQ(s[0].edges[0].action, Action::kView);
}

// Node and edge sets used for the containment law.
struct NodeEdgeSets {
  std::set<std::string> queries, products, edges;
};

NodeEdgeSets sets_of(const SessionGraph& s) {
  NodeEdgeSets out;
  for (const auto& q : s.queries) out.queries.insert(join_tokens(q.tokens) + "#" + std::to_string(q.index));
  for (const auto& p : s.products) out.products.insert(p.product_id);
  for (const auto& e : s.edges) {
    out.edges.insert(join_tokens(s.queries[e.src].tokens) + "->" + e.product_id + ":" +
                     std::string(action_name(e.action)));
  }
  return out;
}

template <typename Set>
bool subset(const Set& a, const Set& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

// Queries are compared by text since indices shift after removal.
std::multiset<std::string> query_texts(const SessionGraph& s) {
  std::multiset<std::string> out;
  for (const auto& q : s.queries) out.insert(join_tokens(q.tokens));
  return out;
}

TEST(TaskDataset, PurchasedProductAbsentEverywhere) {
  SessionGraph s = minimal_session();
  s.queries.push_back({1, {"blue", "mug"}});
  s.products.push_back(simple_product("other", {"red", "mug"}));
  s.edges = {Edge::query_product(0, "p", Action::kView), Edge::query_product(0, "other", Action::kView),
             Edge::query_product(1, "p", Action::kPurchase)};
  s.purchase = Purchase{1, "p"};
  ASSERT_TRUE(validate_session(s).empty());
  const SessionGraph w = without_purchase(s);
  EXPECT_EQ(w.find_product("p"), nullptr);
  for (const auto& e : w.edges) EXPECT_NE(e.product_id, "p");
  EXPECT_FALSE(w.purchase.has_value());
  EXPECT_EQ(w.queries.size(), 2u);
  EXPECT_TRUE(validate_session(w).empty());
}

TEST(TaskDataset, SingleQuerySessionIsDroppedWithoutLastQuery) {
  const auto splits = build_task_dataset({minimal_session()}, DatasetVariant::kWithoutLastQuery, {}, 7);
  EXPECT_EQ(splits.dropped, 1u);
  EXPECT_TRUE(splits.train.examples.empty() && splits.val.examples.empty() && splits.test.examples.empty());
}

TEST(TaskDataset, MissingPurchaseIsRejectedWithId) {
  SessionGraph s = minimal_session();
  s.session_id = "no-buy";
  s.edges[0].action = Action::kView;
  s.purchase.reset();
  try {
    build_task_dataset({s}, DatasetVariant::kFull, {}, 7);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("no-buy"), std::string::npos);
  }
}

TEST(TaskDataset, ContainmentLaw) {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const SessionGraph s = random_session(rng, "c" + std::to_string(t));
    const SessionGraph wp = without_purchase(s);
    const auto full = sets_of(s), p = sets_of(wp);
    EXPECT_TRUE(subset(p.products, full.products));
    EXPECT_TRUE(subset(p.edges, full.edges));
    EXPECT_EQ(query_texts(wp), query_texts(s));
    EXPECT_TRUE(validate_session(wp).empty());
    if (auto wq = without_last_query(s)) {
      const auto q = sets_of(*wq);
      EXPECT_TRUE(subset(q.products, p.products));
      EXPECT_TRUE(subset(q.edges, p.edges));
      EXPECT_TRUE(subset(query_texts(*wq), query_texts(wp)));
      const Tokens& last = s.queries[s.purchase->query].tokens;
      for (const auto& qq : wq->queries) EXPECT_NE(qq.tokens, last);
      EXPECT_TRUE(validate_session(*wq).empty());
    }
  }
}

std::set<std::string> last_query_keys(const TaskDataset& d) {
  std::set<std::string> out;
  for (const auto& ex : d.examples) out.insert(join_tokens(ex.label.last_query.tokens));
  return out;
}

TEST(TaskDataset, TestLastQueriesDisjointFromTrainAndVal) {
  GenConfig g;
  g.num_sessions = 100;
  g.vocab_topics = 5;
  const auto sessions = generate(g);
  for (auto variant : {DatasetVariant::kFull, DatasetVariant::kWithoutPurchase, DatasetVariant::kWithoutLastQuery}) {
    const auto sp = build_task_dataset(sessions, variant, {0.8, 0.1, 0.1}, 7);
    const auto test = last_query_keys(sp.test);
    auto seen = last_query_keys(sp.train);
    const auto val = last_query_keys(sp.val);
    seen.insert(val.begin(), val.end());
    std::vector<std::string> both;
    std::set_intersection(test.begin(), test.end(), seen.begin(), seen.end(), std::back_inserter(both));
    EXPECT_TRUE(both.empty()) << variant_name(variant);
    EXPECT_FALSE(test.empty());
    EXPECT_EQ(sp.train.examples.size() + sp.val.examples.size() + sp.test.examples.size() + sp.dropped, 100u);
  }
}

TEST(TaskDataset, DeterministicForFixedSeed) {
  Rng rng(4);
  std::vector<SessionGraph> sessions;
  for (int i = 0; i < 60; ++i) sessions.push_back(random_session(rng, "d" + std::to_string(i)));
  const auto a = build_task_dataset(sessions, DatasetVariant::kWithoutPurchase, {}, 9);
  const auto b = build_task_dataset(sessions, DatasetVariant::kWithoutPurchase, {}, 9);
  ASSERT_EQ(a.test.examples.size(), b.test.examples.size());
  for (std::size_t i = 0; i < a.train.examples.size(); ++i) {
    EXPECT_EQ(a.train.examples[i].session, b.train.examples[i].session);
  }
}

TEST(TaskDataset, LabelsTakenBeforeScrubbing) {
  SessionGraph s = minimal_session();
  s.products[0].attributes.push_back({"color", {"blue"}});
  const auto sp = build_task_dataset({s}, DatasetVariant::kWithoutPurchase, {1, 0, 0}, 1);
  ASSERT_EQ(sp.train.examples.size(), 1u);
  const auto& ex = sp.train.examples[0];
  EXPECT_EQ(ex.label.product.product_id, "p");
  EXPECT_EQ(ex.label.last_query.tokens, (Tokens{"mug"}));
  ASSERT_EQ(ex.label.attributes.size(), 1u);
  EXPECT_EQ(ex.label.attributes[0].attr_type, "color");
  EXPECT_TRUE(ex.session.products.empty());
}

}  // namespace
}  // namespace cerespt
