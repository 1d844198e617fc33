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

// Line-delimited session files. The first line is the schema header
// "#ceres-sessions v1"; each following line is one JSON session record.

#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cerespt/error.hpp"
#include "cerespt/session.hpp"

namespace cerespt {

inline constexpr std::string_view kSessionsHeader = "#ceres-sessions v1";

namespace detail {

using nlohmann::json;

class RecordReader {
 public:
  explicit RecordReader(std::size_t line) : line_(line) {}

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    throw FormatError("line " + std::to_string(line_) + ": field '" + path + "': " + what);
  }

  const json& member(const json& obj, const std::string& path, const char* key) const {
    if (!obj.is_object()) fail(path, "expected object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path.empty() ? key : path + "." + key, "missing");
    return *it;
  }

  std::string string(const json& j, const std::string& path) const {
    if (!j.is_string()) fail(path, "expected string");
    return j.get<std::string>();
  }

  int integer(const json& j, const std::string& path) const {
    if (!j.is_number_integer()) fail(path, "expected integer");
    return j.get<int>();
  }

  Tokens tokens(const json& j, const std::string& path) const {
    if (!j.is_array()) fail(path, "expected array of tokens");
    Tokens out;
    for (std::size_t i = 0; i < j.size(); ++i) {
      out.push_back(string(j[i], path + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  const json& array(const json& j, const std::string& path) const {
    if (!j.is_array()) fail(path, "expected array");
    return j;
  }

 private:
  std::size_t line_;
};

inline SessionGraph parse_session_record(const json& rec, std::size_t line) {
  RecordReader r(line);
  SessionGraph s;
  s.session_id = r.string(r.member(rec, "", "session_id"), "session_id");

  const auto& queries = r.array(r.member(rec, "", "queries"), "queries");
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const std::string p = "queries[" + std::to_string(i) + "]";
    Query q;
    q.index = r.integer(r.member(queries[i], p, "index"), p + ".index");
    q.tokens = r.tokens(r.member(queries[i], p, "tokens"), p + ".tokens");
    s.queries.push_back(std::move(q));
  }

  const auto& products = r.array(r.member(rec, "", "products"), "products");
  for (std::size_t i = 0; i < products.size(); ++i) {
    const std::string p = "products[" + std::to_string(i) + "]";
    Product prod;
    prod.product_id = r.string(r.member(products[i], p, "product_id"), p + ".product_id");
    const auto& attrs = r.array(r.member(products[i], p, "attributes"), p + ".attributes");
    for (std::size_t k = 0; k < attrs.size(); ++k) {
      const std::string ap = p + ".attributes[" + std::to_string(k) + "]";
      Attribute a;
      a.attr_type = r.string(r.member(attrs[k], ap, "type"), ap + ".type");
      a.tokens = r.tokens(r.member(attrs[k], ap, "tokens"), ap + ".tokens");
      prod.attributes.push_back(std::move(a));
    }
    s.products.push_back(std::move(prod));
  }

  const auto& edges = r.array(r.member(rec, "", "edges"), "edges");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string p = "edges[" + std::to_string(i) + "]";
    const int q = r.integer(r.member(edges[i], p, "query"), p + ".query");
    std::string prod = r.string(r.member(edges[i], p, "product"), p + ".product");
    const std::string act = r.string(r.member(edges[i], p, "action"), p + ".action");
    auto action = parse_action(act);
    if (!action) r.fail(p + ".action", "unknown action '" + act + "'");
    s.edges.push_back(Edge::query_product(q, std::move(prod), *action));
  }

  // Stored query chain edges are validated against the derived set and
  // then dropped.
  if (auto it = rec.find("query_edges"); it != rec.end()) {
    const auto& qe = r.array(*it, "query_edges");
    const int nq = static_cast<int>(s.queries.size());
    for (std::size_t i = 0; i < qe.size(); ++i) {
      const std::string p = "query_edges[" + std::to_string(i) + "]";
      const int src = r.integer(r.member(qe[i], p, "src"), p + ".src");
      const int dst = r.integer(r.member(qe[i], p, "dst"), p + ".dst");
      const int dist = r.integer(r.member(qe[i], p, "distance"), p + ".distance");
      if (src < 0 || dst >= nq || src >= dst) r.fail(p, "not a (earlier, later) query pair");
      if (dist != dst - src) r.fail(p + ".distance", "distance_mismatch");
    }
  }

  if (auto it = rec.find("purchase"); it != rec.end() && !it->is_null()) {
    Purchase pu;
    pu.query = r.integer(r.member(*it, "purchase", "query"), "purchase.query");
    pu.product_id = r.string(r.member(*it, "purchase", "product"), "purchase.product");
    s.purchase = pu;
  }
  if (auto it = rec.find("intent"); it != rec.end() && !it->is_null()) {
    s.intent = r.integer(*it, "intent");
  }
  return s;
}

inline json session_record(const SessionGraph& s) {
  json rec = json::object();
  rec["session_id"] = s.session_id;
  json queries = json::array();
  for (const auto& q : s.queries) queries.push_back({{"index", q.index}, {"tokens", q.tokens}});
  rec["queries"] = std::move(queries);
  json products = json::array();
  for (const auto& p : s.products) {
    json attrs = json::array();
    for (const auto& a : p.attributes) attrs.push_back({{"type", a.attr_type}, {"tokens", a.tokens}});
    products.push_back({{"product_id", p.product_id}, {"attributes", std::move(attrs)}});
  }
  rec["products"] = std::move(products);
  json edges = json::array();
  for (const auto& e : s.edges) {
    if (e.kind != EdgeKind::kQueryProduct) continue;
    edges.push_back({{"query", e.src}, {"product", e.product_id},
                     {"action", std::string(action_name(e.action))}});
  }
  rec["edges"] = std::move(edges);
  if (s.purchase) {
    rec["purchase"] = {{"query", s.purchase->query}, {"product", s.purchase->product_id}};
  } else {
    rec["purchase"] = nullptr;
  }
  if (s.intent) rec["intent"] = *s.intent;
  return rec;
}

}  // namespace detail

inline void write_sessions(std::ostream& out, const std::vector<SessionGraph>& sessions) {
  out << kSessionsHeader << '\n';
  for (const auto& s : sessions) out << detail::session_record(s).dump() << '\n';
}

inline void write_sessions(const std::filesystem::path& path,
                           const std::vector<SessionGraph>& sessions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_sessions(out, sessions);
  if (!out) throw Error("write failed: " + path.string());
}

// Streams records to `fn`. A record that does not end in a newline (a
// truncated final line) is reported as malformed.
template <typename Fn>
void for_each_session(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw FormatError("line 1: missing header");
  ++lineno;
  if (line != kSessionsHeader) {
    throw FormatError("line 1: expected header '" + std::string(kSessionsHeader) + "'");
  }
  while (std::getline(in, line)) {
    ++lineno;
    const bool terminated = !in.eof();
    if (line.empty() && terminated) continue;
    if (!terminated) {
      throw FormatError("line " + std::to_string(lineno) + ": truncated record");
    }
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
    SessionGraph s = detail::parse_session_record(rec, lineno);
    if (const auto v = validate_session(s); !v.empty()) {
      throw FormatError("line " + std::to_string(lineno) + ": session '" + s.session_id + "': " + v[0].code +
                        " (" + v[0].detail + ")");
    }
    fn(std::move(s));
  }
}

inline std::vector<SessionGraph> read_sessions(std::istream& in) {
  std::vector<SessionGraph> out;
  for_each_session(in, [&](SessionGraph s) { out.push_back(std::move(s)); });
  return out;
}

inline std::vector<SessionGraph> read_sessions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return read_sessions(in);
}

}  // namespace cerespt
