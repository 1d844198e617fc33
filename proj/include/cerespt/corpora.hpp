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

// Flat text corpora derived from session files.
//
//   product  one paragraph per distinct titled product
//   sqsp     one document per session, one line per viewed or carted query/product pair
//   session  one document per session, items in chronological order
//
// Documents and paragraphs are separated by a blank line.

#pragma once

#include <cctype>
#include <fstream>
#include <set>

#include "cerespt/session.hpp"

namespace cerespt {

enum class CorpusFormat { kProduct, kSqsp, kSession };

inline CorpusFormat parse_corpus_format(std::string_view s) {
  if (s == "product") return CorpusFormat::kProduct;
  if (s == "sqsp") return CorpusFormat::kSqsp;
  if (s == "session") return CorpusFormat::kSession;
  throw InvalidArgument("unknown corpus format '" + std::string(s) + "' (expected product, sqsp or session)");
}

namespace detail {

// product_type -> "Product Type"
inline std::string title_case(std::string_view attr) {
  std::string out;
  bool start = true;
  for (char c : attr) {
    if (c == '_') {
      out += ' ';
      start = true;
    } else {
      out += start ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
      start = false;
    }
  }
  return out;
}

// product_type -> "PRODUCT_TYPE"
inline std::string upper_case(std::string_view attr) {
  std::string out(attr);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline const ProductText* text_of(const Product& p, ProductText& storage) {
  if (p.attributes.empty() || p.attributes[0].attr_type != kProductSequence) return nullptr;
  storage = split_product_sequence(p.attributes[0]);
  return storage.title.empty() ? nullptr : &storage;
}

inline void write_product(std::ostream& out, const Product& p, const ProductText& text) {
  out << "[Title] " << join_tokens(text.title) << '\n';
  for (const auto& b : text.bullets) out << "[Bullet Description] " << join_tokens(b) << '\n';
  for (std::size_t k = 1; k < p.attributes.size(); ++k) {
    out << '[' << title_case(p.attributes[k].attr_type) << "] " << join_tokens(p.attributes[k].tokens) << '\n';
  }
}

inline std::string sqsp_line(const Query& q, const Product& p, const ProductText& text) {
  std::string line = "[SEARCH] " + join_tokens(q.tokens) + " [TITLE] " + join_tokens(text.title);
  for (const auto& b : text.bullets) line += " [BULLET_DESCRIPTION] " + join_tokens(b);
  for (std::size_t k = 1; k < p.attributes.size(); ++k) {
    line += " [" + upper_case(p.attributes[k].attr_type) + "] " + join_tokens(p.attributes[k].tokens);
  }
  return line;
}

}  // namespace detail

inline void export_corpus(const std::vector<SessionGraph>& sessions, CorpusFormat format, std::ostream& out) {
  bool first_doc = true;
  auto begin_doc = [&] {
    if (!first_doc) out << '\n';
    first_doc = false;
  };
  ProductText text;
  switch (format) {
    case CorpusFormat::kProduct: {
      std::set<std::string> seen;
      for (const auto& s : sessions) {
        for (const auto& id : product_order(s)) {
          const Product* p = s.find_product(id);
          if (!p || !seen.insert(id).second || !detail::text_of(*p, text)) continue;
          begin_doc();
          detail::write_product(out, *p, text);
        }
      }
      break;
    }
    case CorpusFormat::kSqsp:
      for (const auto& s : sessions) {
        std::vector<std::string> lines;
        std::set<std::pair<int, std::string>> pairs;
        for (const auto& e : s.edges) {
          if (e.kind != EdgeKind::kQueryProduct || e.action == Action::kPurchase) continue;
          if (!pairs.emplace(e.src, e.product_id).second) continue;
          const Product* p = s.find_product(e.product_id);
          if (!p || !detail::text_of(*p, text)) continue;
          lines.push_back(detail::sqsp_line(s.queries.at(e.src), *p, text));
        }
        if (lines.empty()) continue;
        begin_doc();
        for (const auto& l : lines) out << l << '\n';
      }
      break;
    case CorpusFormat::kSession:
      for (const auto& s : sessions) {
        std::string doc;
        auto append = [&](const std::string& piece) {
          if (!doc.empty()) doc += ' ';
          doc += piece;
        };
        for (const auto& q : s.queries) {
          append("[SEARCH] " + join_tokens(q.tokens));
          for (const auto& e : s.edges) {
            if (e.kind != EdgeKind::kQueryProduct || e.src != q.index) continue;
            const Product* p = s.find_product(e.product_id);
            if (!p || !detail::text_of(*p, text)) continue;
            append(e.action == Action::kPurchase ? "[PURCHASE]" : "[CLICK]");
            append("[TITLE] " + join_tokens(text.title));
          }
        }
        begin_doc();
        out << doc << '\n';
      }
      break;
  }
}

inline void export_corpus(const std::vector<SessionGraph>& sessions, CorpusFormat format,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus '" + path + "'");
  export_corpus(sessions, format, out);
  if (!out) throw Error("failed writing corpus '" + path + "'");
}

}  // namespace cerespt
