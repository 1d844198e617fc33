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

#include "corpus_fixture.hpp"

namespace cerespt {
namespace {

using testing::corpus_fixture;
using testing::export_string;

const std::filesystem::path kGolden = CERESPT_GOLDEN_DIR;

TEST(Corpus, GoldenFilesByteMatch) {
  const auto s = corpus_fixture();
  for (const auto& s0 : s) EXPECT_TRUE(validate_session(s0).empty()) << s0.session_id;
  EXPECT_EQ(export_string(s, CorpusFormat::kProduct), testing::read_file(kGolden / "product.txt"));
  EXPECT_EQ(export_string(s, CorpusFormat::kSqsp), testing::read_file(kGolden / "sqsp.txt"));
  EXPECT_EQ(export_string(s, CorpusFormat::kSession), testing::read_file(kGolden / "session.txt"));
}

TEST(Corpus, ReferenceDocumentsProduct) {
  const auto s = corpus_fixture();
  // The product paragraph keeps one field per line.
  EXPECT_EQ(export_string({s[2]}, CorpusFormat::kProduct), testing::kReferenceProduct);
}

TEST(Corpus, ReferenceDocumentsSqspAndSession) {
  const auto s = corpus_fixture();
  // Printed examples wrap long lines; the exports keep one pair or session per line.
  const std::string sqsp = export_string({s[1]}, CorpusFormat::kSqsp);
  const std::string session = export_string({s[0]}, CorpusFormat::kSession);
  EXPECT_EQ(std::count(sqsp.begin(), sqsp.end(), '\n'), 1);
  EXPECT_EQ(std::count(session.begin(), session.end(), '\n'), 1);
  EXPECT_EQ(testing::squash_whitespace(sqsp), testing::squash_whitespace(testing::kReferenceSqsp));
  EXPECT_EQ(testing::squash_whitespace(session), testing::squash_whitespace(testing::kReferenceSession));
}

TEST(Corpus, ProductParagraphPerDistinctTitledProduct) {
  Rng rng(3);
  std::vector<SessionGraph> sessions;
  std::set<std::string> ids;
  for (int i = 0; i < 50; ++i) {
    sessions.push_back(testing::random_session(rng, "s" + std::to_string(i % 40)));
    for (const auto& p : sessions.back().products) ids.insert(p.product_id);
  }
  const std::string out = export_string(sessions, CorpusFormat::kProduct);
  std::size_t titles = 0, pos = 0;
  while ((pos = out.find("[Title] ", pos)) != std::string::npos) {
    ++titles;
    ++pos;
  }
  EXPECT_EQ(titles, ids.size());
}

TEST(Corpus, SqspLinePerDistinctNonPurchasePair) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const SessionGraph s = testing::random_session(rng, "s");
    std::set<std::pair<int, std::string>> pairs;
    for (const auto& e : s.edges) {
      if (e.kind == EdgeKind::kQueryProduct && e.action != Action::kPurchase) pairs.emplace(e.src, e.product_id);
    }
    const std::string out = export_string({s}, CorpusFormat::kSqsp);
    EXPECT_EQ(static_cast<std::size_t>(std::count(out.begin(), out.end(), '\n')), pairs.size());
  }
}

TEST(Corpus, SessionDocumentMentionsEveryQueryOnce) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const SessionGraph s = testing::random_session(rng, "s");
    const std::string out = export_string({s}, CorpusFormat::kSession);
    std::size_t searches = 0, purchases = 0, pos = 0;
    while ((pos = out.find("[SEARCH]", pos)) != std::string::npos) ++searches, ++pos;
    pos = 0;
    while ((pos = out.find("[PURCHASE]", pos)) != std::string::npos) ++purchases, ++pos;
    EXPECT_EQ(searches, s.queries.size());
    EXPECT_EQ(purchases, 1u);
  }
}

TEST(Corpus, ExportIsDeterministicAndFileMatchesStream) {
  const auto dir = testing::temp_dir("corpus");
  const auto s = corpus_fixture();
  export_corpus(s, CorpusFormat::kSession, (dir / "a.txt").string());
  EXPECT_EQ(testing::read_file(dir / "a.txt"), export_string(s, CorpusFormat::kSession));
  EXPECT_EQ(export_string(s, CorpusFormat::kSqsp), export_string(s, CorpusFormat::kSqsp));
  EXPECT_THROW(parse_corpus_format("poem"), InvalidArgument);
}

TEST(Corpus, UntitledProductsAreSkipped) {
  SessionGraph s;
  s.session_id = "u";
  s.queries = {{0, {"q"}}};
  s.products = {testing::simple_product("x", {})};
  s.edges = {Edge::query_product(0, "x", Action::kView), Edge::query_product(0, "x", Action::kPurchase)};
  s.purchase = Purchase{0, "x"};
  EXPECT_EQ(export_string({s}, CorpusFormat::kProduct), "");
  EXPECT_EQ(export_string({s}, CorpusFormat::kSqsp), "");
  EXPECT_EQ(export_string({s}, CorpusFormat::kSession), "[SEARCH] q\n");
}

}  // namespace
}  // namespace cerespt
