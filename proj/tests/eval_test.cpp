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
#include <random>
#include <set>

#include <Eigen/Dense>

#include "cerespt/eval.hpp"
#include "cerespt/rng.hpp"
#include "metric_oracles.hpp"

namespace cerespt {
namespace {

using namespace testing;

std::vector<RankedResult> ranks_of(std::initializer_list<std::size_t> ranks) {
  std::vector<RankedResult> out;
  int i = 0;
  for (auto r : ranks) out.push_back(with_rank(r, "q" + std::to_string(i++)));
  return out;
}

TEST(Metrics, HandCaseMap) {
  EXPECT_NEAR(map_at_n(ranks_of({1, 2, 4}), 10), (1 + 0.5 + 0.25) / 3, 1e-15);
  EXPECT_NEAR(map_at_n(ranks_of({1, 2, 4}), 10), 0.58333, 1e-5);
  EXPECT_EQ(map_at_n(ranks_of({1, 1, 1}), 10), 1.0);
  EXPECT_EQ(map_at_n(ranks_of({kNotRetrieved}), 10), 0.0);
}

TEST(Metrics, RankBeyondCutoffCountsAsMiss) {
  EXPECT_NEAR(map_at_n(ranks_of({1, 4}), 3), 0.5, 1e-15);
  EXPECT_EQ(recall_at_n(ranks_of({4}), 3), 0.0);
}

TEST(Metrics, HandCaseRecall) {
  EXPECT_EQ(recall_at_n(ranks_of({1, 3}), 2), 0.5);
  EXPECT_EQ(recall_at_n(ranks_of({1, 3}), 3), 1.0);
  EXPECT_EQ(recall_at_n({}, 3), 0.0);
}

TEST(Metrics, MrrqTakesBestRankInGroup) {
  std::vector<RankedResult> rs{with_rank(2, "q"), with_rank(5, "q")};
  EXPECT_EQ(mrrq_at_n(rs, 10), 0.5);
  EXPECT_EQ(mrrq_at_n({with_rank(1, "a"), with_rank(1, "b")}, 10), 1.0);
  EXPECT_EQ(mrrq_at_n({with_rank(kNotRetrieved, "a")}, 10), 0.0);
}

TEST(Metrics, HitByQuery) {
  std::vector<RankedResult> rs{with_rank(3, "a"), with_rank(20, "a"), with_rank(kNotRetrieved, "b")};
  EXPECT_EQ(hit_by_query(rs, 5), 0.5);
  EXPECT_EQ(hit_by_query(rs, 2), 0.0);
}

TEST(Metrics, MapqSingletonGroupsEqualMap) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    std::vector<RankedResult> rs;
    const std::size_t n = 1 + uniform_index(rng, 20);
    for (std::size_t i = 0; i < n; ++i) {
      rs.push_back(with_rank(bernoulli(rng, 0.2) ? kNotRetrieved : 1 + uniform_index(rng, 10), std::to_string(i)));
    }
    EXPECT_NEAR(mapq_at_n(rs, 10), map_at_n(rs, 10), 1e-12);
  }
}

TEST(Metrics, MapqLiteralFormulaTwoSessions) {
  // One query, ranks {1,2}, N=2: rel = (1,1); k=1: min(1, 1/1); k=2: min(1, 2/2).
  std::vector<RankedResult> rs{with_rank(1, "q"), with_rank(2, "q")};
  EXPECT_NEAR(mapq_at_n(rs, 2), (1.0 + 1.0) / 2.0, 1e-15);
  // Ranks {2,2}: rel = (0,1); k=2: min(1, 2/2) over one relevant position.
  EXPECT_NEAR(mapq_at_n({with_rank(2, "q"), with_rank(2, "q")}, 2), 1.0, 1e-15);
  // Ranks {3}: rel = (0,0,1); k=3: 1/3.
  EXPECT_NEAR(mapq_at_n({with_rank(3, "q")}, 3), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(mapq_at_n({with_rank(kNotRetrieved, "q")}, 3), 0.0);
}

TEST(Metrics, MatchBruteForceOracles) {
  Rng rng(2026);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t N = 1 + uniform_index(rng, 64);
    const auto rs = random_results(rng, N);
    EXPECT_NEAR(map_at_n(rs, N), oracle_map(rs, N), 1e-12);
    EXPECT_NEAR(recall_at_n(rs, N), oracle_recall(rs, N), 1e-12);
    EXPECT_NEAR(mapq_at_n(rs, N), oracle_mapq(rs, N), 1e-12);
    EXPECT_NEAR(mrrq_at_n(rs, N), oracle_mrrq(rs, N), 1e-12);
    EXPECT_NEAR(hit_by_query(rs, N), oracle_hit(rs, N), 1e-12);
  }
}

TEST(Metrics, MonotoneInCutoff) {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    auto rs = random_results(rng, 64);
    // Ranks are cutoff-independent here; metrics only see whether r <= N.
    for (std::size_t n = 1; n < 64; ++n) {
      EXPECT_LE(map_at_n(rs, n), map_at_n(rs, n + 1));
      EXPECT_LE(recall_at_n(rs, n), recall_at_n(rs, n + 1));
      EXPECT_LE(hit_by_query(rs, n), hit_by_query(rs, n + 1));
      EXPECT_LE(mrrq_at_n(rs, n), mrrq_at_n(rs, n + 1));
    }
  }
}

TEST(Rank, OrdersByScoreThenId) {
  const auto r = rank_candidates({0.5, 0.9, 0.5, 0.1}, {"d", "c", "a", "b"}, {"a"}, 3);
  EXPECT_EQ(r.top, (std::vector<std::string>{"c", "a", "d"}));
  EXPECT_EQ(r.rank, 2u);
}

TEST(Rank, PoolOfOne) {
  const auto r = rank_candidates({-0.3}, {"x"}, {"x"}, 10);
  EXPECT_EQ(r.rank, 1u);
  EXPECT_EQ(r.top.size(), 1u);
}

TEST(Rank, RelevantOutsideTopN) {
  const auto r = rank_candidates({3, 2, 1}, {"a", "b", "c"}, {"c"}, 2);
  EXPECT_EQ(r.rank, kNotRetrieved);
}

TEST(Rank, Errors) {
  EXPECT_THROW(rank_candidates({}, {}, {"a"}, 2), InvalidArgument);
  EXPECT_THROW(rank_candidates({1.0}, {"a", "b"}, {"a"}, 2), InvalidArgument);
}

TEST(Rank, MonotoneScoreTransformKeepsOrder) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 30);
    std::vector<double> s(n), u(n);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
      u[i] = std::exp(3 * s[i]) + 2;
      ids.push_back("c" + std::to_string(i));
    }
    EXPECT_EQ(rank_candidates(s, ids, {ids[0]}, n).top, rank_candidates(u, ids, {ids[0]}, n).top);
  }
}

TEST(Cosine, MatchesIndependentComputation) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 1 + uniform_index(rng, 64);
    std::vector<double> a(d), b(d);
    std::normal_distribution<double> g;
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    const Eigen::Map<const Eigen::VectorXd> ea(a.data(), static_cast<Eigen::Index>(d)), eb(b.data(), static_cast<Eigen::Index>(d));
    EXPECT_NEAR(cosine(a.data(), b.data(), d), ea.dot(eb) / (ea.norm() * eb.norm()), 1e-6);
  }
  const double z[2] = {0, 0}, o[2] = {1, 0};
  EXPECT_EQ(cosine(z, o, 2), 0.0);
}

TEST(Report, ContainsEveryMetricAtEveryCutoff) {
  const auto rs = ranks_of({1, 2, 40, kNotRetrieved});
  const TaskReport rep = make_report(Task::kQuerySearch, rs, default_cutoffs(), 1, 9);
  for (const char* m : {"map", "mapq", "mrrq", "recall", "hit"}) {
    for (auto n : default_cutoffs()) EXPECT_NO_THROW(rep.value(m, n));
  }
  EXPECT_NEAR(rep.value("map", 64), (1 + 0.5 + 1.0 / 40) / 4, 1e-15);
  std::ostringstream os;
  rep.write_jsonl(os);
  std::size_t lines = 0;
  for (char c : os.str()) lines += c == '\n';
  EXPECT_EQ(lines, 15u);
  EXPECT_NE(rep.table().find("@32"), std::string::npos);
  EXPECT_THROW(rep.value("map", 5), InvalidArgument);
}

TEST(Task, NamesRoundTrip) {
  for (Task t : {Task::kProductSearch, Task::kQuerySearch, Task::kEntityLinking}) EXPECT_EQ(parse_task(task_name(t)), t);
  EXPECT_THROW(parse_task("shopping"), InvalidArgument);
}

}  // namespace
}  // namespace cerespt
