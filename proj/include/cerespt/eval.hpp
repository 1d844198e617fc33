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

// Retrieval tasks, candidate pools, ranking and ranking metrics.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "cerespt/model.hpp"
#include "cerespt/task_dataset.hpp"

namespace cerespt {

enum class Task { kProductSearch, kQuerySearch, kEntityLinking };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::kProductSearch:
      return "product_search";
    case Task::kQuerySearch:
      return "query_search";
    case Task::kEntityLinking:
      return "entity_linking";
  }
  return "product_search";
}

inline Task parse_task(std::string_view s) {
  if (s == "product_search" || s == "product-search") return Task::kProductSearch;
  if (s == "query_search" || s == "query-search") return Task::kQuerySearch;
  if (s == "entity_linking" || s == "entity-linking") return Task::kEntityLinking;
  throw InvalidArgument("unknown task '" + std::string(s) +
                        "' (expected product_search, query_search or entity_linking)");
}

// The session view each task is trained and evaluated on.
inline DatasetVariant task_variant(Task t) {
  return t == Task::kQuerySearch ? DatasetVariant::kWithoutLastQuery : DatasetVariant::kWithoutPurchase;
}

inline std::string attribute_id(const Attribute& a) { return a.attr_type + "=" + join_tokens(a.tokens); }

inline std::vector<std::string> relevant_ids(Task t, const TaskExample& ex) {
  switch (t) {
    case Task::kProductSearch:
      return {ex.label.product.product_id};
    case Task::kQuerySearch:
      return {query_key(ex.label.last_query.tokens)};
    case Task::kEntityLinking: {
      std::vector<std::string> ids;
      for (const auto& a : ex.label.attributes) ids.push_back(attribute_id(a));
      return ids;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Candidate pools.

struct Candidate {
  std::string id;
  EncodedItem item;
};

struct CandidatePool {
  Task task = Task::kProductSearch;
  std::vector<Candidate> items;  // sorted by id
  std::map<std::string, std::size_t> index;

  bool contains(const std::string& id) const { return index.count(id) > 0; }
};

inline constexpr std::size_t kEngineResults = 10;

// Product search: every labelled purchase plus, per last query, the first
// products interacted with across the split's sessions. Query search: the
// split's distinct last queries. Entity linking: every distinct non-sequence
// attribute of the split's products.
inline CandidatePool build_pool(Task task, const TaskDataset& data, const Vocab& vocab,
                                std::size_t max_len) {
  CandidatePool pool;
  pool.task = task;
  std::map<std::string, EncodedItem> found;
  switch (task) {
    case Task::kProductSearch: {
      std::map<std::string, std::vector<std::string>> engine;
      for (const auto& ex : data.examples) {
        found.try_emplace(ex.label.product.product_id, encode_product_item(ex.label.product, vocab, max_len));
        auto& seen = engine[ex.last_query_key];
        for (const auto& e : ex.session.edges) {
          if (e.kind != EdgeKind::kQueryProduct || seen.size() >= kEngineResults) continue;
          if (std::find(seen.begin(), seen.end(), e.product_id) != seen.end()) continue;
          seen.push_back(e.product_id);
          found.try_emplace(e.product_id, encode_product_item(*ex.session.find_product(e.product_id), vocab, max_len));
        }
      }
      break;
    }
    case Task::kQuerySearch:
      for (const auto& ex : data.examples) {
        found.try_emplace(ex.last_query_key, encode_query_item(ex.label.last_query, vocab, max_len));
      }
      break;
    case Task::kEntityLinking: {
      auto add_product = [&](const Product& p) {
        for (std::size_t k = 1; k < p.attributes.size(); ++k) {
          found.try_emplace(attribute_id(p.attributes[k]), encode_attribute_item(p.attributes[k], vocab, max_len));
        }
      };
      for (const auto& ex : data.examples) {
        add_product(ex.label.product);
        for (const auto& p : ex.session.products) add_product(p);
      }
      break;
    }
  }
  for (auto& [id, item] : found) {
    pool.index[id] = pool.items.size();
    pool.items.push_back({id, std::move(item)});
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Ranking.

inline constexpr std::size_t kNotRetrieved = std::numeric_limits<std::size_t>::max();

struct RankedResult {
  std::string session_id;
  std::string query_key;
  std::vector<std::string> top;  // best first, at most N ids
  std::vector<std::string> relevant;
  std::size_t rank = kNotRetrieved;  // 1-based rank of the best relevant, if within N
};

// Orders candidates by descending score, ties by ascending id.
inline RankedResult rank_candidates(const std::vector<double>& scores, const std::vector<std::string>& ids,
                                    std::vector<std::string> relevant, std::size_t N,
                                    std::string session_id = {}, std::string query_key = {}) {
  if (scores.empty()) throw InvalidArgument("rank: empty candidate pool");
  if (scores.size() != ids.size()) throw InvalidArgument("rank: score/id count mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  const std::size_t keep = std::min(N, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
  RankedResult r;
  r.session_id = std::move(session_id);
  r.query_key = std::move(query_key);
  for (std::size_t i = 0; i < keep; ++i) {
    r.top.push_back(ids[order[i]]);
    if (r.rank == kNotRetrieved &&
        std::find(relevant.begin(), relevant.end(), ids[order[i]]) != relevant.end()) {
      r.rank = i + 1;
    }
  }
  r.relevant = std::move(relevant);
  return r;
}

inline double cosine(const double* a, const double* b, std::size_t d) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(na) * std::sqrt(nb);
  return den > 0 ? dot / den : 0.0;
}

inline std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CERES_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return n;
}

namespace detail {

// Runs fn(i) for i in [0, n) over `workers` threads; results land by index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

inline constexpr std::size_t kEmbedBatch = 16;

// Candidate embeddings as rows of doubles, mapped if the model has maps.
template <typename T>
std::vector<std::vector<double>> embed_candidates(CeresModel<T>& model, const CandidatePool& pool) {
  const std::size_t nb = (pool.items.size() + kEmbedBatch - 1) / kEmbedBatch;
  std::vector<std::vector<double>> out(pool.items.size());
  detail::parallel_for(nb, worker_count(), [&](std::size_t b) {
    std::vector<const EncodedItem*> items;
    for (std::size_t i = b * kEmbedBatch; i < std::min(pool.items.size(), (b + 1) * kEmbedBatch); ++i) {
      items.push_back(&pool.items[i].item);
    }
    Tape<T> tp(false);
    Var<T> e = model.embed_items(tp, items);
    if (model.has_finetune_maps()) e = model.project(tp, e, false);
    const T* p = tp.data(e);
    const std::size_t d = e.cols();
    for (std::size_t r = 0; r < items.size(); ++r) out[b * kEmbedBatch + r].assign(p + r * d, p + (r + 1) * d);
  });
  return out;
}

template <typename T>
std::vector<std::vector<double>> embed_session_rows(CeresModel<T>& model,
                                                    const std::vector<const EncodedSession*>& sessions,
                                                    bool use_cond) {
  const std::size_t nb = (sessions.size() + kEmbedBatch - 1) / kEmbedBatch;
  std::vector<std::vector<double>> out(sessions.size());
  detail::parallel_for(nb, worker_count(), [&](std::size_t b) {
    std::vector<const EncodedSession*> batch(
        sessions.begin() + static_cast<std::ptrdiff_t>(b * kEmbedBatch),
        sessions.begin() + static_cast<std::ptrdiff_t>(std::min(sessions.size(), (b + 1) * kEmbedBatch)));
    Tape<T> tp(false);
    Var<T> e = model.embed_sessions(tp, batch, use_cond);
    if (model.has_finetune_maps()) e = model.project(tp, e, true);
    const T* p = tp.data(e);
    const std::size_t d = e.cols();
    for (std::size_t r = 0; r < batch.size(); ++r) out[b * kEmbedBatch + r].assign(p + r * d, p + (r + 1) * d);
  });
  return out;
}

struct RankingRun {
  std::vector<RankedResult> results;
  std::size_t skipped = 0;  // sessions without a label in the pool
};

template <typename T>
RankingRun rank_examples(CeresModel<T>& model, Task task, const std::vector<TaskExample>& examples,
                         const std::vector<EncodedSession>& encoded, const CandidatePool& pool,
                         std::size_t N, bool use_cond) {
  RankingRun run;
  std::vector<const EncodedSession*> sessions;
  std::vector<std::size_t> which;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto rel = relevant_ids(task, examples[i]);
    const bool any = std::any_of(rel.begin(), rel.end(), [&](const auto& id) { return pool.contains(id); });
    if (!any) {
      ++run.skipped;
      continue;
    }
    sessions.push_back(&encoded[i]);
    which.push_back(i);
  }
  const auto cand = embed_candidates(model, pool);
  const auto sess = embed_session_rows(model, sessions, use_cond);
  std::vector<std::string> ids;
  for (const auto& c : pool.items) ids.push_back(c.id);
  run.results.resize(sessions.size());
  detail::parallel_for(sessions.size(), worker_count(), [&](std::size_t s) {
    std::vector<double> scores(cand.size());
    for (std::size_t c = 0; c < cand.size(); ++c) scores[c] = cosine(sess[s].data(), cand[c].data(), cand[c].size());
    const auto& ex = examples[which[s]];
    run.results[s] = rank_candidates(scores, ids, relevant_ids(task, ex), N, ex.session.session_id, ex.last_query_key);
  });
  return run;
}

// ---------------------------------------------------------------------------
// Metrics. A session is retrieved at cutoff N when its rank is <= N.

inline bool retrieved(std::size_t rank, std::size_t N) { return rank != kNotRetrieved && rank <= N; }

inline double map_at_n(const std::vector<RankedResult>& results, std::size_t N) {
  if (results.empty()) return 0.0;
  double sum = 0;
  for (const auto& r : results) {
    if (retrieved(r.rank, N)) sum += 1.0 / static_cast<double>(r.rank);
  }
  return sum / static_cast<double>(results.size());
}

inline double recall_at_n(const std::vector<RankedResult>& results, std::size_t N) {
  if (results.empty()) {
    std::cerr << "warning: recall over an empty result set is reported as 0\n";
    return 0.0;
  }
  std::size_t hits = 0;
  for (const auto& r : results) hits += retrieved(r.rank, N);
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

inline std::map<std::string, std::vector<std::size_t>> group_by_query(const std::vector<RankedResult>& results) {
  std::map<std::string, std::vector<std::size_t>> g;
  for (const auto& r : results) g[r.query_key].push_back(r.rank);
  return g;
}

// APQ@N = sum_k min(1, rel(k) * #{s : r_s <= k} / k) / sum_k rel(k), where
// rel(k) = 1 iff some session of the group has its relevant item at rank k.
inline double apq_at_n(const std::vector<std::size_t>& ranks, std::size_t N) {
  std::vector<std::size_t> at(N + 1, 0);
  for (auto r : ranks) {
    if (retrieved(r, N)) ++at[r];
  }
  double num = 0, den = 0;
  std::size_t upto = 0;
  for (std::size_t k = 1; k <= N; ++k) {
    upto += at[k];
    const double rel = at[k] > 0 ? 1.0 : 0.0;
    den += rel;
    num += std::min(1.0, rel * static_cast<double>(upto) / static_cast<double>(k));
  }
  return den > 0 ? num / den : 0.0;
}

inline double mapq_at_n(const std::vector<RankedResult>& results, std::size_t N) {
  const auto groups = group_by_query(results);
  if (groups.empty()) return 0.0;
  double sum = 0;
  for (const auto& [q, ranks] : groups) sum += apq_at_n(ranks, N);
  return sum / static_cast<double>(groups.size());
}

inline double mrrq_at_n(const std::vector<RankedResult>& results, std::size_t N) {
  const auto groups = group_by_query(results);
  if (groups.empty()) return 0.0;
  double sum = 0;
  for (const auto& [q, ranks] : groups) {
    double best = 0;
    for (auto r : ranks) {
      if (retrieved(r, N)) best = std::max(best, 1.0 / static_cast<double>(r));
    }
    sum += best;
  }
  return sum / static_cast<double>(groups.size());
}

inline double hit_by_query(const std::vector<RankedResult>& results, std::size_t N) {
  const auto groups = group_by_query(results);
  if (groups.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& [q, ranks] : groups) {
    hits += std::any_of(ranks.begin(), ranks.end(), [&](auto r) { return retrieved(r, N); });
  }
  return static_cast<double>(hits) / static_cast<double>(groups.size());
}

// ---------------------------------------------------------------------------
// Reports.

inline const std::vector<std::size_t>& default_cutoffs() {
  static const std::vector<std::size_t> c{1, 32, 64};
  return c;
}

struct MetricRecord {
  std::string metric;
  std::size_t n = 0;
  double value = 0;
};

struct TaskReport {
  Task task = Task::kProductSearch;
  std::string model;
  std::size_t sessions = 0;
  std::size_t skipped = 0;
  std::size_t pool_size = 0;
  std::vector<std::size_t> cutoffs;
  std::vector<MetricRecord> records;

  double value(const std::string& metric, std::size_t n) const {
    for (const auto& r : records) {
      if (r.metric == metric && r.n == n) return r.value;
    }
    throw InvalidArgument("report has no " + metric + "@" + std::to_string(n));
  }

  void write_jsonl(std::ostream& out) const {
    for (const auto& r : records) {
      nlohmann::ordered_json j;
      j["task"] = task_name(task);
      j["model"] = model;
      j["metric"] = r.metric;
      j["n"] = r.n;
      j["value"] = r.value;
      out << j.dump() << '\n';
    }
  }

  std::string table() const {
    std::ostringstream os;
    os << "# " << task_name(task) << " (" << model << "): " << sessions << " sessions, " << skipped
       << " skipped, " << pool_size << " candidates\n"
       << "# synthetic vocabulary; candidate space far smaller than production scale\n";
    os << std::left << std::setw(8) << "metric";
    for (auto n : cutoffs) os << std::right << std::setw(10) << ("@" + std::to_string(n));
    os << '\n';
    std::vector<std::string> metrics;
    for (const auto& r : records) {
      if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) metrics.push_back(r.metric);
    }
    for (const auto& m : metrics) {
      os << std::left << std::setw(8) << m;
      for (auto n : cutoffs) os << std::right << std::setw(10) << std::fixed << std::setprecision(3) << 100.0 * value(m, n);
      os << '\n';
    }
    return os.str();
  }
};

inline TaskReport make_report(Task task, const std::vector<RankedResult>& results,
                              const std::vector<std::size_t>& cutoffs, std::size_t skipped,
                              std::size_t pool_size, std::string model = "ceres") {
  TaskReport rep;
  rep.task = task;
  rep.model = std::move(model);
  rep.sessions = results.size();
  rep.skipped = skipped;
  rep.pool_size = pool_size;
  rep.cutoffs = cutoffs;
  for (auto n : cutoffs) rep.records.push_back({"map", n, map_at_n(results, n)});
  for (auto n : cutoffs) rep.records.push_back({"mapq", n, mapq_at_n(results, n)});
  for (auto n : cutoffs) rep.records.push_back({"mrrq", n, mrrq_at_n(results, n)});
  for (auto n : cutoffs) rep.records.push_back({"recall", n, recall_at_n(results, n)});
  for (auto n : cutoffs) rep.records.push_back({"hit", n, hit_by_query(results, n)});
  return rep;
}

}  // namespace cerespt
