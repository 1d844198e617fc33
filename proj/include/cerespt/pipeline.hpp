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

// End-to-end stages shared by the command line tool and the tests: each
// stage reads its inputs, writes its outputs into a directory and records a
// manifest.json next to them.

#pragma once

#include <filesystem>

#include "cerespt/config.hpp"
#include "cerespt/corpora.hpp"
#include "cerespt/nn/checkpoint.hpp"
#include "cerespt/session_io.hpp"
#include "cerespt/synth.hpp"

namespace cerespt {

namespace fs = std::filesystem;
using nlohmann::json;

using TrainScalar = float;
using Model = CeresModel<TrainScalar>;

inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kVocabFile = "vocab.txt";

// Vocabulary covering every token the synthetic world can emit.
inline Vocab world_vocab(const Catalog& cat) {
  std::vector<SessionGraph> holder(1);
  for (const auto& topic : cat.topics) {
    for (const auto& cp : topic) holder[0].products.push_back(cp.product);
  }
  return build_vocab({&holder}, world_tokens(cat));
}

// Accepts a sessions file or a directory holding sessions.jsonl.
inline std::vector<SessionGraph> read_data(const fs::path& path) {
  if (fs::is_directory(path)) return read_sessions(path / "sessions.jsonl");
  return read_sessions(path);
}

inline void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                           const RunConfig* cfg, const json& extra = json::object()) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = seed;
  if (cfg) {
    j["config_hash"] = config_hash(*cfg);
    nlohmann::ordered_json c;
    for (const auto& [k, v] : config_pairs(*cfg)) c[k] = v;
    j["config"] = c;
  }
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) throw Error("cannot write manifest in '" + dir.string() + "'");
}

// ---------------------------------------------------------------------------
// Checkpoints carry the resolved run configuration; the vocabulary sits in
// the same directory.

struct LoadedModel {
  RunConfig cfg;
  Vocab vocab;
  std::unique_ptr<Model> model;
};

inline void save_model(const fs::path& dir, const Model& model, const RunConfig& cfg, const Vocab& vocab) {
  fs::create_directories(dir);
  auto pairs = config_pairs(cfg);
  pairs.emplace_back("model.vocab_size", std::to_string(model.config().vocab_size));
  nn::save_checkpoint((dir / kCheckpointFile).string(), model.params(), pairs);
  vocab.save(dir / kVocabFile);
}

inline LoadedModel load_model(const fs::path& ckpt_path) {
  const fs::path file = fs::is_directory(ckpt_path) ? ckpt_path / kCheckpointFile : ckpt_path;
  const nn::Checkpoint ck = nn::load_checkpoint(file.string());
  LoadedModel lm;
  std::size_t vocab_size = 0;
  for (const auto& [k, v] : ck.config) {
    if (k == "model.vocab_size") {
      vocab_size = detail::parse_number<std::size_t>(k, v);
    } else {
      set_config_value(lm.cfg, k, v);
    }
  }
  lm.vocab = Vocab::load(file.parent_path() / kVocabFile);
  if (vocab_size != static_cast<std::size_t>(lm.vocab.size())) {
    throw FormatError("checkpoint expects " + std::to_string(vocab_size) + " tokens, vocabulary has " +
                      std::to_string(lm.vocab.size()));
  }
  lm.cfg.model.vocab_size = vocab_size;
  lm.model = std::make_unique<Model>(lm.cfg.model, lm.cfg.pretrain.seed);
  if (ck.find("ft.session.w")) lm.model->add_finetune_maps();
  nn::restore(lm.model->params(), ck);
  return lm;
}

// ---------------------------------------------------------------------------
// Stages.

inline std::vector<EncodedSession> encode_all(const std::vector<SessionGraph>& sessions, const Vocab& vocab,
                                              const CeresConfig& cfg) {
  std::vector<EncodedSession> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) out.push_back(encode_session(s, vocab, cfg));
  return out;
}

inline PretrainSummary run_pretrain(RunConfig cfg, const std::vector<SessionGraph>& sessions, Vocab vocab,
                                    const fs::path& out_dir) {
  fs::create_directories(out_dir);
  cfg.model.vocab_size = static_cast<std::size_t>(vocab.size());
  Model model(cfg.model, cfg.pretrain.seed);
  const auto data = encode_all(sessions, vocab, cfg.model);
  std::ofstream log(out_dir / "pretrain_log.jsonl");
  const PretrainSummary sum = pretrain(model, data, cfg.pretrain, vocab.first_content_id(), &log);
  save_model(out_dir, model, cfg, vocab);
  json extra;
  extra["sessions"] = sessions.size();
  extra["skipped_steps"] = sum.skipped;
  write_manifest(out_dir, "pretrain", cfg.pretrain.seed, &cfg, extra);
  return sum;
}

struct FinetuneOptions {
  // Re-draws the session encoder (graph, latent and conditional layers)
  // before finetuning.
  bool fresh_session_encoder = false;
};

inline TaskSplits task_splits(Task task, const std::vector<SessionGraph>& sessions, const RunConfig& cfg) {
  return build_task_dataset(sessions, task_variant(task), {}, cfg.split_seed);
}

inline FinetuneResult<TrainScalar> run_finetune(Task task, LoadedModel& lm, const std::vector<SessionGraph>& sessions,
                                                const fs::path& out_dir, FinetuneOptions opt = {}) {
  fs::create_directories(out_dir);
  RunConfig& cfg = lm.cfg;
  cfg.finetune.task = task;
  Model& model = *lm.model;
  model.mutable_config().use_cond = cfg.finetune.use_cond;
  if (opt.fresh_session_encoder) {
    for (const char* prefix : {"gnn.", "item_pos", "latent.", "cond."}) {
      model.reinitialize(prefix, derive_seed(cfg.finetune.seed, 0x5C7A));
    }
  }
  const TaskSplits splits = task_splits(task, sessions, cfg);
  const PreparedSplit train = prepare_split(task, splits.train, lm.vocab, cfg.model);
  const PreparedSplit val = prepare_split(task, splits.val, lm.vocab, cfg.model);
  std::ofstream log(out_dir / "finetune_log.jsonl");
  auto res = finetune(model, train, val, cfg.finetune, &log);
  model.add_finetune_maps();
  model.params() = res.best;
  save_model(out_dir, model, cfg, lm.vocab);
  json extra;
  extra["task"] = task_name(task);
  extra["best_lr"] = res.best_lr;
  extra["best_epoch"] = res.best_epoch;
  extra["best_val_map1"] = res.best_val_map1;
  extra["dropped_sessions"] = splits.dropped;
  write_manifest(out_dir, "finetune", cfg.finetune.seed, &cfg, extra);
  return res;
}

inline TaskReport evaluate_split(Task task, LoadedModel& lm, const TaskDataset& test, bool use_cond,
                                 const std::vector<std::size_t>& cutoffs = default_cutoffs(),
                                 std::string label = "ceres") {
  Model& model = *lm.model;
  model.mutable_config().use_cond = use_cond;
  const PreparedSplit split = prepare_split(task, test, lm.vocab, lm.cfg.model);
  const std::size_t N = *std::max_element(cutoffs.begin(), cutoffs.end());
  auto run = rank_examples(model, task, test.examples, split.sessions, split.pool, N, use_cond);
  return make_report(task, run.results, cutoffs, run.skipped, split.pool.items.size(), std::move(label));
}

inline TaskReport run_eval(Task task, LoadedModel& lm, const std::vector<SessionGraph>& sessions,
                           const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const TaskSplits splits = task_splits(task, sessions, lm.cfg);
  TaskReport rep = evaluate_split(task, lm, splits.test, lm.cfg.finetune.use_cond);
  std::ofstream jl(out_dir / "report.jsonl");
  rep.write_jsonl(jl);
  std::ofstream tb(out_dir / "report.txt");
  tb << rep.table();
  json extra;
  extra["task"] = task_name(task);
  extra["test_sessions"] = rep.sessions;
  write_manifest(out_dir, "eval", lm.cfg.finetune.seed, &lm.cfg, extra);
  return rep;
}

}  // namespace cerespt
