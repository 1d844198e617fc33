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

// Masked-token pretraining and retrieval finetuning.

#pragma once

#include <cmath>
#include <functional>
#include <ostream>

#include "cerespt/eval.hpp"
#include "cerespt/nn/optim.hpp"

namespace cerespt {

// ---------------------------------------------------------------------------
// Pretraining.

struct PretrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  double peak_lr = 3e-5;
  double warmup_frac = 0.01;
  double floor_lr = 1e-5;
  std::uint64_t seed = 1;
  MaskingRates rates;

  void validate() const {
    if (steps == 0) throw InvalidArgument("PretrainConfig.steps must be > 0");
    if (batch_size == 0) throw InvalidArgument("PretrainConfig.batch_size must be >= 1");
    if (floor_lr > peak_lr) throw InvalidArgument("PretrainConfig.floor_lr exceeds peak_lr");
  }
};

// Corrupted copies of a batch with the masked rows in packed-row coordinates.
struct MaskedBatch {
  std::vector<EncodedSession> sessions;
  std::vector<int> positions;
  std::vector<int> targets;
};

inline MaskedBatch mask_batch(const std::vector<const EncodedSession*>& batch, Rng& rng,
                              int first_content_id, int vocab_size, const MaskingRates& rates = {}) {
  MaskedBatch mb;
  int row = 0;
  for (const auto* s : batch) {
    EncodedSession copy = *s;
    for (auto& item : copy.items) {
      for (std::size_t k = 0; k < item.seqs.size(); ++k) {
        MaskedSeq m = mask(item.seqs[k], item.classes[k], rng, first_content_id, vocab_size, rates);
        for (int pos : m.mask_positions) {
          mb.positions.push_back(row + pos);
          mb.targets.push_back(m.target_ids[pos]);
        }
        row += static_cast<int>(item.seqs[k].size());
        item.seqs[k] = std::move(m.input_ids);
      }
    }
    mb.sessions.push_back(std::move(copy));
  }
  return mb;
}

template <typename T>
struct PretrainObjective {
  Var<T> intra;
  std::optional<Var<T>> gmlm;
  Var<T> total;
};

// CE of the item-encoder head plus, when conditioning is on, CE of the
// graph-conditioned head at the same masked rows.
template <typename T>
PretrainObjective<T> pretrain_objective(CeresModel<T>& model, Tape<T>& tp, const MaskedBatch& mb) {
  std::vector<const EncodedSession*> ptrs;
  for (const auto& s : mb.sessions) ptrs.push_back(&s);
  const bool cond = model.config().use_cond;
  SessionOutputs<T> f = model.forward(tp, ptrs, cond);
  PretrainObjective<T> obj;
  obj.intra = nn::softmax_cross_entropy(
      model.lm_logits(tp, nn::gather_rows(f.items.tokens, mb.positions), Head::kIntra), mb.targets);
  obj.total = obj.intra;
  if (cond) {
    obj.gmlm = nn::softmax_cross_entropy(
        model.lm_logits(tp, nn::gather_rows(f.cross.tokens, mb.positions), Head::kGmlm), mb.targets);
    obj.total = nn::add(obj.intra, *obj.gmlm);
  }
  return obj;
}

struct StepLosses {
  double loss_intra = 0;
  double loss_gmlm = 0;
  double total = 0;
  std::size_t masked = 0;
  bool skipped = false;
};

template <typename T>
StepLosses pretrain_step(CeresModel<T>& model, const std::vector<const EncodedSession*>& batch, Rng& rng,
                         double lr, int first_content_id, const MaskingRates& rates = {}) {
  const int V = static_cast<int>(model.config().vocab_size);
  MaskedBatch mb = mask_batch(batch, rng, first_content_id, V, rates);
  StepLosses out;
  out.masked = mb.positions.size();
  if (mb.positions.empty()) {
    out.skipped = true;
    return out;
  }
  Tape<T> tp;
  auto obj = pretrain_objective(model, tp, mb);
  out.loss_intra = tp.scalar(obj.intra);
  out.loss_gmlm = obj.gmlm ? tp.scalar(*obj.gmlm) : 0.0;
  out.total = tp.scalar(obj.total);
  tp.backward(obj.total, &model.params());
  nn::adam_step(model.params(), lr);
  return out;
}

struct PretrainSummary {
  std::size_t steps = 0;
  std::size_t skipped = 0;
  StepLosses last;
};

// Sessions are visited in a fresh permutation per epoch. Each step logs
// {step, lr, loss_intra, loss_gmlm} as one JSON line.
template <typename T>
PretrainSummary pretrain(CeresModel<T>& model, const std::vector<EncodedSession>& data,
                         const PretrainConfig& cfg, int first_content_id, std::ostream* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("pretrain: no sessions");
  PretrainSummary sum;
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size(), epoch = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<const EncodedSession*> batch;
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuf(derive_seed(cfg.seed, 0xBA7C, epoch++));
        std::shuffle(order.begin(), order.end(), shuf);
        cursor = 0;
      }
      batch.push_back(&data[order[cursor++]]);
    }
    const double lr = nn::lr_schedule(step, cfg.peak_lr, cfg.warmup_frac, cfg.steps, cfg.floor_lr);
    Rng rng(derive_seed(cfg.seed, 0x3A5C, step));
    sum.last = pretrain_step(model, batch, rng, lr, first_content_id, cfg.rates);
    sum.skipped += sum.last.skipped;
    ++sum.steps;
    if (log) {
      nlohmann::ordered_json j;
      j["step"] = step;
      j["lr"] = lr;
      j["loss_intra"] = sum.last.loss_intra;
      j["loss_gmlm"] = sum.last.loss_gmlm;
      if (sum.last.skipped) j["skipped"] = true;
      *log << j.dump() << '\n';
    }
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Finetuning.

struct FinetuneConfig {
  Task task = Task::kProductSearch;
  std::size_t epochs = 10;
  std::vector<double> lr_grid{1e-4, 1e-5, 5e-5, 5e-6};
  std::size_t negatives = 5;
  double eps_pos = 0.9;
  double eps_neg = 0.2;
  std::size_t batch_size = 8;
  double warmup_frac = 0.01;
  double floor_ratio = 1.0 / 3.0;  // final lr as a fraction of the peak
  bool use_cond = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(0 <= eps_neg && eps_neg < eps_pos && eps_pos <= 1)) {
      throw InvalidArgument("FinetuneConfig: need 0 <= eps_neg < eps_pos <= 1");
    }
    if (epochs == 0 || lr_grid.empty() || batch_size == 0) {
      throw InvalidArgument("FinetuneConfig: epochs, lr_grid and batch_size must be non-empty");
    }
    if (floor_ratio < 0 || floor_ratio > 1) throw InvalidArgument("FinetuneConfig.floor_ratio not in [0,1]");
  }
};

// Scalar form of the finetuning objective.
inline double hinge_value(double sim_pos, const std::vector<double>& sims_neg, double eps_pos, double eps_neg) {
  const double p = std::max(eps_pos - sim_pos, 0.0);
  double n = 0;
  for (double s : sims_neg) {
    const double h = std::max(s - eps_neg, 0.0);
    n += h * h;
  }
  return p * p + (sims_neg.empty() ? 0.0 : n / static_cast<double>(sims_neg.size()));
}

// A task split with its sessions tokenized and its candidate pool built.
struct PreparedSplit {
  const TaskDataset* data = nullptr;
  std::vector<EncodedSession> sessions;
  CandidatePool pool;
};

inline PreparedSplit prepare_split(Task task, const TaskDataset& data, const Vocab& vocab, const CeresConfig& cfg) {
  PreparedSplit ps;
  ps.data = &data;
  for (const auto& ex : data.examples) ps.sessions.push_back(encode_session(ex.session, vocab, cfg));
  ps.pool = build_pool(task, data, vocab, cfg.max_token_pos);
  return ps;
}

struct FinetuneRun {
  double lr = 0;
  std::vector<double> val_map1;  // index 0 is before any update
};

template <typename T>
struct FinetuneResult {
  std::vector<FinetuneRun> runs;
  double best_lr = 0;
  std::size_t best_epoch = 0;
  double best_val_map1 = -1;
  nn::ParamStore<T> best;
};

template <typename T>
double validation_map1(CeresModel<T>& model, Task task, const PreparedSplit& val, bool use_cond) {
  auto run = rank_examples(model, task, val.data->examples, val.sessions, val.pool, 1, use_cond);
  return map_at_n(run.results, 1);
}

// One hinge-loss step over a batch of (session, positive, negatives).
template <typename T>
double finetune_step(CeresModel<T>& model, const std::vector<const EncodedSession*>& sessions,
                     const std::vector<std::vector<const EncodedItem*>>& cands, const FinetuneConfig& cfg,
                     double lr) {
  Tape<T> tp;
  Var<T> s = model.project(tp, model.embed_sessions(tp, sessions, cfg.use_cond), true);
  std::vector<const EncodedItem*> flat;
  std::vector<int> sess_rows;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    for (const auto* c : cands[i]) {
      flat.push_back(c);
      sess_rows.push_back(static_cast<int>(i));
    }
  }
  Var<T> c = model.project(tp, model.embed_items(tp, flat), false);
  Var<T> sims = nn::cosine_rows(nn::gather_rows(s, sess_rows), c);
  std::vector<Var<T>> losses;
  std::size_t off = 0;
  for (const auto& group : cands) {
    losses.push_back(nn::hinge_loss(nn::slice_rows(sims, off, group.size()), T(cfg.eps_pos), T(cfg.eps_neg)));
    off += group.size();
  }
  Var<T> loss = nn::scale(nn::sum(nn::concat_rows(losses)), T(1) / static_cast<T>(losses.size()));
  const double value = tp.scalar(loss);
  tp.backward(loss, &model.params());
  nn::adam_step(model.params(), lr);
  return value;
}

// Trains fresh projection maps plus the encoder for every learning rate of
// the grid and keeps the parameters with the best validation MAP@1, checked
// before training and after each epoch.
template <typename T>
FinetuneResult<T> finetune(const CeresModel<T>& base, const PreparedSplit& train, const PreparedSplit& val,
                           const FinetuneConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (train.sessions.empty()) throw InvalidArgument("finetune: empty training set");
  if (train.pool.items.empty()) throw InvalidArgument("finetune: empty candidate pool");
  FinetuneResult<T> res;
  const auto& examples = train.data->examples;
  for (std::size_t g = 0; g < cfg.lr_grid.size(); ++g) {
    const double peak = cfg.lr_grid[g];
    CeresModel<T> model = base;
    model.add_finetune_maps();
    model.params().set_step(0);
    for (auto& [name, p] : model.params()) {
      std::fill(p.adam_m.begin(), p.adam_m.end(), T(0));
      std::fill(p.adam_v.begin(), p.adam_v.end(), T(0));
    }
    FinetuneRun run;
    run.lr = peak;
    auto consider = [&](std::size_t epoch) {
      const double m = validation_map1(model, cfg.task, val, cfg.use_cond);
      run.val_map1.push_back(m);
      if (log) {
        nlohmann::ordered_json j;
        j["lr"] = peak;
        j["epoch"] = epoch;
        j["val_map1"] = m;
        *log << j.dump() << '\n';
      }
      if (m > res.best_val_map1) {
        res.best_val_map1 = m;
        res.best_lr = peak;
        res.best_epoch = epoch;
        res.best = model.params();
      }
    };
    consider(0);
    const std::size_t per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total = per_epoch * cfg.epochs;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      Rng rng(derive_seed(cfg.seed, 0xF17E, g, epoch));
      std::vector<std::size_t> order(examples.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < per_epoch; ++b) {
        std::vector<const EncodedSession*> sessions;
        std::vector<std::vector<const EncodedItem*>> cands;
        for (std::size_t k = b * cfg.batch_size; k < std::min(order.size(), (b + 1) * cfg.batch_size); ++k) {
          const auto& ex = examples[order[k]];
          auto rel = relevant_ids(cfg.task, ex);
          std::erase_if(rel, [&](const auto& id) { return !train.pool.contains(id); });
          if (rel.empty()) continue;
          const auto& pos = rel[uniform_index(rng, rel.size())];
          std::vector<std::size_t> negs;
          for (const auto& c : train.pool.items) {
            if (std::find(rel.begin(), rel.end(), c.id) == rel.end()) negs.push_back(train.pool.index.at(c.id));
          }
          std::vector<const EncodedItem*> group{&train.pool.items[train.pool.index.at(pos)].item};
          for (std::size_t j = 0; j < cfg.negatives && !negs.empty(); ++j) {
            group.push_back(&train.pool.items[negs[uniform_index(rng, negs.size())]].item);
          }
          sessions.push_back(&train.sessions[order[k]]);
          cands.push_back(std::move(group));
        }
        ++step;
        if (sessions.empty()) continue;
        const double lr = nn::lr_schedule(step, peak, cfg.warmup_frac, total, peak * cfg.floor_ratio);
        finetune_step(model, sessions, cands, cfg, lr);
      }
      consider(epoch);
    }
    res.runs.push_back(std::move(run));
  }
  return res;
}

}  // namespace cerespt
