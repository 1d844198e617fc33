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

// The CERES session model.
//
//   item encoder   token + position embeddings -> item_layers blocks -> LN
//   pgnn           pooled item vectors + item positions -> gat_layers masked blocks
//   latents        MLP(v^h) -> K vectors per item, averaged over N(i) + {i}
//   cross-attn     [K latents | item tokens] -> cond_layers blocks -> LN
//   heads          logits = h E^T + b, tied to the token embedding table
//
// All items of a batch are packed into one matrix; attention runs per
// segment, so one tape handles many sessions at once.

#pragma once

#include <atomic>
#include <iostream>
#include <map>

#include "cerespt/nn/layers.hpp"
#include "cerespt/session.hpp"
#include "cerespt/text_codec.hpp"

namespace cerespt {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

struct CeresConfig {
  std::size_t d = 64;
  std::size_t item_layers = 2;
  std::size_t heads = 4;
  std::size_t gat_layers = 2;
  std::size_t cond_layers = 3;
  std::size_t K = 4;
  std::size_t mlp_ratio = 2;
  std::size_t max_token_pos = 128;
  std::size_t max_item_pos = 32;
  std::size_t vocab_size = 0;
  bool use_gnn = true;
  bool use_cond = true;

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) {
      throw InvalidArgument("CeresConfig: heads (" + std::to_string(heads) + ") must divide d (" +
                            std::to_string(d) + ")");
    }
    if (K < 1) throw InvalidArgument("CeresConfig: K must be >= 1");
    if (item_layers < 1) throw InvalidArgument("CeresConfig: item_layers must be >= 1");
    if (use_gnn && gat_layers < 1) throw InvalidArgument("CeresConfig: gat_layers must be >= 1");
    if (use_cond && cond_layers < 1) throw InvalidArgument("CeresConfig: cond_layers must be >= 1");
    if (mlp_ratio < 1 || max_token_pos < 2 || max_item_pos < 1) {
      throw InvalidArgument("CeresConfig: mlp_ratio, max_token_pos and max_item_pos must be positive");
    }
    if (vocab_size <= static_cast<std::size_t>(Vocab::kBullet)) {
      throw InvalidArgument("CeresConfig: vocab_size not set");
    }
  }
};

// ---------------------------------------------------------------------------
// Tokenized sessions.

struct EncodedItem {
  bool is_query = false;
  std::string key;  // query text or product id
  std::vector<TokenSeq> seqs;
  std::vector<FieldClass> classes;

  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& s : seqs) n += s.size();
    return n;
  }
};

// Relation buckets for the learned attention bias between items.
enum EdgeBucket : int {
  kBucketSelf = 0,
  kBucketQueryDist1 = 1,  // .. 4 for distance >= 4
  kBucketQueryToProduct = 5,  // + action
  kBucketProductToQuery = 8,  // + action
  kNumEdgeBuckets = 11,
};

struct SessionTopology {
  std::size_t n = 0;
  std::shared_ptr<const nn::AttentionMask> mask;
  std::shared_ptr<const std::vector<int>> bias_index;
  std::vector<std::vector<std::size_t>> neighborhood;  // undirected, self included
  std::vector<int> positions;
};

struct EncodedSession {
  std::string session_id;
  std::vector<EncodedItem> items;  // queries by index, then products by first edge
  SessionTopology topo;
};

namespace detail {

inline void truncate(TokenSeq& seq, std::size_t max_len) {
  static std::atomic<bool> warned{false};
  if (seq.size() <= max_len) return;
  if (!warned.exchange(true)) {
    std::cerr << "warning: sequences longer than " << max_len << " tokens are truncated\n";
  }
  seq.resize(max_len);
}

}  // namespace detail

inline EncodedItem encode_query_item(const Query& q, const Vocab& vocab, std::size_t max_len) {
  EncodedItem it;
  it.is_query = true;
  it.key = query_key(q.tokens);
  it.seqs.push_back(encode_query(q, vocab));
  detail::truncate(it.seqs.back(), max_len);
  it.classes.push_back(FieldClass::kShort);
  return it;
}

inline EncodedItem encode_product_item(const Product& p, const Vocab& vocab, std::size_t max_len) {
  EncodedItem it;
  it.key = p.product_id;
  for (const auto& a : p.attributes) {
    it.seqs.push_back(encode_attribute(a, vocab));
    detail::truncate(it.seqs.back(), max_len);
    it.classes.push_back(field_class_of(a));
  }
  return it;
}

// A single attribute as a standalone item (entity-linking candidates).
inline EncodedItem encode_attribute_item(const Attribute& a, const Vocab& vocab, std::size_t max_len) {
  EncodedItem it;
  it.key = a.attr_type + "=" + join_tokens(a.tokens);
  it.seqs.push_back(encode_attribute(a, vocab));
  detail::truncate(it.seqs.back(), max_len);
  it.classes.push_back(field_class_of(a));
  return it;
}

inline SessionTopology build_topology(const SessionGraph& s, const std::vector<std::string>& products,
                                      std::size_t max_item_pos) {
  const std::size_t nq = s.queries.size();
  const std::size_t n = nq + products.size();
  std::map<std::string, std::size_t> pindex;
  for (std::size_t i = 0; i < products.size(); ++i) pindex[products[i]] = nq + i;

  auto mask = std::make_shared<nn::AttentionMask>(n);
  auto bias = std::make_shared<std::vector<int>>(n * n, -1);
  std::vector<std::vector<char>> undirected(n, std::vector<char>(n, 0));
  auto set = [&](std::size_t i, std::size_t j, int bucket) {
    mask->allow(i, j);
    (*bias)[i * n + j] = std::max((*bias)[i * n + j], bucket);
    undirected[i][j] = undirected[j][i] = 1;
  };
  for (std::size_t i = 0; i < n; ++i) set(i, i, kBucketSelf);
  for (const auto& e : derive_query_chain_edges(s)) {
    const int dist = std::min(e.distance, 4);
    set(static_cast<std::size_t>(e.dst_query), static_cast<std::size_t>(e.src), kBucketQueryDist1 + dist - 1);
  }
  for (const auto& e : s.edges) {
    if (e.kind != EdgeKind::kQueryProduct) continue;
    const std::size_t q = static_cast<std::size_t>(e.src);
    const std::size_t p = pindex.at(e.product_id);
    // The strongest action wins when a pair carries several.
    set(q, p, kBucketQueryToProduct + static_cast<int>(e.action));
    set(p, q, kBucketProductToQuery + static_cast<int>(e.action));
  }
  SessionTopology t;
  t.n = n;
  t.mask = mask;
  t.bias_index = bias;
  t.neighborhood.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (undirected[i][j]) t.neighborhood[i].push_back(j);
    }
    t.positions.push_back(static_cast<int>(std::min(i, max_item_pos - 1)));
  }
  return t;
}

inline EncodedSession encode_session(const SessionGraph& s, const Vocab& vocab, const CeresConfig& cfg) {
  if (s.queries.empty() && s.products.empty()) {
    throw InvalidArgument("session '" + s.session_id + "' is empty");
  }
  EncodedSession out;
  out.session_id = s.session_id;
  for (const auto& q : s.queries) out.items.push_back(encode_query_item(q, vocab, cfg.max_token_pos));
  const auto order = product_order(s);
  for (const auto& id : order) {
    out.items.push_back(encode_product_item(*s.find_product(id), vocab, cfg.max_token_pos));
  }
  out.topo = build_topology(s, order, cfg.max_item_pos);
  return out;
}

// A topology where every item attends to every item with zero relation bias.
inline SessionTopology complete_topology(std::size_t n, std::size_t max_item_pos) {
  SessionTopology t;
  t.n = n;
  t.mask = std::make_shared<nn::AttentionMask>(nn::AttentionMask::full(n));
  t.bias_index = std::make_shared<std::vector<int>>(n * n, kBucketSelf);
  t.neighborhood.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) t.neighborhood[i].push_back(j);
    t.positions.push_back(static_cast<int>(std::min(i, max_item_pos - 1)));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Forward pass products.

// Row layout of a packed item batch: the sequences of item i occupy rows
// [item_row_begin[i], item_row_begin[i] + item_rows[i]).
struct ItemLayout {
  std::vector<std::size_t> seq_begin, seq_len;
  std::vector<std::size_t> item_first_seq, item_num_seqs;
  std::vector<std::size_t> item_row_begin, item_rows;
  std::size_t rows = 0;

  std::size_t num_items() const { return item_rows.size(); }
};

inline ItemLayout layout_items(const std::vector<const EncodedItem*>& items) {
  ItemLayout L;
  for (const auto* it : items) {
    if (it->seqs.empty()) throw InvalidArgument("item '" + it->key + "' has no sequences");
    L.item_first_seq.push_back(L.seq_begin.size());
    L.item_num_seqs.push_back(it->seqs.size());
    L.item_row_begin.push_back(L.rows);
    for (const auto& s : it->seqs) {
      if (s.empty()) throw InvalidArgument("item '" + it->key + "' has an empty sequence");
      L.seq_begin.push_back(L.rows);
      L.seq_len.push_back(s.size());
      L.rows += s.size();
    }
    L.item_rows.push_back(L.rows - L.item_row_begin.back());
  }
  return L;
}

template <typename T>
struct ItemOutputs {
  ItemLayout layout;
  Var<T> tokens;  // v_ij, [rows x d]
  Var<T> pooled;  // v_i,  [items x d]
};

template <typename T>
struct CrossOutputs {
  Var<T> tokens;                     // v^c_ij aligned with the item token rows
  std::vector<Var<T>> latent_rows;   // latent rows entering each layer, then after the last
};

template <typename T>
struct SessionOutputs {
  ItemOutputs<T> items;
  Var<T> vh;       // [items x d]
  Var<T> latents;  // [items*K x d], averaged over neighborhoods
  CrossOutputs<T> cross;
  std::vector<std::size_t> session_first_item, session_num_items;
};

enum class Head { kIntra, kGmlm };

template <typename T>
class CeresModel {
 public:
  CeresModel(CeresConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    init_params(seed);
  }

  const CeresConfig& config() const { return cfg_; }
  CeresConfig& mutable_config() { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

  // Two maps that project session and candidate embeddings for retrieval.
  void add_finetune_maps() {
    for (const char* side : {"ft.session", "ft.item"}) {
      const std::string w = std::string(side) + ".w";
      if (store_.contains(w)) continue;
      Tensor<T> eye({cfg_.d, cfg_.d});
      for (std::size_t i = 0; i < cfg_.d; ++i) eye(i, i) = T(1);
      store_.add(w, std::move(eye));
      store_.add(std::string(side) + ".b", Tensor<T>({1, cfg_.d}));
    }
  }
  bool has_finetune_maps() const { return store_.contains("ft.session.w"); }

  // Re-draws every parameter under `prefix` from a fresh seed.
  void reinitialize(const std::string& prefix, std::uint64_t seed) {
    CeresModel fresh(cfg_, seed);
    for (auto& [name, p] : store_) {
      if (name.rfind(prefix, 0) == 0 && fresh.store_.contains(name)) p.value = fresh.store_.at(name).value;
    }
  }

  // --- item encoder -------------------------------------------------------

  ItemOutputs<T> encode_items(Tape<T>& tp, const std::vector<const EncodedItem*>& items) {
    ItemOutputs<T> out;
    out.layout = layout_items(items);
    const ItemLayout& L = out.layout;
    std::vector<int> ids, pos;
    ids.reserve(L.rows);
    pos.reserve(L.rows);
    for (const auto* it : items) {
      for (const auto& s : it->seqs) {
        for (std::size_t j = 0; j < s.size(); ++j) {
          if (s[j] < 0 || static_cast<std::size_t>(s[j]) >= cfg_.vocab_size) {
            throw InvalidArgument("token id " + std::to_string(s[j]) + " outside vocabulary");
          }
          ids.push_back(s[j]);
          pos.push_back(static_cast<int>(std::min(j + 1, cfg_.max_token_pos)));
        }
      }
    }
    Var<T> x = nn::add(nn::gather_rows(p(tp, "tok_emb"), std::move(ids)),
                       nn::gather_rows(p(tp, "tok_pos"), std::move(pos)));
    std::vector<nn::AttentionSegment> segs;
    segs.reserve(L.seq_begin.size());
    for (std::size_t s = 0; s < L.seq_begin.size(); ++s) segs.push_back({L.seq_begin[s], L.seq_len[s], {}, {}});
    for (std::size_t l = 0; l < cfg_.item_layers; ++l) {
      x = nn::transformer_block(x, block(tp, "item.blk" + std::to_string(l)), segs);
    }
    out.tokens = ln(tp, x, "item.ln_f");

    // Queries pool their [SEARCH] row, attributes their [ATTR] row, products
    // average their attribute rows.
    nn::RowMix mix;
    mix.out_rows = L.num_items();
    for (std::size_t i = 0; i < L.num_items(); ++i) {
      const double w = 1.0 / static_cast<double>(L.item_num_seqs[i]);
      for (std::size_t k = 0; k < L.item_num_seqs[i]; ++k) mix.add(i, L.seq_begin[L.item_first_seq[i] + k], w);
    }
    out.pooled = nn::row_mix(out.tokens, std::move(mix));
    return out;
  }

  // --- session encoder ----------------------------------------------------

  // `pooled` holds the items of each topology back to back.
  Var<T> pgnn(Tape<T>& tp, Var<T> pooled, const std::vector<const SessionTopology*>& topos) {
    std::vector<int> positions;
    std::vector<nn::AttentionSegment> segs;
    std::size_t begin = 0;
    for (const auto* t : topos) {
      positions.insert(positions.end(), t->positions.begin(), t->positions.end());
      segs.push_back({begin, t->n, t->mask, t->bias_index});
      begin += t->n;
    }
    if (begin != pooled.rows()) throw InvalidArgument("pgnn: topology sizes do not match pooled rows");
    Var<T> h = nn::add(pooled, nn::gather_rows(p(tp, "item_pos"), std::move(positions)));
    if (!cfg_.use_gnn) return h;
    Var<T> bias = p(tp, "gnn.edge_bias");
    for (std::size_t l = 0; l < cfg_.gat_layers; ++l) {
      h = nn::transformer_block(h, block(tp, "gnn.blk" + std::to_string(l)), segs, std::optional<Var<T>>(bias));
    }
    return h;
  }

  // K latent tokens per item, averaged over each item's neighborhood.
  Var<T> latent_tokens(Tape<T>& tp, Var<T> vh, const std::vector<const SessionTopology*>& topos) {
    const std::size_t n = vh.rows(), K = cfg_.K, d = cfg_.d;
    Var<T> z = ln(tp, vh, "latent.ln");
    z = nn::gelu(nn::linear(z, p(tp, "latent.w1"), p(tp, "latent.b1")));
    z = nn::linear(z, p(tp, "latent.w2"), p(tp, "latent.b2"));
    z = nn::reshape(z, Shape{n * K, d});
    nn::RowMix mix;
    mix.out_rows = n * K;
    std::size_t base = 0;
    for (const auto* t : topos) {
      for (std::size_t i = 0; i < t->n; ++i) {
        const double w = 1.0 / static_cast<double>(t->neighborhood[i].size());
        for (std::size_t j : t->neighborhood[i]) {
          for (std::size_t k = 0; k < K; ++k) mix.add((base + i) * K + k, (base + j) * K + k, w);
        }
      }
      base += t->n;
    }
    if (base != n) throw InvalidArgument("latent_tokens: topology sizes do not match items");
    return nn::row_mix(z, std::move(mix));
  }

  // Runs [latents_i | tokens_i] per item; latent rows may attend only to
  // latent columns.
  CrossOutputs<T> cross_attention(Tape<T>& tp, Var<T> latents, Var<T> tokens, const ItemLayout& L,
                                  bool keep_latent_rows = false) {
    const std::size_t K = cfg_.K, n = L.num_items();
    if (latents.rows() != n * K || tokens.rows() != L.rows) {
      throw InvalidArgument("cross_attention: inputs do not match the item layout");
    }
    Var<T> lat = nn::add_rowvec(latents, nn::slice_rows(p(tp, "tok_pos"), 0, 1));
    Var<T> all = nn::concat_rows<T>({lat, tokens});
    std::vector<int> gather, token_rows(L.rows), latent_idx;
    std::vector<nn::AttentionSegment> segs;
    std::map<std::size_t, std::shared_ptr<const nn::AttentionMask>> masks;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t begin = gather.size(), len = K + L.item_rows[i];
      for (std::size_t k = 0; k < K; ++k) {
        latent_idx.push_back(static_cast<int>(gather.size()));
        gather.push_back(static_cast<int>(i * K + k));
      }
      for (std::size_t r = 0; r < L.item_rows[i]; ++r) {
        token_rows[L.item_row_begin[i] + r] = static_cast<int>(gather.size());
        gather.push_back(static_cast<int>(n * K + L.item_row_begin[i] + r));
      }
      auto& m = masks[len];
      if (!m) {
        auto mk = std::make_shared<nn::AttentionMask>(len);
        for (std::size_t a = 0; a < len; ++a) {
          for (std::size_t b = 0; b < len; ++b) mk->allow(a, b, a >= K || b < K);
        }
        m = mk;
      }
      segs.push_back({begin, len, m, {}});
    }
    Var<T> x = nn::gather_rows(all, std::move(gather));
    CrossOutputs<T> out;
    for (std::size_t l = 0; l < cfg_.cond_layers; ++l) {
      if (keep_latent_rows) out.latent_rows.push_back(nn::gather_rows(x, latent_idx));
      x = nn::transformer_block(x, block(tp, "cond.blk" + std::to_string(l)), segs);
    }
    if (keep_latent_rows) out.latent_rows.push_back(nn::gather_rows(x, latent_idx));
    out.tokens = nn::gather_rows(ln(tp, x, "cond.ln_f"), std::move(token_rows));
    return out;
  }

  SessionOutputs<T> forward(Tape<T>& tp, const std::vector<const EncodedSession*>& batch,
                            bool with_cond = true, bool keep_latent_rows = false) {
    SessionOutputs<T> out;
    std::vector<const EncodedItem*> items;
    std::vector<const SessionTopology*> topos;
    for (const auto* s : batch) {
      if (s->items.empty()) throw InvalidArgument("session '" + s->session_id + "' is empty");
      out.session_first_item.push_back(items.size());
      out.session_num_items.push_back(s->items.size());
      for (const auto& it : s->items) items.push_back(&it);
      topos.push_back(&s->topo);
    }
    out.items = encode_items(tp, items);
    if (!with_cond) return out;
    out.vh = pgnn(tp, out.items.pooled, topos);
    out.latents = latent_tokens(tp, out.vh, topos);
    out.cross = cross_attention(tp, out.latents, out.items.tokens, out.items.layout, keep_latent_rows);
    return out;
  }

  Var<T> lm_logits(Tape<T>& tp, Var<T> rows, Head head) {
    return nn::add_rowvec(nn::matmul_nt(rows, p(tp, "tok_emb")),
                          p(tp, head == Head::kIntra ? "head.intra.b" : "head.gmlm.b"));
  }

  // One row per session: the mean over items of either the mean v^c row
  // (use_cond) or the pooled item vector.
  Var<T> embed_sessions(Tape<T>& tp, const std::vector<const EncodedSession*>& batch, bool use_cond) {
    SessionOutputs<T> f = forward(tp, batch, use_cond);
    const ItemLayout& L = f.items.layout;
    nn::RowMix mix;
    mix.out_rows = batch.size();
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const double wi = 1.0 / static_cast<double>(f.session_num_items[s]);
      for (std::size_t i = f.session_first_item[s]; i < f.session_first_item[s] + f.session_num_items[s]; ++i) {
        if (use_cond) {
          const double w = wi / static_cast<double>(L.item_rows[i]);
          for (std::size_t r = 0; r < L.item_rows[i]; ++r) mix.add(s, L.item_row_begin[i] + r, w);
        } else {
          mix.add(s, i, wi);
        }
      }
    }
    return nn::row_mix(use_cond ? f.cross.tokens : f.items.pooled, std::move(mix));
  }

  Var<T> embed_items(Tape<T>& tp, const std::vector<const EncodedItem*>& items) {
    return encode_items(tp, items).pooled;
  }

  Var<T> project(Tape<T>& tp, Var<T> x, bool session_side) {
    const std::string side = session_side ? "ft.session" : "ft.item";
    return nn::linear(x, p(tp, side + ".w"), p(tp, side + ".b"));
  }

 private:
  Var<T> p(Tape<T>& tp, const std::string& name) { return tp.param(store_, name); }

  Var<T> ln(Tape<T>& tp, Var<T> x, const std::string& prefix) {
    return nn::layer_norm(x, p(tp, prefix + ".g"), p(tp, prefix + ".b"));
  }

  nn::BlockVars<T> block(Tape<T>& tp, const std::string& prefix) {
    return nn::block_vars(tp, store_, prefix, cfg_.heads);
  }

  void init_params(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xCE7E5));
    const std::size_t d = cfg_.d, V = cfg_.vocab_size;
    const nn::BlockShape bs{d, cfg_.mlp_ratio * d};
    store_.add("tok_emb", nn::normal_tensor<T>({V, d}, 0.02, rng));
    store_.add("tok_pos", nn::normal_tensor<T>({cfg_.max_token_pos + 1, d}, 0.02, rng));
    for (std::size_t l = 0; l < cfg_.item_layers; ++l) {
      nn::add_block_params(store_, "item.blk" + std::to_string(l), bs, rng);
    }
    nn::add_layer_norm_params(store_, "item.ln_f", d);
    store_.add("head.intra.b", Tensor<T>({1, V}));
    store_.add("head.gmlm.b", Tensor<T>({1, V}));
    store_.add("item_pos", nn::normal_tensor<T>({cfg_.max_item_pos, d}, 0.02, rng));
    for (std::size_t l = 0; l < cfg_.gat_layers; ++l) {
      nn::add_block_params(store_, "gnn.blk" + std::to_string(l), bs, rng);
    }
    store_.add("gnn.edge_bias", Tensor<T>({1, static_cast<std::size_t>(kNumEdgeBuckets)}));
    nn::add_layer_norm_params(store_, "latent.ln", d);
    store_.add("latent.w1", nn::xavier_tensor<T>({d, d}, rng));
    store_.add("latent.b1", Tensor<T>({1, d}));
    store_.add("latent.w2", nn::xavier_tensor<T>({d, cfg_.K * d}, rng));
    store_.add("latent.b2", Tensor<T>({1, cfg_.K * d}));
    for (std::size_t l = 0; l < cfg_.cond_layers; ++l) {
      nn::add_block_params(store_, "cond.blk" + std::to_string(l), bs, rng);
    }
    nn::add_layer_norm_params(store_, "cond.ln_f", d);
  }

  CeresConfig cfg_;
  nn::ParamStore<T> store_;
};

}  // namespace cerespt
