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

// Vocabulary, special tokens, item serialization and token masking.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cerespt/error.hpp"
#include "cerespt/rng.hpp"
#include "cerespt/session.hpp"

namespace cerespt {

inline constexpr std::string_view kVocabHeader = "#ceres-vocab v1";
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kSearchToken = "[SEARCH]";

inline std::string attr_token(std::string_view attr_type) {
  return "[ATTR:" + std::string(attr_type) + "]";
}

using TokenSeq = std::vector<int>;

enum class FieldClass { kLong, kShort };

// Ids 0..4 are [PAD] [MASK] [SEARCH] [TITLE] [BULLET]; the attribute-type
// tokens follow; content tokens come last.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kSearch = 2;
  static constexpr int kTitle = 3;
  static constexpr int kBullet = 4;

  Vocab() : Vocab({}, {}) {}

  Vocab(std::vector<std::string> attr_types, std::vector<std::string> content) {
    for (auto s : {kPadToken, kMaskToken, kSearchToken, kTitleMarker, kBulletMarker}) {
      push(std::string(s));
    }
    std::vector<std::string> types;
    types.emplace_back(kProductSequence);
    std::sort(attr_types.begin(), attr_types.end());
    for (auto& t : attr_types) {
      if (t != kProductSequence && std::find(types.begin(), types.end(), t) == types.end()) {
        types.push_back(t);
      }
    }
    for (const auto& t : types) push(attr_token(t));
    first_content_ = size();
    std::sort(content.begin(), content.end());
    content.erase(std::unique(content.begin(), content.end()), content.end());
    for (auto& c : content) {
      if (c.empty() || c.front() == '[') throw InvalidArgument("invalid content token '" + c + "'");
      push(std::move(c));
    }
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int first_content_id() const { return first_content_; }
  bool is_special(int id) const { return id < first_content_; }
  const std::string& token(int id) const { return tokens_.at(id); }

  std::optional<int> find(std::string_view tok) const {
    auto it = ids_.find(std::string(tok));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  int id(std::string_view tok) const {
    auto it = ids_.find(std::string(tok));
    if (it == ids_.end()) throw InvalidArgument("token '" + std::string(tok) + "' not in vocabulary");
    return it->second;
  }

  std::vector<std::string> attr_types() const {
    std::vector<std::string> out;
    for (int i = kBullet + 1; i < first_content_; ++i) {
      const auto& t = tokens_[i];
      out.push_back(t.substr(6, t.size() - 7));
    }
    return out;
  }

  int attr_type_id(std::string_view attr_type) const {
    if (auto id = find(attr_token(attr_type))) return *id;
    std::string known;
    for (const auto& t : attr_types()) known += (known.empty() ? "" : ", ") + t;
    throw InvalidArgument("unknown attribute type '" + std::string(attr_type) +
                          "' (registered: " + known + ")");
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << kVocabHeader << '\n';
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != kVocabHeader) {
      throw FormatError(path.string() + ": expected header '" + std::string(kVocabHeader) + "'");
    }
    std::vector<std::string> toks;
    while (std::getline(in, line)) toks.push_back(line);
    Vocab v;
    v.tokens_.clear();
    v.ids_.clear();
    v.first_content_ = -1;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const auto& t = toks[i];
      const bool special = !t.empty() && t.front() == '[';
      if (!special && v.first_content_ < 0) v.first_content_ = static_cast<int>(i);
      if (special && v.first_content_ >= 0) {
        throw FormatError(path.string() + ": special token '" + t + "' after content tokens");
      }
      if (v.ids_.count(t)) throw FormatError(path.string() + ": duplicate token '" + t + "'");
      v.push(t);
    }
    if (v.size() < kBullet + 2 || v.tokens_[kPad] != kPadToken || v.tokens_[kMask] != kMaskToken ||
        v.tokens_[kSearch] != kSearchToken || v.tokens_[kTitle] != kTitleMarker ||
        v.tokens_[kBullet] != kBulletMarker) {
      throw FormatError(path.string() + ": reserved tokens missing or out of order");
    }
    if (v.first_content_ < 0) v.first_content_ = v.size();
    return v;
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void push(std::string t) {
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int first_content_ = 0;
};

inline Vocab build_vocab(const std::vector<const std::vector<SessionGraph>*>& corpora,
                         const std::vector<std::string>& extra_tokens = {}) {
  std::set<std::string> types, content(extra_tokens.begin(), extra_tokens.end());
  for (const auto* sessions : corpora) {
    for (const auto& s : *sessions) {
      for (const auto& q : s.queries) content.insert(q.tokens.begin(), q.tokens.end());
      for (const auto& p : s.products) {
        for (const auto& a : p.attributes) {
          types.insert(a.attr_type);
          for (const auto& t : a.tokens) {
            if (t != kTitleMarker && t != kBulletMarker) content.insert(t);
          }
        }
      }
    }
  }
  return Vocab({types.begin(), types.end()}, {content.begin(), content.end()});
}

inline Vocab build_vocab(const std::vector<SessionGraph>& sessions) {
  return build_vocab(std::vector<const std::vector<SessionGraph>*>{&sessions});
}

inline TokenSeq encode_query(const Query& q, const Vocab& vocab) {
  TokenSeq out;
  out.reserve(q.tokens.size() + 1);
  out.push_back(Vocab::kSearch);
  for (const auto& t : q.tokens) out.push_back(vocab.id(t));
  return out;
}

inline TokenSeq encode_attribute(const Attribute& a, const Vocab& vocab) {
  TokenSeq out;
  out.reserve(a.tokens.size() + 1);
  out.push_back(vocab.attr_type_id(a.attr_type));
  for (const auto& t : a.tokens) {
    if (t == kTitleMarker) {
      out.push_back(Vocab::kTitle);
    } else if (t == kBulletMarker) {
      out.push_back(Vocab::kBullet);
    } else {
      out.push_back(vocab.id(t));
    }
  }
  return out;
}

inline FieldClass field_class_of(const Attribute& a) {
  return a.attr_type == kProductSequence ? FieldClass::kLong : FieldClass::kShort;
}

inline Tokens decode(const TokenSeq& seq, const Vocab& vocab, bool drop_leading_special = true) {
  Tokens out;
  for (std::size_t i = drop_leading_special ? 1 : 0; i < seq.size(); ++i) {
    out.push_back(vocab.token(seq[i]));
  }
  return out;
}

struct MaskedSeq {
  TokenSeq input_ids;
  TokenSeq target_ids;
  std::vector<int> mask_positions;
  FieldClass field_class = FieldClass::kLong;
};

struct MaskingRates {
  double long_select = 0.15;
  double short_sequence = 0.5;
  double short_token = 0.5;
  double to_mask = 0.8;
  double to_random = 0.1;
};

// Long sequences: each content token is selected independently. Short
// sequences: a sequence-level coin, then per-token selection with at least
// one token forced. Selected tokens become [MASK], a random content token, or
// stay unchanged (80/10/10).
inline MaskedSeq mask(const TokenSeq& seq, FieldClass field, Rng& rng, int first_content_id,
                      int vocab_size, const MaskingRates& rates = {}) {
  MaskedSeq out;
  out.input_ids = seq;
  out.target_ids = seq;
  out.field_class = field;
  std::vector<int> maskable;
  for (int i = 0; i < static_cast<int>(seq.size()); ++i) {
    if (seq[i] >= first_content_id) maskable.push_back(i);
  }
  if (maskable.empty()) return out;
  std::vector<int>& selected = out.mask_positions;
  if (field == FieldClass::kLong) {
    for (int i : maskable) {
      if (bernoulli(rng, rates.long_select)) selected.push_back(i);
    }
  } else {
    if (!bernoulli(rng, rates.short_sequence)) return out;
    for (int i : maskable) {
      if (bernoulli(rng, rates.short_token)) selected.push_back(i);
    }
    if (selected.empty()) selected.push_back(maskable[uniform_index(rng, maskable.size())]);
  }
  const int n_content = vocab_size - first_content_id;
  for (int i : selected) {
    const double u = uniform01(rng);
    if (u < rates.to_mask) {
      out.input_ids[i] = Vocab::kMask;
    } else if (u < rates.to_mask + rates.to_random && n_content > 0) {
      out.input_ids[i] = first_content_id + static_cast<int>(uniform_index(rng, n_content));
    }
  }
  return out;
}

inline MaskedSeq mask(const TokenSeq& seq, FieldClass field, Rng& rng, const Vocab& vocab,
                      const MaskingRates& rates = {}) {
  return mask(seq, field, rng, vocab.first_content_id(), vocab.size(), rates);
}

}  // namespace cerespt
