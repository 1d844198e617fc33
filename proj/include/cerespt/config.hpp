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

// Run configuration: `key = value` files over a fixed key schema.

#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cerespt/training.hpp"

namespace cerespt {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  CeresConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  std::uint64_t split_seed = 7;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw InvalidArgument("config key '" + key + "': bad value '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct ConfigKey {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Field>
ConfigKey size_key(std::string name, Field field) {
  return {name, [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<std::size_t>(name, v); }};
}

template <typename Field>
ConfigKey seed_key(std::string name, Field field) {
  return {name, [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<std::uint64_t>(name, v); }};
}

template <typename Field>
ConfigKey double_key(std::string name, Field field) {
  return {name, [field](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); },
          [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(name, v); }};
}

template <typename Field>
ConfigKey bool_key(std::string name, Field field) {
  return {name, [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [name, field](RunConfig& c, const std::string& v) { field(c) = parse_bool(name, v); }};
}

}  // namespace detail

inline const std::vector<detail::ConfigKey>& config_schema() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(size_key("model.d", [](RunConfig& c) -> auto& { return c.model.d; }));
    k.push_back(size_key("model.item_layers", [](RunConfig& c) -> auto& { return c.model.item_layers; }));
    k.push_back(size_key("model.heads", [](RunConfig& c) -> auto& { return c.model.heads; }));
    k.push_back(size_key("model.gat_layers", [](RunConfig& c) -> auto& { return c.model.gat_layers; }));
    k.push_back(size_key("model.cond_layers", [](RunConfig& c) -> auto& { return c.model.cond_layers; }));
    k.push_back(size_key("model.K", [](RunConfig& c) -> auto& { return c.model.K; }));
    k.push_back(size_key("model.mlp_ratio", [](RunConfig& c) -> auto& { return c.model.mlp_ratio; }));
    k.push_back(size_key("model.max_token_pos", [](RunConfig& c) -> auto& { return c.model.max_token_pos; }));
    k.push_back(size_key("model.max_item_pos", [](RunConfig& c) -> auto& { return c.model.max_item_pos; }));
    k.push_back(bool_key("model.use_gnn", [](RunConfig& c) -> auto& { return c.model.use_gnn; }));
    k.push_back(bool_key("model.use_cond", [](RunConfig& c) -> auto& { return c.model.use_cond; }));
    k.push_back(size_key("pretrain.steps", [](RunConfig& c) -> auto& { return c.pretrain.steps; }));
    k.push_back(size_key("pretrain.batch_size", [](RunConfig& c) -> auto& { return c.pretrain.batch_size; }));
    k.push_back(double_key("pretrain.peak_lr", [](RunConfig& c) -> auto& { return c.pretrain.peak_lr; }));
    k.push_back(double_key("pretrain.warmup_frac", [](RunConfig& c) -> auto& { return c.pretrain.warmup_frac; }));
    k.push_back(double_key("pretrain.floor_lr", [](RunConfig& c) -> auto& { return c.pretrain.floor_lr; }));
    k.push_back(seed_key("pretrain.seed", [](RunConfig& c) -> auto& { return c.pretrain.seed; }));
    k.push_back(size_key("finetune.epochs", [](RunConfig& c) -> auto& { return c.finetune.epochs; }));
    k.push_back({"finetune.lr_grid",
                 [](const RunConfig& c) {
                   std::string s;
                   for (double v : c.finetune.lr_grid) s += (s.empty() ? "" : ",") + format_double(v);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> grid;
                   std::stringstream ss(v);
                   for (std::string item; std::getline(ss, item, ',');) {
                     grid.push_back(parse_number<double>("finetune.lr_grid", trim(item)));
                   }
                   if (grid.empty()) throw InvalidArgument("config key 'finetune.lr_grid': empty grid");
                   c.finetune.lr_grid = grid;
                 }});
    k.push_back(size_key("finetune.negatives", [](RunConfig& c) -> auto& { return c.finetune.negatives; }));
    k.push_back(double_key("finetune.eps_pos", [](RunConfig& c) -> auto& { return c.finetune.eps_pos; }));
    k.push_back(double_key("finetune.eps_neg", [](RunConfig& c) -> auto& { return c.finetune.eps_neg; }));
    k.push_back(size_key("finetune.batch_size", [](RunConfig& c) -> auto& { return c.finetune.batch_size; }));
    k.push_back(double_key("finetune.warmup_frac", [](RunConfig& c) -> auto& { return c.finetune.warmup_frac; }));
    k.push_back(double_key("finetune.floor_ratio", [](RunConfig& c) -> auto& { return c.finetune.floor_ratio; }));
    k.push_back(bool_key("finetune.use_cond", [](RunConfig& c) -> auto& { return c.finetune.use_cond; }));
    k.push_back(seed_key("finetune.seed", [](RunConfig& c) -> auto& { return c.finetune.seed; }));
    k.push_back(seed_key("split_seed", [](RunConfig& c) -> auto& { return c.split_seed; }));
    return k;
  }();
  return keys;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_schema()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw InvalidArgument("unknown config key '" + key + "'");
}

// Applies `key = value` lines on top of `cfg`. Blank lines and lines starting
// with '#' are ignored; unknown and repeated keys are errors.
inline void apply_config(RunConfig& cfg, std::istream& in, const std::string& source = "config") {
  std::set<std::string> seen;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument(source + ":" + std::to_string(n) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw InvalidArgument(source + ":" + std::to_string(n) + ": duplicate key '" + key + "'");
    }
    try {
      set_config_value(cfg, key, value);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  apply_config(base, in, path);
  return base;
}

inline std::vector<std::pair<std::string, std::string>> config_pairs(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_schema()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

inline std::string render_config(const RunConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_pairs(cfg)) s += k + " = " + v + "\n";
  return s;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash(const RunConfig& cfg) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(render_config(cfg));
  return os.str();
}

}  // namespace cerespt
