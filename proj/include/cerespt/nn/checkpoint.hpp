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

// Checkpoint files: a text manifest followed by raw little-endian payloads.
//
//   #ceres-ckpt v1
//   dtype f32
//   step 1200
//   config d = 64
//   tensor item.blk0.attn.wo 64 64 0 4096
//   end
//   <payload bytes>
//
// Tensor offsets and counts are in elements of `dtype`, relative to the first
// payload byte.

#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

#include "cerespt/nn/tensor.hpp"

namespace cerespt::nn {

static_assert(std::endian::native == std::endian::little, "payloads are written in host order");

inline constexpr const char* kCheckpointHeader = "#ceres-ckpt v1";

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

struct Checkpoint {
  std::string dtype;
  std::size_t step = 0;
  std::vector<std::pair<std::string, std::string>> config;
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Entry> tensors;

  const Entry* find(const std::string& name) const {
    for (const auto& e : tensors) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
};

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const std::vector<std::pair<std::string, std::string>>& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out << kCheckpointHeader << '\n' << "dtype " << dtype_name<T>() << '\n' << "step " << store.step() << '\n';
  for (const auto& [k, v] : config) out << "config " << k << " = " << v << '\n';
  std::size_t offset = 0;
  for (const auto& [name, p] : store) {
    out << "tensor " << name << ' ' << p.value.shape.rows << ' ' << p.value.shape.cols << ' ' << offset
        << ' ' << p.value.data.size() << '\n';
    offset += p.value.data.size();
  }
  out << "end\n";
  for (const auto& [name, p] : store) {
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.data.size() * sizeof(T)));
  }
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  auto fail = [&](std::size_t line, const std::string& what) {
    throw FormatError(path + ":" + std::to_string(line) + ": " + what);
  };
  Checkpoint ck;
  struct Pending {
    std::size_t offset, count;
  };
  std::vector<Pending> pending;
  std::string line;
  std::size_t n = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != kCheckpointHeader) fail(n, "missing header '" + std::string(kCheckpointHeader) + "'");
      continue;
    }
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "dtype") {
      ls >> ck.dtype;
      if (ck.dtype != "f32" && ck.dtype != "f64") fail(n, "unknown dtype '" + ck.dtype + "'");
    } else if (kw == "step") {
      if (!(ls >> ck.step)) fail(n, "bad step");
    } else if (kw == "config") {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos || eq < 7) fail(n, "bad config line");
      ck.config.emplace_back(line.substr(7, eq - 7), line.substr(eq + 3));
    } else if (kw == "tensor") {
      Checkpoint::Entry e;
      Pending p{};
      if (!(ls >> e.name >> e.shape.rows >> e.shape.cols >> p.offset >> p.count)) fail(n, "bad tensor line");
      if (p.count != e.shape.size()) fail(n, "tensor '" + e.name + "' count does not match shape");
      ck.tensors.push_back(std::move(e));
      pending.push_back(p);
    } else {
      fail(n, "unknown manifest entry '" + kw + "'");
    }
  }
  if (!ended) fail(n, "manifest not terminated by 'end'");
  if (ck.dtype.empty()) fail(n, "manifest has no dtype");
  const std::size_t width = ck.dtype == "f32" ? 4 : 8;
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const auto [offset, count] = pending[i];
    if ((offset + count) * width > payload.size()) {
      throw FormatError(path + ": payload too short for tensor '" + ck.tensors[i].name + "'");
    }
    auto& vals = ck.tensors[i].values;
    vals.resize(count);
    const char* src = payload.data() + offset * width;
    for (std::size_t j = 0; j < count; ++j) {
      if (width == 4) {
        float f;
        std::memcpy(&f, src + 4 * j, 4);
        vals[j] = f;
      } else {
        std::memcpy(&vals[j], src + 8 * j, 8);
      }
    }
  }
  return ck;
}

// Copies checkpoint tensors into `store`; the name sets must match exactly.
template <typename T>
void restore(ParamStore<T>& store, const Checkpoint& ck) {
  for (const auto& e : ck.tensors) {
    if (!store.contains(e.name)) throw FormatError("checkpoint has unexpected tensor '" + e.name + "'");
  }
  for (auto& [name, p] : store) {
    const auto* e = ck.find(name);
    if (!e) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (e->shape != p.value.shape) {
      throw FormatError("tensor '" + name + "' has shape " + to_string(e->shape) + ", model expects " +
                        to_string(p.value.shape));
    }
    for (std::size_t i = 0; i < e->values.size(); ++i) p.value.data[i] = static_cast<T>(e->values[i]);
  }
  store.set_step(ck.step);
}

}  // namespace cerespt::nn
