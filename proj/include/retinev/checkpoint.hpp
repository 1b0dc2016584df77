// Copyright 2026 The retinev Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "retinev/binary_io.hpp"
#include "retinev/model.hpp"
#include "retinev/optim.hpp"

// RVCK checkpoint (little-endian):
//   "RVCK" | u32 version | u64 config_hash | str phase | str model_config |
//   u64 iteration | str rng_state | u32 n_params | n x param | u8 has_optimizer |
//   [i64 adam_step | n x (f32[size] m, f32[size] v)] | u64 fnv1a(all preceding bytes)
// param: str name | 4 x i32 shape | f32[size] values
// str: u32 length | bytes

namespace retinev {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParamRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const ParamRecord&, const ParamRecord&) = default;
};

struct OptimizerRecord {
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  friend bool operator==(const OptimizerRecord&, const OptimizerRecord&) = default;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::string phase;  // "init", "pretrain" or "main"
  ModelConfig model;
  std::uint64_t iteration = 0;
  std::string rng_state;
  std::vector<ParamRecord> params;
  std::optional<OptimizerRecord> optimizer;

  [[nodiscard]] const ParamRecord* find(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  io::ByteWriter w;
  w.put_bytes("RVCK");
  w.put(kCheckpointVersion);
  w.put(c.config_hash);
  w.put_string(c.phase);
  w.put_string(model_config_string(c.model));
  w.put(c.iteration);
  w.put_string(c.rng_state);
  w.put(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) {
    if (p.values.size() != p.shape.numel()) throw ValidationError("checkpoint: parameter " + p.name + " size mismatch");
    w.put_string(p.name);
    for (int d : {p.shape.n, p.shape.c, p.shape.h, p.shape.w}) w.put(static_cast<std::int32_t>(d));
    for (float v : p.values) w.put(v);
  }
  w.put(static_cast<std::uint8_t>(c.optimizer ? 1 : 0));
  if (c.optimizer) {
    const auto& o = *c.optimizer;
    if (o.m.size() != c.params.size() || o.v.size() != c.params.size()) {
      throw ValidationError("checkpoint: optimizer state does not match parameter list");
    }
    w.put(o.step);
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      if (o.m[i].size() != c.params[i].values.size() || o.v[i].size() != c.params[i].values.size()) {
        throw ValidationError("checkpoint: optimizer slot size mismatch for " + c.params[i].name);
      }
      for (float x : o.m[i]) w.put(x);
      for (float x : o.v[i]) w.put(x);
    }
  }
  std::vector<unsigned char> bytes = w.bytes();
  io::ByteWriter trailer;
  trailer.put(io::fnv1a(bytes.data(), bytes.size()));
  bytes.insert(bytes.end(), trailer.bytes().begin(), trailer.bytes().end());
  return bytes;
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& context = "checkpoint") {
  if (bytes.size() < 4 + 4 + 8) throw CorruptFileError(context + ": truncated (too short)");
  if (std::string(bytes.begin(), bytes.begin() + 4) != "RVCK") throw CorruptFileError(context + ": bad magic");
  io::ByteReader head(bytes.data() + 4, 4, context);
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CorruptFileError(context + ": unsupported version " + std::to_string(version) + " (expected " +
                           std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = bytes.size() - 8;
  io::ByteReader tail(bytes.data() + body, 8, context);
  if (tail.get<std::uint64_t>() != io::fnv1a(bytes.data(), body)) {
    throw CorruptFileError(context + ": checksum mismatch (truncated or corrupted)");
  }

  io::ByteReader r(bytes.data() + 8, body - 8, context);
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>();
  c.phase = r.get_string();
  c.model = parse_model_config(r.get_string());
  c.iteration = r.get<std::uint64_t>();
  c.rng_state = r.get_string();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    ParamRecord p;
    p.name = r.get_string();
    int dims[4];
    for (int& d : dims) {
      d = r.get<std::int32_t>();
      if (d <= 0) throw CorruptFileError(context + ": bad shape for " + p.name);
    }
    p.shape = {dims[0], dims[1], dims[2], dims[3]};
    if (p.shape.numel() * sizeof(float) > r.remaining()) throw CorruptFileError(context + ": truncated parameter data");
    p.values.resize(p.shape.numel());
    for (auto& v : p.values) v = r.get<float>();
    c.params.push_back(std::move(p));
  }
  if (r.get<std::uint8_t>() != 0) {
    OptimizerRecord o;
    o.step = r.get<std::int64_t>();
    for (const auto& p : c.params) {
      std::vector<float> m(p.values.size());
      std::vector<float> v(p.values.size());
      for (auto& x : m) x = r.get<float>();
      for (auto& x : v) x = r.get<float>();
      o.m.push_back(std::move(m));
      o.v.push_back(std::move(v));
    }
    c.optimizer = std::move(o);
  }
  if (r.remaining() != 0) throw CorruptFileError(context + ": trailing bytes");
  return c;
}

/// Writes to a sibling temporary file first, then renames over `path`.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, encode_checkpoint(c));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

/// Throws TrainingError naming both hashes when `c` was written under another config.
inline void require_config_hash(const Checkpoint& c, std::uint64_t expected, const std::string& what) {
  if (c.config_hash != expected) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "config hash %016llx does not match current config %016llx",
                  static_cast<unsigned long long>(c.config_hash), static_cast<unsigned long long>(expected));
    throw TrainingError(what + ": " + buf);
  }
}

template <class T>
std::vector<ParamRecord> snapshot_params(const nn::ParamList<T>& params) {
  std::vector<ParamRecord> out;
  for (const auto& p : params) {
    ParamRecord r{p.name, p.var.shape(), std::vector<float>(p.var.value().size())};
    for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = static_cast<float>(p.var.value()[i]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Copies matching records into `params`. With `require_all` every parameter
/// must be present; otherwise parameters absent from the checkpoint keep their values.
template <class T>
void restore_params(const Checkpoint& c, const nn::ParamList<T>& params, bool require_all = true) {
  for (auto p : params) {
    const ParamRecord* r = c.find(p.name);
    if (!r) {
      if (require_all) throw CorruptFileError("checkpoint: missing parameter " + p.name);
      continue;
    }
    if (r->shape != p.var.shape()) {
      throw CorruptFileError("checkpoint: parameter " + p.name + " has shape " + to_string(r->shape) +
                             ", model expects " + to_string(p.var.shape()));
    }
    auto& dst = p.var.mutable_value();
    for (std::size_t i = 0; i < r->values.size(); ++i) dst[i] = static_cast<T>(r->values[i]);
  }
}

template <class T>
OptimizerRecord snapshot_optimizer(const Adam<T>& opt) {
  OptimizerRecord o;
  o.step = opt.step_count();
  for (const auto& s : opt.slots()) {
    o.m.emplace_back(s.m.begin(), s.m.end());
    o.v.emplace_back(s.v.begin(), s.v.end());
  }
  return o;
}

template <class T>
void restore_optimizer(const OptimizerRecord& o, Adam<T>& opt) {
  auto& slots = opt.slots();
  if (o.m.size() != slots.size()) throw CorruptFileError("checkpoint: optimizer state has wrong parameter count");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (o.m[i].size() != slots[i].m.size() || o.v[i].size() != slots[i].v.size()) {
      throw CorruptFileError("checkpoint: optimizer slot size mismatch");
    }
    std::copy(o.m[i].begin(), o.m[i].end(), slots[i].m.begin());
    std::copy(o.v[i].begin(), o.v[i].end(), slots[i].v.begin());
  }
  opt.set_step_count(o.step);
}

/// Builds a float model from a checkpoint's stored config and weights.
inline RetinexModel<float> model_from_checkpoint(const Checkpoint& c) {
  RetinexModel<float> m(c.model);
  restore_params(c, m.parameters());
  return m;
}

}  // namespace retinev
