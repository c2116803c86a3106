// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/checkpoint.hpp"

#include <algorithm>

#include "binio.hpp"

namespace dflow {

namespace {
constexpr char kMagic[4] = {'D', 'F', 'L', 'W'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kFlagTrainable = 1;
}  // namespace

const char* to_string(CheckpointError::Kind k) {
  switch (k) {
    case CheckpointError::Kind::bad_magic: return "bad_magic";
    case CheckpointError::Kind::version_mismatch: return "version_mismatch";
    case CheckpointError::Kind::truncated: return "truncated";
    case CheckpointError::Kind::inconsistent_record: return "inconsistent_record";
    case CheckpointError::Kind::io: return "io";
  }
  return "?";
}

std::vector<char> serialize_checkpoint(const ParamStore& store, const Metadata& meta) {
  binio::Writer w;
  w.put_bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put(static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, p] : store.items()) {
    w.put_string(name);
    w.put(kDtypeF32);
    w.put(static_cast<std::uint8_t>(p.trainable ? kFlagTrainable : 0));
    w.put(static_cast<std::uint32_t>(p.value.ndim()));
    for (std::size_t e : p.value.shape()) w.put(static_cast<std::uint64_t>(e));
    for (float f : p.value.data()) w.put_f32(f);
  }
  return w.bytes();
}

Checkpoint parse_checkpoint(const std::vector<char>& bytes) {
  using K = CheckpointError::Kind;
  binio::Reader r(bytes);
  Checkpoint ck;
  try {
    char magic[4];
    r.get_bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) throw CheckpointError(K::bad_magic, "not a checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(K::version_mismatch, "unsupported checkpoint version " + std::to_string(version));
    }
    const auto n_meta = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      std::string k = r.get_string();
      std::string v = r.get_string();
      if (!ck.meta.emplace(std::move(k), std::move(v)).second) {
        throw CheckpointError(K::inconsistent_record, "duplicate metadata key");
      }
    }
    const auto n_rec = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_rec; ++i) {
      std::string name = r.get_string();
      const auto dtype = r.get<std::uint8_t>();
      const auto flags = r.get<std::uint8_t>();
      if (dtype != kDtypeF32) throw CheckpointError(K::inconsistent_record, "unknown dtype in " + name);
      if (flags & ~kFlagTrainable) throw CheckpointError(K::inconsistent_record, "unknown flags in " + name);
      const auto ndim = r.get<std::uint32_t>();
      if (ndim > 8) throw CheckpointError(K::inconsistent_record, "implausible rank in " + name);
      Shape shape;
      std::uint64_t count = 1;
      for (std::uint32_t k = 0; k < ndim; ++k) {
        const auto e = r.get<std::uint64_t>();
        if (e == 0 || e > (std::uint64_t{1} << 32)) {
          throw CheckpointError(K::inconsistent_record, "bad extent in " + name);
        }
        count *= e;
        shape.push_back(static_cast<std::size_t>(e));
      }
      if (count * 4 > r.remaining()) throw binio::Truncated();
      std::vector<float> data(count);
      for (float& f : data) f = r.get_f32();
      try {
        ck.params.add(name, Tensor(std::move(shape), std::move(data)), (flags & kFlagTrainable) != 0);
      } catch (const std::exception& e) {
        throw CheckpointError(K::inconsistent_record, "record " + name + ": " + e.what());
      }
    }
    if (r.remaining() != 0) throw CheckpointError(K::inconsistent_record, "trailing bytes after last record");
  } catch (const binio::Truncated&) {
    throw CheckpointError(K::truncated, "checkpoint truncated");
  }
  return ck;
}

void save_checkpoint(const ParamStore& store, const Metadata& meta, const std::filesystem::path& path) {
  try {
    binio::write_file(path, serialize_checkpoint(store, meta));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw CheckpointError(CheckpointError::Kind::io, e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<char> bytes;
  try {
    bytes = binio::read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(CheckpointError::Kind::io, e.what());
  }
  return parse_checkpoint(bytes);
}

void save_velocity_model(const VelocityModel& model, Metadata extra, const std::filesystem::path& path) {
  for (auto& [k, v] : model.config().to_meta()) extra[k] = v;
  extra["model.kind"] = "velocity";
  save_checkpoint(model.params(), extra, path);
}

VelocityModel load_velocity_model(const std::filesystem::path& path, Metadata* meta) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta.count("model.kind") == 0 || ck.meta.at("model.kind") != "velocity") {
    throw CheckpointError(CheckpointError::Kind::inconsistent_record, path.string() + " is not a velocity model");
  }
  VelocityModel m(VelocityConfig::from_meta(ck.meta), std::move(ck.params));
  if (meta) *meta = std::move(ck.meta);
  return m;
}

void save_classifier(const Classifier& f, Metadata extra, const std::filesystem::path& path) {
  for (auto& [k, v] : f.config().to_meta()) extra[k] = v;
  extra["model.kind"] = "classifier";
  save_checkpoint(f.params(), extra, path);
}

Classifier load_classifier(const std::filesystem::path& path, Metadata* meta) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta.count("model.kind") == 0 || ck.meta.at("model.kind") != "classifier") {
    throw CheckpointError(CheckpointError::Kind::inconsistent_record, path.string() + " is not a classifier");
  }
  Classifier f(ClassifierConfig::from_meta(ck.meta), std::move(ck.params));
  if (meta) *meta = std::move(ck.meta);
  return f;
}

}  // namespace dflow
