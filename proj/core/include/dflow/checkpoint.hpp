// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dflow/models.hpp"
#include "dflow/params.hpp"

namespace dflow {

// Binary layout (little-endian):
//   "DFLW" u32 version
//   u32 n_meta, n_meta x (u32 len, key bytes, u32 len, value bytes)
//   u32 n_records, n_records x record
//   record: u32 len, name bytes, u8 dtype (0 = f32), u8 flags (bit 0 =
//           trainable), u32 ndim, ndim x u64 extent, f32 data
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Metadata = std::map<std::string, std::string>;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, version_mismatch, truncated, inconsistent_record, io };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};
const char* to_string(CheckpointError::Kind k);

struct Checkpoint {
  Metadata meta;
  ParamStore params;
};

std::vector<char> serialize_checkpoint(const ParamStore& store, const Metadata& meta);
Checkpoint parse_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const ParamStore& store, const Metadata& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model checkpoints carry their configuration in the metadata block.
void save_velocity_model(const VelocityModel& model, Metadata extra, const std::filesystem::path& path);
VelocityModel load_velocity_model(const std::filesystem::path& path, Metadata* meta = nullptr);
void save_classifier(const Classifier& f, Metadata extra, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path, Metadata* meta = nullptr);

}  // namespace dflow
