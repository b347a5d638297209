// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints. Layout, little-endian:
//
//   u32 magic 0x4b434444 ("DDCK"), u32 version
//   string config JSON, string phase, u64 epoch, string meta JSON
//   u64 tensor count; per tensor: string name, u64 rank, u64 dims, f64 data
//   u64 velocity count; per buffer: u64 length, f64 data
//
// Strings are a u64 byte length followed by the bytes. Encoding a decoded
// checkpoint reproduces the input bytes exactly.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "dd/model.hpp"
#include "dd/optim.hpp"

namespace dd {

inline constexpr std::uint32_t kCheckpointMagic = 0x4b434444u;
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string config_json;  // canonical config text
  std::string phase;        // "teacher" or "distill"
  std::uint64_t epoch = 0;  // completed epochs
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;
  std::vector<std::vector<double>> velocity;  // optimizer momentum buffers
};

// Snapshot of every parameter (theta, phi, psi) and the optimizer state.
Checkpoint capture_checkpoint(const DistilledNetwork& net, const Sgd* optimizer,
                              const std::string& config_json, const std::string& phase,
                              std::uint64_t epoch);

// Copies parameters and, when given, momentum buffers back. Throws
// FormatError when names, shapes or buffer sizes disagree.
void restore_checkpoint(const Checkpoint& ck, DistilledNetwork& net, Sgd* optimizer);

std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);  // throws FormatError

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dd
