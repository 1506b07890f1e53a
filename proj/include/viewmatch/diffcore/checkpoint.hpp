// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "viewmatch/diffcore/tape.hpp"

namespace viewmatch::diffcore {

// Checkpoint container, all integers little-endian:
//
//   bytes 0..3   magic "VMCK"
//   byte  4      format version (1)
//   bytes 5..7   reserved, zero
//   u64          training step counter
//   u32 + bytes  config echo (UTF-8 JSON)
//   u32          number of arrays
//   per array:   u16 + bytes name, u8 rank, rank x u64 dims,
//                numel x IEEE-754 binary32 values
struct Checkpoint {
  ParameterSet<float> params;
  std::string config_json;
  std::uint64_t step = 0;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace viewmatch::diffcore
