#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dmmg/tensor.hpp"

namespace dmmg {

/// Checkpoint container: "DMCK" magic, u32 version, u64 manifest length, a
/// JSON manifest (config snapshot, step count, parameter names and shapes,
/// blob SHA-256), then every parameter's f32 data little-endian in manifest
/// order.
struct CheckpointData {
  nlohmann::json config;
  std::int64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const nlohmann::json& config, std::int64_t step,
                     const std::vector<std::pair<std::string, Tensor>>& params);

/// Reads and verifies a checkpoint; any structural damage or hash mismatch
/// raises a format error naming the offset or digest.
CheckpointData load_checkpoint(const std::string& path);

}  // namespace dmmg
