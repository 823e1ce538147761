#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bcr/nn/tensor.hpp"
#include "json.hpp"

namespace bcr::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr int kCheckpointFormatVersion = 1;

// A checkpoint is a directory holding
//   weights.bin    "BCRCKPT1" magic, u32 version, u32 count, then per record:
//                  u32 name length, name bytes, u32 rank, u32 dims[rank],
//                  f32 data (all integers and floats little-endian)
//   manifest.json  caller metadata plus "format_version"
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& params,
                     nlohmann::json manifest);

struct LoadedCheckpoint {
  std::vector<NamedTensor> params;
  nlohmann::json manifest;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace bcr::nn
