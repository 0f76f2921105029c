#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfa/cascade.hpp"

namespace cfa {

/// Checkpoint layout (all integers and floats little-endian):
///   8 bytes   magic "CFACKPT1"
///   u32       manifest length, then that many bytes of JSON manifest
///   u32       tensor count
///   per tensor: u32 name length, name bytes, 4 x i32 shape (n, c, h, w),
///               float64 values
/// The manifest records the stage count, per-stage config hashes, the full
/// stage configs, fusion window and mode, and the parent checkpoint hash for
/// grown models.
struct CheckpointManifest {
  int num_stages = 0;
  std::string config_hash;
  std::vector<std::string> stage_config_hashes;
  int fusion_window = 1;
  std::string fusion_mode;
  std::optional<std::string> parent_hash;
  std::uint64_t seed = 0;
};

void save_checkpoint(Cascade& model, const std::filesystem::path& path,
                     std::optional<std::string> parent_hash = {});
Cascade load_checkpoint(const std::filesystem::path& path);
CheckpointManifest read_manifest(const std::filesystem::path& path);

}  // namespace cfa
