#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfs/tensor.hpp"

namespace nfs {

// "NFS1" tensor container: magic bytes, a 4-byte little-endian header
// length, a UTF-8 JSON header listing (name, shape, byte offset) per tensor
// plus free-form metadata, then the concatenated little-endian float64 data.

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<CheckpointEntry>& entries,
                     const nlohmann::json& meta);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nfs
