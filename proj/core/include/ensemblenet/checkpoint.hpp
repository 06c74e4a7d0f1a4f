#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ensemblenet/tensor.hpp"

namespace enet {

class Model;

enum class EntryKind : std::uint8_t { kParameter = 0, kBuffer = 1 };

struct CheckpointEntry {
  std::string name;
  EntryKind kind = EntryKind::kParameter;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

/// Self-describing name -> tensor map with an opaque JSON metadata string.
///
/// File layout (little-endian): "ENSC", u32 version, u32 metadata length,
/// metadata bytes, u32 entry count, then per entry: u16 name length, name,
/// u8 kind, u32 ndim, u64 dims[ndim], f64 values.
class Checkpoint {
 public:
  std::string metadata;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Snapshot every parameter and buffer plus the model config.
Checkpoint make_checkpoint(Model& model);

/// Overwrite parameters and buffers from `ckpt`. Every missing, unexpected,
/// or mis-shaped entry is reported in one LoadError.
void apply_checkpoint(Model& model, const Checkpoint& ckpt);

/// Build a model from the config stored in the checkpoint and load it.
Model load_model(const std::filesystem::path& path);

}  // namespace enet
