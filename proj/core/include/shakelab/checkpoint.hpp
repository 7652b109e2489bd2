#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shakelab/data.hpp"
#include "shakelab/model.hpp"
#include "shakelab/train.hpp"

namespace shakelab {

// File layout (all integers little-endian):
//
//   magic      8 bytes  "SHKCKPT\0"
//   version    u32      kCheckpointVersion
//   meta_len   u64      length of the metadata JSON that follows
//   meta       bytes    {"config": ..., "next_epoch", "step", "shake_counter", ...}
//   count      u64      number of tensors
//   tensor*    name_len u32, name bytes, dtype u8 (0 = f32, 1 = f64),
//              rank u32, dims u64[rank], raw values
//   checksum   u64      FNV-1a of every preceding byte
//
// Tensor names are "param/<name>", "buffer/<name>" and "velocity/<name>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct CheckpointTensor {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<double> values;  // widened on read
};

struct CheckpointMeta {
  std::string config_json;  // resolved run configuration
  TrainProgress progress;
  std::string model_dtype = "single";
  // Input normalization of the training run; empty when inputs are raw.
  DatasetStats stats;
  // Records of the epochs already run.
  std::vector<EpochRecord> history;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(std::string_view name) const;
};

// Writes to a temporary sibling and renames it into place.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const SgdOptimizer<T>* optimizer, const CheckpointMeta& meta);

// Parses and validates the whole file; throws FormatError on any defect
// (bad magic, unknown version, truncation, checksum mismatch).
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies parameters, buffers and (when given) momentum into the model. All
// names and shapes are checked before anything is modified; on mismatch a
// FormatError is thrown and the model is left untouched.
template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, Model<T>& model, SgdOptimizer<T>* optimizer);

}  // namespace shakelab
