#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deiqt/model.hpp"
#include "deiqt/training.hpp"

namespace deiqt {

/// On-disk layout, all integers little-endian:
///   "DEIQ" | u32 version | u32 len + model config text | u64 step |
///   u32 count | count x (u32 len + name | u8 dtype | u32 rank | rank x u64 dim | raw elements)
/// dtype 1 = float32, 2 = float64. Optimizer moments are stored as extra
/// records named `adam.m.<param>` and `adam.v.<param>`.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Precision dtype = Precision::kFloat32;
  Shape shape;
  std::vector<unsigned char> bytes;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::uint64_t step = 0;
  std::vector<TensorRecord> tensors;

  ModelConfig model_config() const;
  const TensorRecord* find(const std::string& name) const;
  bool has_optimizer() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws CheckpointError with distinct messages for a bad magic, an
/// unsupported version and a truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint make_checkpoint(const DeiqtModel<T>& model, std::uint64_t step, const OptimizerState<T>* optimizer = nullptr);

/// Copies every parameter of `model` from the checkpoint. With
/// `encoder_only`, only `embed.*` and `encoder.*` tensors are read and
/// other records are ignored. Throws CheckpointError naming the tensor on
/// a missing record or shape mismatch; the model is untouched on error.
template <typename T>
void load_parameters(DeiqtModel<T>& model, const Checkpoint& checkpoint, bool encoder_only = false);

/// Builds a model from the stored config and parameters.
template <typename T>
DeiqtModel<T> restore_model(const Checkpoint& checkpoint);

/// Throws CheckpointError when `expected` differs from the stored config.
void check_config(const Checkpoint& checkpoint, const ModelConfig& expected);

template <typename T>
OptimizerState<T> restore_optimizer(const Checkpoint& checkpoint, const DeiqtModel<T>& model, const TrainConfig& cfg);

}  // namespace deiqt
