#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "rdlgn/model.hpp"
#include "rdlgn/training.hpp"

namespace rdlgn {

struct DataConfig {
  /// kCopy and kShift draw synthetic token streams; kParallel reads corpus files.
  enum class Task { kCopy, kShift, kParallel };
  /// What the decoder consumes at step t: the target shifted behind BOS, or
  /// the source stream itself (the shift-task "decoder" reading).
  enum class DecoderInput { kShiftedTarget, kSource };

  Task task = Task::kCopy;
  std::size_t shift = 0;
  DecoderInput decoder_input = DecoderInput::kShiftedTarget;
  std::size_t train_sequences = 32;
  std::size_t val_sequences = 0;  // 0: evaluate on the training set

  // Parallel corpora: either aligned src/tgt files or one tab-separated file.
  std::string train_src, train_tgt, train_tsv;
  std::string val_src, val_tgt, val_tsv;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  AdamWConfig optimizer;
  PlateauConfig scheduler;
  DataConfig data;
  TrainLoopConfig train;
  std::string output_dir = "runs/default";

  /// Every constraint, checked before anything is allocated.
  void validate() const;
};

/// Strict parse: unknown keys and wrong types raise ConfigError naming the field.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view json_text);

/// Apply a base seed to every stream (seeds.x = derive_seed(base, x)).
void override_seeds(ModelConfig& cfg, std::uint64_t base);

}  // namespace rdlgn
