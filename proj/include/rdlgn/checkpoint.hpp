#pragma once

#include <filesystem>
#include <string>

#include "rdlgn/collapsed.hpp"
#include "rdlgn/model.hpp"
#include "rdlgn/training.hpp"

namespace rdlgn {

// Container layout (all integers little-endian):
//   magic | u64 json length | json config | payload | u64 FNV-1a of everything before it
// Soft payload: embedding f64[V*d], then per layer in N K L P M order:
//   u64 in_dim, u64 width, u32 conn_a[width], u32 conn_b[width], f64 logits[width*16].
// Collapsed payload: embedding bits packed row-major LSB-first, then per layer:
//   u64 in_dim, u64 width, u8 gate[width], u32 conn_a[width], u32 conn_b[width].

inline constexpr std::string_view kSoftMagic = "RDLG1";
inline constexpr std::string_view kCollapsedMagic = "RDLGC1";

enum class CheckpointKind { kSoft, kCollapsed };

void save_model(const Seq2SeqModel& model, const std::filesystem::path& path);
Seq2SeqModel load_model(const std::filesystem::path& path);

void save_collapsed(const CollapsedModel& model, const std::filesystem::path& path);
CollapsedModel load_collapsed(const std::filesystem::path& path);

/// Reads the magic only. Throws DataError for unknown files.
CheckpointKind checkpoint_kind(const std::filesystem::path& path);

/// Optimizer moments, counters, scheduler and RNG streams for resuming.
void save_train_state(const TrainState& state, const std::filesystem::path& path);
/// `state` must have been built for the same model shapes.
void load_train_state(TrainState& state, const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace rdlgn
