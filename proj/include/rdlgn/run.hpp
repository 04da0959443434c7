#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rdlgn/collapsed.hpp"
#include "rdlgn/config.hpp"
#include "rdlgn/data.hpp"
#include "rdlgn/training.hpp"

namespace rdlgn {

struct PreparedData {
  Vocab vocab;
  Dataset data;
};

/// Synthetic streams for copy/shift, corpus files for parallel. A missing
/// file raises DataError naming the path.
PreparedData build_dataset(const RunConfig& cfg);

/// Shift-task pair under the configured decoder input.
PreparedPair make_task_pair(std::span<const TokenId> tokens, std::size_t shift, DataConfig::DecoderInput input);

struct TrainOutcome {
  Seq2SeqModel model;
  std::optional<MetricRow> last_row;
  std::int64_t steps_done = 0;
};

/// Files written under the output directory.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path checkpoint() const { return dir / "model.rdlg"; }
  std::filesystem::path train_state() const { return dir / "train_state.bin"; }
  std::filesystem::path metrics() const { return dir / "metrics.csv"; }
  std::filesystem::path gradstats() const { return dir / "gradstats.csv"; }
  std::filesystem::path vocab() const { return dir / "vocab.txt"; }
  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path nan_dump() const { return dir / "nan_dump.txt"; }
};

/// Trains for cfg.train.steps steps, resuming from `paths` when a checkpoint
/// and train state exist there. Progress lines go to `log` when non-null.
TrainOutcome run_training(const RunConfig& cfg, const PreparedData& prepared, const RunPaths& paths, std::ostream* log);

/// Same, without touching the filesystem.
TrainOutcome train_in_memory(const RunConfig& cfg, const PreparedData& prepared, std::ostream* log = nullptr);

struct EvalReport {
  std::string mode;           // "soft" or "hard"
  double accuracy = 0.0;      // teacher-forced, non-pad targets
  double bleu = 0.0;          // greedy decoding vs targets
  std::optional<double> perplexity;  // soft mode only
  std::size_t tokens = 0;
};

EvalReport evaluate_soft_report(const Seq2SeqModel& model, const std::vector<PreparedPair>& pairs, double alpha,
                                std::size_t lanes = 256);
EvalReport evaluate_hard_report(const CollapsedModel& model, const std::vector<PreparedPair>& pairs,
                                std::size_t lanes = 256);
std::string format_report(const EvalReport& r);

struct ShiftPoint {
  std::size_t shift = 0;
  double accuracy = 0.0;
};

/// Trains one fresh model per shift on the configured synthetic stream and
/// reports held-out teacher-forced accuracy.
std::vector<ShiftPoint> shift_bench(const RunConfig& cfg, const std::vector<std::size_t>& shifts, std::ostream* log);

struct GradcheckGroup {
  std::string name;  // "emb", "N", ... "M"
  double worst_rel = 0.0;
  std::size_t worst_index = 0;  // within the group's flattened tensors
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double max_rel = 0.0;
  double closed_form_max_abs = 0.0;  // per-neuron logit gradient vs p_i (f_i - y)
  std::size_t params = 0;
  double h = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  double h = 1e-5;
  double rel_tol = 1e-4;
  double rel_floor = 1e-5;  // denominators below this count as this
  double emb_reg_weight = 0.1;
  std::size_t lanes = 3;
  std::uint64_t data_seed = 11;
  /// Applied to the analytic gradients before comparison (negative controls).
  std::function<void(Gradients&)> tamper;
};

/// V=8, d=8, S=3, k=4, widths <= 32.
ModelConfig tiny_gradcheck_config();

/// Central differences over every parameter of a tiny model.
GradcheckReport gradcheck(const ModelConfig& cfg, const GradcheckOptions& opts = {});
std::string format_gradcheck(const GradcheckReport& r);

}  // namespace rdlgn
