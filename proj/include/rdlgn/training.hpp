#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rdlgn/data.hpp"
#include "rdlgn/matrix.hpp"
#include "rdlgn/model.hpp"

namespace rdlgn {

/// Auxiliary loss with a linear weight ramp between two training steps.
struct AuxTerm {
  std::string loss_id = "embedding_binary";
  std::int64_t ramp_start = 1000;
  std::int64_t ramp_end = 100000;
  double w_max = 0.1;
};

struct LossConfig {
  double label_smoothing = 0.1;
  std::vector<AuxTerm> aux_terms = {AuxTerm{}};

  void validate() const;
};

/// 0 up to ramp_start, w_max from ramp_end on, linear in between.
double aux_weight(std::int64_t step, const AuxTerm& term);

struct LossResult {
  double loss = 0.0;                 // mean over non-pad positions
  std::size_t tokens = 0;            // non-pad positions
  std::vector<Matrix> grad_scores;   // dloss/dscores per step, V x lanes
};

/// Label-smoothed cross-entropy, targets (1 - a) * onehot + a / V, averaged
/// over non-pad target positions; log is floored at 1e-12.
LossResult smoothed_cross_entropy(const std::vector<Matrix>& step_probs, const TokenRows& targets, double alpha);

struct AdamWConfig {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;
};

/// AdamW with bias correction and decoupled weight decay applied to every tensor.
class AdamW {
 public:
  AdamW(const AdamWConfig& cfg, const std::vector<std::size_t>& shapes);

  /// Throws (and leaves params untouched) when any gradient is non-finite.
  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::int64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  // Raw state for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  double lr_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct PlateauConfig {
  double gamma = 0.8;
  std::int64_t patience = 10000;  // in training steps
  double min_delta = 1e-4;

  void validate() const;
};

/// Reduce-on-plateau: multiply lr by gamma once the monitored loss has not
/// improved by more than min_delta for `patience` steps.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const PlateauConfig& cfg);

  /// `steps` is how many training steps elapsed since the previous call.
  double update(double validation_loss, double current_lr, std::int64_t steps = 1);

  double best() const { return best_; }
  std::int64_t since_improvement() const { return since_improve_; }
  void restore(double best, std::int64_t since_improve) {
    best_ = best;
    since_improve_ = since_improve;
  }

 private:
  PlateauConfig cfg_;
  double best_;
  std::int64_t since_improve_ = 0;
};

struct GroupGradStats {
  std::string name;
  double mean = 0.0;
  double stddev = 0.0;
  double ratio = 0.0;  // stddev / mean
};

/// Mean, population std and their ratio of |grad| over the logits of each
/// group (first five entries, N K L P M) followed by one entry per layer
/// ("N0", "N1", ...).
std::vector<GroupGradStats> gradient_stats(const Gradients& grads);
GroupGradStats abs_stats(std::string name, const std::vector<std::span<const double>>& tensors);

struct TrainLoopConfig {
  std::int64_t steps = 1000;
  std::int64_t eval_every = 500;
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  std::int64_t gradstats_every = 0;   // 0: only at the end
  std::size_t batch_tokens = 1024;
  std::size_t eval_lanes = 256;
};

struct Dataset {
  std::vector<PreparedPair> train;
  std::vector<PreparedPair> val;
};

struct EvalMetrics {
  double loss = 0.0;      // label-smoothed CE
  double accuracy = 0.0;  // teacher-forced, non-pad positions
  double perplexity = 0.0;
  std::size_t tokens = 0;
};

/// Teacher-forced evaluation in soft mode. Hidden-state noise is drawn from
/// a stream seeded with `noise_seed` so repeated calls agree.
EvalMetrics evaluate_soft(const Seq2SeqModel& model, const std::vector<PreparedPair>& pairs, double alpha,
                          std::uint64_t noise_seed, std::size_t lanes_per_batch = 256);

/// One row of the metric log.
struct MetricRow {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double aux_w = 0.0;
  double acc = 0.0;
  double ppl = 0.0;
};

std::string metric_csv_header();
std::string to_csv(const MetricRow& row);

/// Mutable state carried across steps (and across resumes).
struct TrainState {
  std::int64_t step = 0;
  AdamW optimizer;
  PlateauScheduler scheduler;
  Rng data_rng, hidden_rng, dropout_rng, gumbel_rng;
  std::int64_t last_eval_step = 0;
  std::vector<TokenBatch> epoch;
  std::size_t epoch_pos = 0;

  TrainState(Seq2SeqModel& model, const AdamWConfig& opt, const PlateauConfig& sched);
};

/// Callbacks for the side effects of the loop; any may be empty.
struct TrainSinks {
  std::function<void(const MetricRow&)> metrics;
  std::function<void(std::int64_t step, const std::vector<GroupGradStats>&)> gradstats;
  std::function<void(const Seq2SeqModel&, const TrainState&)> checkpoint;
  std::function<void(const std::string& diagnostic)> nan_dump;
};

struct StepReport {
  double loss = 0.0;       // main + weighted aux
  double main_loss = 0.0;
  double emb_reg = 0.0;
  double aux_w = 0.0;
  double accuracy = 0.0;   // teacher-forced accuracy on the batch
};

/// One optimizer step on the given batch. Throws on a non-finite loss.
StepReport train_step(Seq2SeqModel& model, TrainState& state, const BatchRows& batch, const LossConfig& loss_cfg,
                      Gradients* grads_out = nullptr);

/// Runs `cfg.steps` steps from state.step, evaluating every eval_every steps.
void train_loop(Seq2SeqModel& model, TrainState& state, const Dataset& data, const LossConfig& loss_cfg,
                const TrainLoopConfig& cfg, const TrainSinks& sinks);

}  // namespace rdlgn
