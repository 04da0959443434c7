#include "rdlgn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rdlgn/error.hpp"

namespace rdlgn {
namespace {

constexpr double kLogFloor = 1e-12;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void LossConfig::validate() const {
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("loss.label_smoothing must lie in [0, 1)");
  for (const auto& t : aux_terms) {
    if (t.loss_id != "embedding_binary") throw ConfigError("loss.aux_terms: unknown loss '" + t.loss_id + "'");
    if (t.ramp_start < 0 || t.ramp_start >= t.ramp_end)
      throw ConfigError("loss.aux_terms: need 0 <= ramp_start < ramp_end");
    if (!(t.w_max >= 0.0)) throw ConfigError("loss.aux_terms: w_max must be >= 0");
  }
}

double aux_weight(std::int64_t step, const AuxTerm& term) {
  if (step <= term.ramp_start) return 0.0;
  if (step >= term.ramp_end) return term.w_max;
  return term.w_max * static_cast<double>(step - term.ramp_start) /
         static_cast<double>(term.ramp_end - term.ramp_start);
}

LossResult smoothed_cross_entropy(const std::vector<Matrix>& step_probs, const TokenRows& targets, double alpha) {
  if (targets.empty() || step_probs.empty()) throw DataError("cross-entropy: empty batch");
  const std::size_t V = step_probs.front().rows();
  const std::size_t lanes = targets.size();
  const double off = alpha / static_cast<double>(V);
  const double on = 1.0 - alpha + off;
  LossResult res;
  for (const auto& row : targets) {
    if (row.size() != step_probs.size()) throw ShapeError("cross-entropy: target length mismatch");
    for (TokenId y : row) res.tokens += y != kPad ? 1 : 0;
  }
  if (res.tokens == 0) throw DataError("cross-entropy: batch has only padding targets");
  const double scale = 1.0 / static_cast<double>(res.tokens);
  for (std::size_t t = 0; t < step_probs.size(); ++t) {
    const Matrix& p = step_probs[t];
    if (p.cols() != lanes || p.rows() != V) throw ShapeError("cross-entropy: probability shape mismatch");
    Matrix grad(V, lanes);
    for (std::size_t lane = 0; lane < lanes; ++lane) {
      const TokenId y = targets[lane][t];
      if (y == kPad) continue;
      // L = -sum_j q_j log max(p_j, floor); dL/ds_j = p_j * (sum of q over unfloored) - q_j [unfloored].
      double unfloored_mass = 0.0;
      for (std::size_t j = 0; j < V; ++j) {
        const double q = j == y ? on : off;
        const double pj = p(j, lane);
        if (pj >= kLogFloor) {
          res.loss -= q * std::log(pj) * scale;
          unfloored_mass += q;
        } else {
          res.loss -= q * std::log(kLogFloor) * scale;
        }
      }
      for (std::size_t j = 0; j < V; ++j) {
        const double q = j == y ? on : off;
        const double pj = p(j, lane);
        grad(j, lane) = scale * (pj * unfloored_mass - (pj >= kLogFloor ? q : 0.0));
      }
    }
    res.grad_scores.push_back(std::move(grad));
  }
  return res;
}

AdamW::AdamW(const AdamWConfig& cfg, const std::vector<std::size_t>& shapes) : cfg_(cfg), lr_(cfg.lr) {
  if (!(cfg.lr > 0.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) ||
      !(cfg.eps > 0.0) || !(cfg.weight_decay >= 0.0))
    throw ConfigError("optimizer: need lr > 0, betas in [0, 1), eps > 0, weight_decay >= 0");
  for (std::size_t n : shapes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void AdamW::step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("optimizer: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != m_[i].size() || grads[i].size() != m_[i].size())
      throw ShapeError("optimizer: tensor shape mismatch");
    if (!all_finite(grads[i])) throw Error("optimizer: non-finite gradient in tensor " + std::to_string(i));
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr_ * cfg_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* __restrict p = params[i].data();
    const double* __restrict g = grads[i].data();
    double* __restrict m = m_[i].data();
    double* __restrict v = v_[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] = p[k] * decay - lr_ * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void PlateauConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("scheduler.gamma must lie in (0, 1)");
  if (patience <= 0) throw ConfigError("scheduler.patience must be > 0");
  if (!(min_delta >= 0.0)) throw ConfigError("scheduler.min_delta must be >= 0");
}

PlateauScheduler::PlateauScheduler(const PlateauConfig& cfg)
    : cfg_(cfg), best_(std::numeric_limits<double>::infinity()) {
  cfg_.validate();
}

double PlateauScheduler::update(double validation_loss, double current_lr, std::int64_t steps) {
  if (!std::isfinite(validation_loss)) throw Error("plateau scheduler: non-finite validation loss");
  if (validation_loss < best_ - cfg_.min_delta) {
    best_ = validation_loss;
    since_improve_ = 0;
    return current_lr;
  }
  since_improve_ += steps;
  if (since_improve_ >= cfg_.patience) {
    since_improve_ = 0;
    return current_lr * cfg_.gamma;
  }
  return current_lr;
}

GroupGradStats abs_stats(std::string name, const std::vector<std::span<const double>>& tensors) {
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& t : tensors) {
    n += t.size();
    for (double g : t) sum += std::abs(g);
  }
  if (n == 0) throw Error("gradient stats: group '" + name + "' is empty");
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& t : tensors)
    for (double g : t) sq += (std::abs(g) - mean) * (std::abs(g) - mean);
  GroupGradStats s;
  s.name = std::move(name);
  s.mean = mean;
  s.stddev = std::sqrt(sq / static_cast<double>(n));
  s.ratio = mean > 0.0 ? s.stddev / mean : 0.0;
  return s;
}

std::vector<GroupGradStats> gradient_stats(const Gradients& grads) {
  std::vector<GroupGradStats> out;
  for (Group g : kAllGroups) {
    std::vector<std::span<const double>> tensors;
    for (const auto& l : grads.logits[static_cast<int>(g)]) tensors.emplace_back(l);
    out.push_back(abs_stats(std::string(group_name(g)), tensors));
  }
  for (Group g : kAllGroups) {
    const auto& layers = grads.logits[static_cast<int>(g)];
    for (std::size_t i = 0; i < layers.size(); ++i)
      out.push_back(abs_stats(std::string(group_name(g)) + std::to_string(i), {std::span<const double>(layers[i])}));
  }
  return out;
}

EvalMetrics evaluate_soft(const Seq2SeqModel& model, const std::vector<PreparedPair>& pairs, double alpha,
                          std::uint64_t noise_seed, std::size_t lanes_per_batch) {
  if (pairs.empty()) throw DataError("evaluation set is empty");
  Rng noise(noise_seed);
  ForwardOptions opts;
  opts.hidden_rng = &noise;
  EvalMetrics m;
  double loss_sum = 0.0, nll_sum = 0.0, hits = 0.0;
  for (std::size_t begin = 0; begin < pairs.size(); begin += lanes_per_batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < std::min(pairs.size(), begin + lanes_per_batch); ++i) idx.push_back(i);
    BatchRows rows = gather(pairs, idx);
    std::size_t tokens = 0;
    for (const auto& r : rows.tgt_out)
      for (TokenId y : r) tokens += y != kPad ? 1 : 0;
    if (tokens == 0) continue;
    ForwardResult fr = model.forward(rows.src, rows.tgt_in, opts);
    LossResult lr = smoothed_cross_entropy(fr.probs, rows.tgt_out, alpha);
    loss_sum += lr.loss * static_cast<double>(tokens);
    nll_sum += std::log(perplexity(fr.probs, rows.tgt_out)) * static_cast<double>(tokens);
    hits += token_accuracy(argmax_predictions(fr.probs), rows.tgt_out) * static_cast<double>(tokens);
    m.tokens += tokens;
  }
  if (m.tokens == 0) throw DataError("evaluation set has no non-pad targets");
  const double n = static_cast<double>(m.tokens);
  m.loss = loss_sum / n;
  m.accuracy = hits / n;
  m.perplexity = std::exp(nll_sum / n);
  return m;
}

std::string metric_csv_header() { return "step,train_loss,val_loss,lr,aux_w,acc,ppl"; }

std::string to_csv(const MetricRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.step << ',' << r.train_loss << ',' << r.val_loss << ',' << r.lr << ',' << r.aux_w << ',' << r.acc << ','
     << r.ppl;
  return os.str();
}

namespace {
std::vector<std::size_t> tensor_sizes(Seq2SeqModel& model) {
  std::vector<std::size_t> sizes;
  for (const auto& t : model.zero_gradients().tensors()) sizes.push_back(t.size());
  return sizes;
}
}  // namespace

TrainState::TrainState(Seq2SeqModel& model, const AdamWConfig& opt, const PlateauConfig& sched)
    : optimizer(opt, tensor_sizes(model)),
      scheduler(sched),
      data_rng(model.config().seeds.data),
      hidden_rng(model.config().seeds.hidden_noise),
      dropout_rng(model.config().seeds.dropout),
      gumbel_rng(model.config().seeds.gumbel) {}

StepReport train_step(Seq2SeqModel& model, TrainState& state, const BatchRows& batch, const LossConfig& loss_cfg,
                      Gradients* grads_out) {
  ForwardOptions opts;
  opts.train = true;
  opts.hidden_rng = &state.hidden_rng;
  opts.dropout_rng = &state.dropout_rng;
  opts.gumbel_rng = &state.gumbel_rng;
  ForwardResult fr = model.forward(batch.src, batch.tgt_in, opts);
  LossResult lr = smoothed_cross_entropy(fr.probs, batch.tgt_out, loss_cfg.label_smoothing);
  StepReport rep;
  for (const auto& term : loss_cfg.aux_terms) rep.aux_w += aux_weight(state.step, term);
  rep.main_loss = lr.loss;
  rep.emb_reg = fr.emb_reg;
  rep.loss = lr.loss + rep.aux_w * fr.emb_reg;
  if (!std::isfinite(rep.loss)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step << ": main=" << lr.loss << " emb_reg=" << fr.emb_reg
       << " aux_w=" << rep.aux_w << " lr=" << state.optimizer.lr();
    throw Error(os.str());
  }
  rep.accuracy = token_accuracy(argmax_predictions(fr.probs), batch.tgt_out);
  Gradients grads = model.backward(fr.tape, lr.grad_scores, rep.aux_w);
  const auto gt = grads.tensors();
  state.optimizer.step(model.parameters(), {gt.begin(), gt.end()});
  ++state.step;
  if (grads_out) *grads_out = std::move(grads);
  return rep;
}

void train_loop(Seq2SeqModel& model, TrainState& state, const Dataset& data, const LossConfig& loss_cfg,
                const TrainLoopConfig& cfg, const TrainSinks& sinks) {
  loss_cfg.validate();
  if (data.train.empty() && cfg.steps > 0) throw DataError("training set is empty");
  if (cfg.eval_every <= 0) throw ConfigError("train.eval_every must be > 0");
  double loss_acc = 0.0;
  std::int64_t loss_n = 0;
  Gradients last_grads;
  bool have_grads = false;
  const std::int64_t target = state.step + cfg.steps;
  while (state.step < target) {
    if (state.epoch_pos >= state.epoch.size()) {
      state.epoch = batch_by_tokens(data.train, cfg.batch_tokens, &state.data_rng);
      state.epoch_pos = 0;
    }
    BatchRows batch = gather(data.train, state.epoch[state.epoch_pos++].pairs);
    const bool want_stats = cfg.gradstats_every > 0 && (state.step + 1) % cfg.gradstats_every == 0;
    StepReport rep;
    try {
      rep = train_step(model, state, batch, loss_cfg, &last_grads);
      have_grads = true;
    } catch (const Error& e) {
      if (sinks.nan_dump) sinks.nan_dump(e.what());
      throw;
    }
    loss_acc += rep.loss;
    ++loss_n;
    if (want_stats && sinks.gradstats) sinks.gradstats(state.step, gradient_stats(last_grads));

    if (state.step % cfg.eval_every == 0 || state.step == target) {
      MetricRow row;
      row.step = state.step;
      row.train_loss = loss_acc / static_cast<double>(std::max<std::int64_t>(loss_n, 1));
      row.aux_w = rep.aux_w;
      if (!data.val.empty()) {
        EvalMetrics em = evaluate_soft(model, data.val, loss_cfg.label_smoothing,
                                       derive_seed(model.config().seeds.hidden_noise, 0xE7A1), cfg.eval_lanes);
        row.val_loss = em.loss;
        row.acc = em.accuracy;
        row.ppl = em.perplexity;
        const double new_lr =
            state.scheduler.update(em.loss, state.optimizer.lr(), state.step - state.last_eval_step);
        state.optimizer.set_lr(new_lr);
      }
      state.last_eval_step = state.step;
      row.lr = state.optimizer.lr();
      if (sinks.metrics) sinks.metrics(row);
      loss_acc = 0.0;
      loss_n = 0;
    }
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step != target &&
        sinks.checkpoint)
      sinks.checkpoint(model, state);
  }
  if (have_grads && cfg.gradstats_every == 0 && sinks.gradstats) sinks.gradstats(state.step, gradient_stats(last_grads));
  if (sinks.checkpoint) sinks.checkpoint(model, state);
}

}  // namespace rdlgn
