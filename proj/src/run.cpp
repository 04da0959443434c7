#include "rdlgn/run.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rdlgn/checkpoint.hpp"
#include "rdlgn/error.hpp"

namespace rdlgn {
namespace {

struct Corpus {
  std::vector<std::vector<std::string>> src, tgt;
};

Corpus read_corpus(const std::string& src_path, const std::string& tgt_path, const std::string& tsv_path) {
  Corpus c;
  if (!tsv_path.empty()) {
    for (const auto& line : read_lines(tsv_path)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError(tsv_path + ": line without a tab separator");
      c.src.push_back(tokenize(std::string_view(line).substr(0, tab)));
      c.tgt.push_back(tokenize(std::string_view(line).substr(tab + 1)));
    }
    return c;
  }
  const auto s = read_lines(src_path);
  const auto t = read_lines(tgt_path);
  if (s.size() != t.size()) throw DataError(src_path + " and " + tgt_path + " have different line counts");
  for (std::size_t i = 0; i < s.size(); ++i) {
    c.src.push_back(tokenize(s[i]));
    c.tgt.push_back(tokenize(t[i]));
  }
  return c;
}

std::vector<PreparedPair> prepare_all(const Corpus& c, const Vocab& vocab, std::size_t seq_len) {
  std::vector<PreparedPair> out;
  for (std::size_t i = 0; i < c.src.size(); ++i)
    if (auto p = prepare_pair(c.src[i], c.tgt[i], vocab, seq_len)) out.push_back(std::move(*p));
  return out;
}

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return idx;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

TrainOutcome train_impl(const RunConfig& cfg, const PreparedData& prepared, const RunPaths* paths, std::ostream* log) {
  const bool resume = paths && std::filesystem::exists(paths->checkpoint()) &&
                      std::filesystem::exists(paths->train_state());
  Seq2SeqModel model = resume ? load_model(paths->checkpoint()) : Seq2SeqModel(cfg.model);
  if (resume && model.config().vocab_size != cfg.model.vocab_size)
    throw ConfigError("checkpoint in " + paths->dir.string() + " does not match model.vocab_size");
  TrainState state(model, cfg.optimizer, cfg.scheduler);
  if (resume) {
    load_train_state(state, paths->train_state());
    if (log) *log << "resuming from step " << state.step << " in " << paths->dir.string() << "\n";
  }

  std::ofstream metrics_file, gradstats_file;
  if (paths) {
    std::filesystem::create_directories(paths->dir);
    const bool fresh_metrics = !resume || !std::filesystem::exists(paths->metrics());
    metrics_file.open(paths->metrics(), fresh_metrics ? std::ios::trunc : std::ios::app);
    if (fresh_metrics) metrics_file << metric_csv_header() << "\n";
    const bool fresh_stats = !resume || !std::filesystem::exists(paths->gradstats());
    gradstats_file.open(paths->gradstats(), fresh_stats ? std::ios::trunc : std::ios::app);
    if (fresh_stats) gradstats_file << "step,group,mean,std,std_over_mean\n";
  }

  TrainOutcome out{std::move(model), std::nullopt, 0};
  TrainSinks sinks;
  sinks.metrics = [&](const MetricRow& row) {
    out.last_row = row;
    if (metrics_file.is_open()) metrics_file << to_csv(row) << "\n" << std::flush;
    if (log)
      *log << "step=" << row.step << " train_loss=" << fmt(row.train_loss) << " val_loss=" << fmt(row.val_loss)
           << " lr=" << fmt(row.lr) << " aux_w=" << fmt(row.aux_w) << " acc=" << fmt(row.acc)
           << " ppl=" << fmt(row.ppl) << "\n"
           << std::flush;
  };
  sinks.gradstats = [&](std::int64_t step, const std::vector<GroupGradStats>& stats) {
    if (!gradstats_file.is_open()) return;
    for (const auto& s : stats)
      gradstats_file << step << ',' << s.name << ',' << fmt(s.mean) << ',' << fmt(s.stddev) << ',' << fmt(s.ratio)
                     << "\n";
    gradstats_file.flush();
  };
  if (paths) {
    sinks.checkpoint = [&](const Seq2SeqModel& m, const TrainState& st) {
      save_model(m, paths->checkpoint());
      save_train_state(st, paths->train_state());
    };
    sinks.nan_dump = [&](const std::string& diag) {
      std::ofstream dump(paths->nan_dump());
      dump << "step " << state.step << "\nlr " << state.optimizer.lr() << "\nerror " << diag << "\n";
    };
  }
  const std::int64_t start = state.step;
  train_loop(out.model, state, prepared.data, cfg.loss, cfg.train, sinks);
  out.steps_done = state.step - start;
  return out;
}

TokenRows pair_column(const std::vector<PreparedPair>& pairs, std::span<const std::size_t> idx,
                      std::vector<TokenId> PreparedPair::*field) {
  TokenRows rows;
  for (std::size_t i : idx) rows.push_back(pairs[i].*field);
  return rows;
}

// Source-input pairs carry no BOS; greedy decoding has nothing to feed back.
bool is_seq2seq(const PreparedPair& p) { return !p.tgt_in.empty() && p.tgt_in[0] == kBos; }

}  // namespace

PreparedPair make_task_pair(std::span<const TokenId> tokens, std::size_t shift, DataConfig::DecoderInput input) {
  PreparedPair p = make_shift_pair(tokens, shift);
  if (input == DataConfig::DecoderInput::kSource) p.tgt_in = p.src;
  return p;
}

PreparedData build_dataset(const RunConfig& cfg) {
  PreparedData out;
  const auto& d = cfg.data;
  const std::size_t S = cfg.model.seq_len;
  if (d.task == DataConfig::Task::kParallel) {
    // Existence first, so a missing file is reported before any parsing.
    for (const std::string* p : {&d.train_src, &d.train_tgt, &d.train_tsv, &d.val_src, &d.val_tgt, &d.val_tsv})
      if (!p->empty() && !std::filesystem::exists(*p)) throw DataError("data file not found: " + *p);
    const Corpus train = read_corpus(d.train_src, d.train_tgt, d.train_tsv);
    std::vector<std::vector<std::string>> pooled = train.src;
    pooled.insert(pooled.end(), train.tgt.begin(), train.tgt.end());
    if (pooled.empty()) throw DataError("training corpus is empty");
    out.vocab = Vocab::build(pooled, cfg.model.vocab_size);
    out.data.train = prepare_all(train, out.vocab, S);
    if (!d.val_src.empty() || !d.val_tsv.empty()) {
      out.data.val = prepare_all(read_corpus(d.val_src, d.val_tgt, d.val_tsv), out.vocab, S);
    } else {
      // Hold out the last 5% (at least one pair).
      const std::size_t n_val = std::max<std::size_t>(1, out.data.train.size() / 20);
      if (out.data.train.size() <= n_val) throw DataError("training corpus too small to hold out a validation slice");
      out.data.val.assign(out.data.train.end() - static_cast<std::ptrdiff_t>(n_val), out.data.train.end());
      out.data.train.resize(out.data.train.size() - n_val);
    }
    if (out.data.train.empty()) throw DataError("no usable training pairs after preparation");
    if (out.data.val.empty()) throw DataError("no usable validation pairs after preparation");
    return out;
  }
  out.vocab = synthetic_vocab(cfg.model.vocab_size);
  Rng rng(derive_seed(cfg.model.seeds.data, 0xDA7A));
  for (const auto& s : synthetic_stream(d.train_sequences, S, cfg.model.vocab_size, rng))
    out.data.train.push_back(make_task_pair(s, d.shift, d.decoder_input));
  if (d.val_sequences == 0) {
    out.data.val = out.data.train;
  } else {
    for (const auto& s : synthetic_stream(d.val_sequences, S, cfg.model.vocab_size, rng))
      out.data.val.push_back(make_task_pair(s, d.shift, d.decoder_input));
  }
  return out;
}

TrainOutcome run_training(const RunConfig& cfg, const PreparedData& prepared, const RunPaths& paths,
                          std::ostream* log) {
  return train_impl(cfg, prepared, &paths, log);
}

TrainOutcome train_in_memory(const RunConfig& cfg, const PreparedData& prepared, std::ostream* log) {
  return train_impl(cfg, prepared, nullptr, log);
}

EvalReport evaluate_soft_report(const Seq2SeqModel& model, const std::vector<PreparedPair>& pairs, double alpha,
                                std::size_t lanes) {
  const std::uint64_t seed = derive_seed(model.config().seeds.hidden_noise, 0xE7A1);
  EvalMetrics em = evaluate_soft(model, pairs, alpha, seed, lanes);
  EvalReport r;
  r.mode = "soft";
  r.accuracy = em.accuracy;
  r.perplexity = em.perplexity;
  r.tokens = em.tokens;
  std::vector<std::vector<TokenId>> hyps, refs;
  Rng noise(seed);
  ForwardOptions opts;
  opts.hidden_rng = &noise;
  for (std::size_t begin = 0; begin < pairs.size(); begin += lanes) {
    const auto idx = range_indices(begin, std::min(pairs.size(), begin + lanes));
    const TokenRows src = pair_column(pairs, idx, &PreparedPair::src);
    TokenRows out;
    if (is_seq2seq(pairs[idx[0]])) {
      out = model.generate(src, model.config().seq_len, noise);
    } else {
      const auto preds = argmax_predictions(model.forward(src, pair_column(pairs, idx, &PreparedPair::tgt_in), opts).probs);
      out = preds;
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      hyps.push_back(strip_special(out[i]));
      refs.push_back(strip_special(pairs[idx[i]].tgt_out));
    }
  }
  r.bleu = corpus_bleu(hyps, refs);
  return r;
}

EvalReport evaluate_hard_report(const CollapsedModel& model, const std::vector<PreparedPair>& pairs,
                                std::size_t lanes) {
  if (pairs.empty()) throw DataError("evaluation set is empty");
  EvalReport r;
  r.mode = "hard";
  double hits = 0.0;
  std::vector<std::vector<TokenId>> hyps, refs;
  for (std::size_t begin = 0; begin < pairs.size(); begin += lanes) {
    const auto idx = range_indices(begin, std::min(pairs.size(), begin + lanes));
    const TokenRows src = pair_column(pairs, idx, &PreparedPair::src);
    const TokenRows tgt_out = pair_column(pairs, idx, &PreparedPair::tgt_out);
    const TokenRows preds = hard_teacher_forced(model, src, pair_column(pairs, idx, &PreparedPair::tgt_in));
    std::size_t tokens = 0;
    for (const auto& row : tgt_out)
      for (TokenId y : row) tokens += y != kPad ? 1 : 0;
    if (tokens > 0) hits += token_accuracy(preds, tgt_out) * static_cast<double>(tokens);
    r.tokens += tokens;
    const TokenRows out = is_seq2seq(pairs[idx[0]]) ? hard_forward_seq(model, src, model.config.seq_len) : preds;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      hyps.push_back(strip_special(out[i]));
      refs.push_back(strip_special(tgt_out[i]));
    }
  }
  if (r.tokens == 0) throw DataError("evaluation set has no non-pad targets");
  r.accuracy = hits / static_cast<double>(r.tokens);
  r.bleu = corpus_bleu(hyps, refs);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "mode=" << r.mode << " accuracy=" << fmt(r.accuracy) << " bleu=" << fmt(r.bleu)
     << " ppl=" << (r.perplexity ? fmt(*r.perplexity) : std::string("n/a")) << " tokens=" << r.tokens;
  return os.str();
}

std::vector<ShiftPoint> shift_bench(const RunConfig& cfg, const std::vector<std::size_t>& shifts, std::ostream* log) {
  if (shifts.empty()) throw ConfigError("shift-bench needs at least one shift");
  if (cfg.data.task == DataConfig::Task::kParallel) throw ConfigError("shift-bench needs a synthetic data task");
  for (std::size_t f : shifts)
    if (f >= cfg.model.seq_len)
      throw ConfigError("shift " + std::to_string(f) + " must be < model.seq_len (" +
                        std::to_string(cfg.model.seq_len) + ")");
  std::vector<ShiftPoint> out;
  for (std::size_t f : shifts) {
    RunConfig c = cfg;
    c.data.task = DataConfig::Task::kShift;
    c.data.shift = f;
    c.validate();
    const PreparedData prepared = build_dataset(c);
    if (log) *log << "shift " << f << ": training " << c.train.steps << " steps\n";
    TrainOutcome t = train_in_memory(c, prepared, nullptr);
    const EvalMetrics em = evaluate_soft(t.model, prepared.data.val, c.loss.label_smoothing,
                                         derive_seed(c.model.seeds.hidden_noise, 0xE7A1), c.train.eval_lanes);
    if (log) *log << "shift " << f << ": accuracy=" << fmt(em.accuracy) << "\n" << std::flush;
    out.push_back({f, em.accuracy});
  }
  return out;
}

ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.vocab_size = 8;
  c.emb_dim = 8;
  c.seq_len = 3;
  c.group_factor = 4;
  c.groupsum_tau = 2.0;
  c.sizes[static_cast<int>(Group::kN)] = {32};
  c.sizes[static_cast<int>(Group::kK)] = {32};
  c.sizes[static_cast<int>(Group::kL)] = {32};
  c.sizes[static_cast<int>(Group::kP)] = {32};
  c.sizes[static_cast<int>(Group::kM)] = {32, 32};
  c.node_init = NodeInit::gaussian(1.0);
  return c;
}

GradcheckReport gradcheck(const ModelConfig& cfg, const GradcheckOptions& o) {
  Seq2SeqModel model(cfg);
  const std::size_t S = cfg.seq_len;
  Rng data(o.data_seed);
  std::uniform_int_distribution<TokenId> tok(kBos, static_cast<TokenId>(cfg.vocab_size - 1));
  TokenRows src(o.lanes), tgt_in(o.lanes), tgt_out(o.lanes);
  for (std::size_t lane = 0; lane < o.lanes; ++lane) {
    for (std::size_t t = 0; t < S; ++t) {
      src[lane].push_back(tok(data));
      tgt_out[lane].push_back(t + 1 == S && lane % 2 == 1 ? kPad : tok(data));
    }
    tgt_in[lane] = {kBos};
    tgt_in[lane].insert(tgt_in[lane].end(), tgt_out[lane].begin(), tgt_out[lane].end() - 1);
  }
  const double alpha = 0.1;
  const std::uint64_t noise_seed = derive_seed(cfg.seeds.hidden_noise, 0x6C);
  auto loss_of = [&](ForwardResult* keep) {
    Rng noise(noise_seed);
    ForwardOptions opts;
    opts.hidden_rng = &noise;
    ForwardResult fr = model.forward(src, tgt_in, opts);
    LossResult lr = smoothed_cross_entropy(fr.probs, tgt_out, alpha);
    const double total = lr.loss + o.emb_reg_weight * fr.emb_reg;
    if (keep) {
      *keep = std::move(fr);
      keep->scores = std::move(lr.grad_scores);  // reuse the slot for dL/dscores
    }
    return total;
  };

  ForwardResult fr;
  loss_of(&fr);
  Gradients grads = model.backward(fr.tape, fr.scores, o.emb_reg_weight);
  if (o.tamper) o.tamper(grads);

  GradcheckReport rep;
  rep.h = o.h;
  std::vector<std::span<double>> params = model.parameters();
  const auto analytic = grads.tensors();
  // Tensor index -> report group: 0 is the embedding, then layers in N K L P M order.
  std::vector<std::size_t> owner = {0};
  rep.groups.push_back({"emb"});
  for (Group g : kAllGroups) {
    rep.groups.push_back({std::string(group_name(g))});
    for (std::size_t i = 0; i < model.layers(g).size(); ++i) owner.push_back(rep.groups.size() - 1);
  }
  std::vector<std::size_t> offset(rep.groups.size(), 0);
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    auto& grp = rep.groups[owner[ti]];
    for (std::size_t i = 0; i < params[ti].size(); ++i) {
      const double saved = params[ti][i];
      params[ti][i] = saved + o.h;
      const double up = loss_of(nullptr);
      params[ti][i] = saved - o.h;
      const double down = loss_of(nullptr);
      params[ti][i] = saved;
      const double num = (up - down) / (2.0 * o.h);
      const double ana = analytic[ti][i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), o.rel_floor});
      if (rel > grp.worst_rel || grp.checked == 0) {
        grp.worst_rel = rel;
        grp.worst_index = offset[owner[ti]] + i;
        grp.analytic = ana;
        grp.numeric = num;
      }
      ++grp.checked;
      ++rep.params;
    }
    offset[owner[ti]] += params[ti].size();
  }
  for (const auto& g : rep.groups) rep.max_rel = std::max(rep.max_rel, g.worst_rel);

  // Closed form for one layer: dy/dz_i = p_i (f_i(a, b) - y) / tau, summed against grad_y.
  Rng xr(derive_seed(o.data_seed, 0xCF));
  for (Group g : kAllGroups) {
    for (const auto& layer : model.layers(g)) {
      const std::size_t lanes = 4;
      Matrix x(layer.in_dim(), lanes), gy(layer.width(), lanes);
      for (double& v : x.values()) v = uniform01(xr);
      for (double& v : gy.values()) v = normal(xr, 0.0, 1.0);
      LayerTape tape;
      layer.forward_soft(x, tape);
      const SoftBackward sb = layer.backward_soft(tape, gy);
      const Mixture& mix = *tape.mixture;
      for (std::size_t j = 0; j < layer.width(); ++j) {
        for (std::size_t i = 0; i < 16; ++i) {
          double expect = 0.0;
          for (std::size_t lane = 0; lane < lanes; ++lane) {
            const double a = x(layer.conn_a()[j], lane), b = x(layer.conn_b()[j], lane);
            double y = 0.0;
            for (std::size_t l = 0; l < 16; ++l)
              y += mix.weights[j * 16 + l] * relaxed_eval(GateKind(static_cast<std::uint8_t>(l)), a, b);
            const double f = relaxed_eval(GateKind(static_cast<std::uint8_t>(i)), a, b);
            expect += gy(j, lane) * mix.weights[j * 16 + i] * (f - y) / mix.tau;
          }
          rep.closed_form_max_abs = std::max(rep.closed_form_max_abs, std::abs(expect - sb.grad_z[j * 16 + i]));
        }
      }
    }
  }
  rep.passed = rep.max_rel < o.rel_tol && rep.closed_form_max_abs < 1e-10;
  return rep;
}

std::string format_gradcheck(const GradcheckReport& r) {
  std::ostringstream os;
  os << "gradcheck over " << r.params << " parameters (central differences, h=" << r.h << ")\n";
  os << "group,checked,worst_rel,index,analytic,numeric\n";
  for (const auto& g : r.groups)
    os << g.name << ',' << g.checked << ',' << std::setprecision(3) << std::scientific << g.worst_rel << ','
       << std::defaultfloat << g.worst_index << ',' << std::setprecision(10) << g.analytic << ',' << g.numeric
       << "\n";
  os << std::setprecision(3) << std::scientific << "max relative error " << r.max_rel
     << "\nclosed-form max abs error " << r.closed_form_max_abs << "\n"
     << (r.passed ? "PASS" : "FAIL") << "\n";
  return os.str();
}

}  // namespace rdlgn
