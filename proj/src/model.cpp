#include "rdlgn/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>

#include "rdlgn/error.hpp"

namespace rdlgn {
namespace {

std::uint64_t next_model_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void check_prob(double p, const char* what) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1)");
}

void check_rows(const TokenRows& rows, std::size_t len, std::size_t vocab, const char* what) {
  if (rows.empty()) throw ShapeError(std::string(what) + ": empty batch");
  for (const auto& r : rows) {
    if (r.size() != len)
      throw ShapeError(std::string(what) + ": expected length " + std::to_string(len) + ", got " +
                       std::to_string(r.size()));
    for (TokenId id : r) {
      if (id >= vocab) throw ShapeError(std::string(what) + ": token id " + std::to_string(id) + " >= vocab size");
    }
  }
}

std::vector<TokenId> column(const TokenRows& rows, std::size_t t) {
  std::vector<TokenId> ids(rows.size());
  for (std::size_t lane = 0; lane < rows.size(); ++lane) ids[lane] = rows[lane][t];
  return ids;
}

// Splits rows [0, a), [a, a + b), [a + b, end) of m.
struct Split3 {
  Matrix first, second, third;
};
Split3 split3(const Matrix& m, std::size_t a, std::size_t b) {
  return {row_slice(m, 0, a), row_slice(m, a, b), row_slice(m, a + b, m.rows() - a - b)};
}

void multiply_mask(Matrix& m, const Matrix& mask) {
  if (mask.empty()) return;
  auto v = m.values();
  auto k = mask.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= k[i];
}

}  // namespace

std::string_view group_name(Group g) {
  static constexpr std::array<std::string_view, 5> kNames = {"N", "K", "L", "P", "M"};
  return kNames[static_cast<int>(g)];
}

std::size_t ModelConfig::group_input_dim(Group g) const {
  switch (g) {
    case Group::kN:
    case Group::kL:
      return emb_dim;
    case Group::kK:
      return last(Group::kN) + last(Group::kK);
    case Group::kP:
    case Group::kM:
      return last(Group::kP) + last(Group::kK) + last(Group::kL);
  }
  return 0;
}

void ModelConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("model.vocab_size must be >= 5 (4 special tokens + 1)");
  if (emb_dim < 2) throw ConfigError("model.emb_dim must be >= 2");
  if (seq_len < 1) throw ConfigError("model.seq_len must be >= 1");
  if (group_factor < 1) throw ConfigError("model.group_factor must be >= 1");
  if (!(groupsum_tau > 0.0)) throw ConfigError("model.groupsum_tau must be > 0");
  for (Group g : kAllGroups) {
    const auto& s = group_sizes(g);
    const std::string name = "model.sizes." + std::string(group_name(g));
    if (s.empty()) throw ConfigError(name + " must list at least one layer");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < 1) throw ConfigError(name + " has a zero width");
      if (i + 1 < s.size() && s[i] < 2) throw ConfigError(name + ": inner layer widths must be >= 2");
    }
  }
  if (last(Group::kM) != vocab_size * group_factor)
    throw ConfigError("model.sizes.M: last width " + std::to_string(last(Group::kM)) +
                      " must equal vocab_size * group_factor = " + std::to_string(vocab_size * group_factor));
  check_prob(dropout.embedding, "model.dropout.embedding");
  for (double p : dropout.group) check_prob(p, "model.dropout group probability");
  if (gumbel.enabled && !(gumbel.tau > 0.0)) throw ConfigError("model.gumbel.tau must be > 0");
  if (node_init.sigma < 0.0) throw ConfigError("model.node_init.sigma must be >= 0");
  if (node_init.kind == NodeInit::Kind::kResidual && !(node_init.beta > 0.0))
    throw ConfigError("model.node_init.beta must be > 0");
  if (hidden_init.kind == HiddenInit::Kind::kGaussian && !(hidden_init.stddev > 0.0))
    throw ConfigError("model.hidden_init.stddev must be > 0");
  if (!(embedding_init_std >= 0.0)) throw ConfigError("model.embedding_init_std must be >= 0");
}

ModelConfig ModelConfig::base_preset() {
  ModelConfig c;
  c.vocab_size = 16000;
  c.emb_dim = 1024;
  c.seq_len = 16;
  c.sizes[static_cast<int>(Group::kN)] = {12000, 12000};
  c.sizes[static_cast<int>(Group::kK)] = {54000, 32000};
  c.sizes[static_cast<int>(Group::kL)] = {12000, 12000};
  c.sizes[static_cast<int>(Group::kP)] = {64000, 48000};
  c.sizes[static_cast<int>(Group::kM)] = {400000, 400000, 480000};
  c.group_factor = 30;
  c.groupsum_tau = 2.0;
  return c;
}

Accounting accounting(const ModelConfig& cfg) {
  Accounting a;
  for (Group g : kAllGroups) {
    const auto& s = cfg.group_sizes(g);
    const std::size_t widths = std::accumulate(s.begin(), s.end(), std::size_t{0});
    a.group_logits[static_cast<int>(g)] = 16 * widths;
    a.collapsed_gates += widths;
  }
  a.embedding_params = cfg.vocab_size * cfg.emb_dim;
  a.embedding_bits = a.embedding_params;
  a.trainable_params = a.embedding_params + 16 * a.collapsed_gates;
  return a;
}

std::vector<double> group_sum(std::span<const double> v, std::size_t k, double tau) {
  if (k == 0 || v.size() % k != 0)
    throw ShapeError("group_sum: length " + std::to_string(v.size()) + " not divisible by k=" + std::to_string(k));
  if (!(tau > 0.0)) throw ConfigError("group_sum: tau must be > 0");
  std::vector<double> out(v.size() / k, 0.0);
  for (std::size_t g = 0; g < out.size(); ++g) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += v[g * k + i];
    out[g] = s / tau;
  }
  return out;
}

double embedding_reg_loss(const Matrix& x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x.values()) s += v * (1.0 - v);
  return s / static_cast<double>(x.values().size());
}

std::vector<std::span<double>> Gradients::tensors() {
  std::vector<std::span<double>> out{embedding};
  for (auto& g : logits)
    for (auto& l : g) out.emplace_back(l);
  return out;
}

std::vector<std::span<const double>> Gradients::tensors() const {
  std::vector<std::span<const double>> out{embedding};
  for (const auto& g : logits)
    for (const auto& l : g) out.emplace_back(l);
  return out;
}

Seq2SeqModel::Seq2SeqModel(ModelConfig cfg) : cfg_(std::move(cfg)), id_(next_model_id()) {
  cfg_.validate();
  embedding_ = Matrix(cfg_.vocab_size, cfg_.emb_dim);
  if (cfg_.embedding_init_std > 0.0) {
    Rng rng(derive_seed(cfg_.seeds.init, 0xE3B));
    std::normal_distribution<double> dist(0.0, cfg_.embedding_init_std);
    for (double& v : embedding_.values()) v = dist(rng);
  }
  std::uint64_t layer_tag = 0;
  for (Group g : kAllGroups) {
    std::size_t in_dim = cfg_.group_input_dim(g);
    for (std::size_t width : cfg_.group_sizes(g)) {
      groups_[static_cast<int>(g)].emplace_back(in_dim, width, derive_seed(cfg_.seeds.connectivity, layer_tag),
                                                cfg_.node_init, derive_seed(cfg_.seeds.init, layer_tag));
      ++layer_tag;
      in_dim = width;
    }
  }
}

Seq2SeqModel::Seq2SeqModel(ModelConfig cfg, Matrix embedding, std::array<std::vector<SoftLogicLayer>, 5> groups)
    : cfg_(std::move(cfg)), embedding_(std::move(embedding)), groups_(std::move(groups)), id_(next_model_id()) {
  cfg_.validate();
  if (embedding_.rows() != cfg_.vocab_size || embedding_.cols() != cfg_.emb_dim)
    throw ShapeError("embedding table does not match the config");
  for (Group g : kAllGroups) {
    const auto& sizes = cfg_.group_sizes(g);
    const auto& layers = groups_[static_cast<int>(g)];
    if (layers.size() != sizes.size()) throw ShapeError("layer count mismatch in group " + std::string(group_name(g)));
    std::size_t in_dim = cfg_.group_input_dim(g);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].in_dim() != in_dim || layers[i].width() != sizes[i])
        throw ShapeError("layer shape mismatch in group " + std::string(group_name(g)));
      in_dim = sizes[i];
    }
  }
}

std::vector<std::span<double>> Seq2SeqModel::parameters() {
  std::vector<std::span<double>> out{embedding_.values()};
  for (auto& g : groups_)
    for (auto& layer : g) out.push_back(layer.logits_mut());
  return out;
}

Gradients Seq2SeqModel::zero_gradients() const {
  Gradients g;
  g.embedding.assign(embedding_.values().size(), 0.0);
  for (int gi = 0; gi < 5; ++gi)
    for (const auto& layer : groups_[gi]) g.logits[gi].emplace_back(layer.parameter_count(), 0.0);
  return g;
}

std::size_t Seq2SeqModel::parameter_count() const {
  std::size_t n = embedding_.values().size();
  for (const auto& g : groups_)
    for (const auto& layer : g) n += layer.parameter_count();
  return n;
}

Matrix Seq2SeqModel::embed_relax(std::span<const TokenId> ids) const {
  Matrix x(cfg_.emb_dim, ids.size());
  for (std::size_t lane = 0; lane < ids.size(); ++lane) {
    if (ids[lane] >= cfg_.vocab_size) throw ShapeError("token id " + std::to_string(ids[lane]) + " >= vocab size");
    auto row = embedding_.row(ids[lane]);
    for (std::size_t i = 0; i < cfg_.emb_dim; ++i) x(i, lane) = sigmoid(row[i]);
  }
  return x;
}

Matrix Seq2SeqModel::embed_hard(std::span<const TokenId> ids) const {
  Matrix x(cfg_.emb_dim, ids.size());
  for (std::size_t lane = 0; lane < ids.size(); ++lane) {
    if (ids[lane] >= cfg_.vocab_size) throw ShapeError("token id " + std::to_string(ids[lane]) + " >= vocab size");
    auto row = embedding_.row(ids[lane]);
    for (std::size_t i = 0; i < cfg_.emb_dim; ++i) x(i, lane) = row[i] >= 0.0 ? 1.0 : 0.0;
  }
  return x;
}

std::size_t Seq2SeqModel::mixture_offset(Group g) const {
  std::size_t off = 0;
  for (int gi = 0; gi < static_cast<int>(g); ++gi) off += groups_[gi].size();
  return off;
}

std::vector<std::shared_ptr<const Mixture>> Seq2SeqModel::build_mixtures(const ForwardOptions& opts) const {
  const bool gumbel = opts.train && cfg_.gumbel.enabled;
  if (gumbel && opts.gumbel_rng == nullptr) throw ConfigError("gumbel sampling needs a gumbel stream");
  std::vector<std::shared_ptr<const Mixture>> mixes;
  for (const auto& g : groups_)
    for (const auto& layer : g)
      mixes.push_back(gumbel ? layer.gumbel_mixture(cfg_.gumbel, *opts.gumbel_rng) : layer.mixture());
  return mixes;
}

Matrix Seq2SeqModel::apply_dropout(Matrix x, double p, const ForwardOptions& opts, Matrix* mask_out) const {
  if (!opts.train || p <= 0.0) return x;
  if (opts.dropout_rng == nullptr) throw ConfigError("dropout needs a dropout stream");
  Matrix mask(x.rows(), x.cols());
  std::bernoulli_distribution keep(1.0 - p);
  for (double& m : mask.values()) m = keep(*opts.dropout_rng) ? 1.0 : 0.0;
  multiply_mask(x, mask);
  if (mask_out) *mask_out = std::move(mask);
  return x;
}

Matrix Seq2SeqModel::run_group(Group g, std::size_t mix_offset,
                               const std::vector<std::shared_ptr<const Mixture>>& mixes, Matrix x,
                               const ForwardOptions& opts, GroupTape* tape) const {
  const auto& layers = groups_[static_cast<int>(g)];
  if (tape) tape->layers.resize(layers.size());
  LayerTape scratch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(mixes[mix_offset + i], std::move(x), tape ? tape->layers[i] : scratch);
  }
  return apply_dropout(std::move(x), cfg_.dropout.group[static_cast<int>(g)], opts,
                       tape ? &tape->dropout_mask : nullptr);
}

Matrix Seq2SeqModel::initial_state(std::size_t width, std::size_t lanes, const ForwardOptions& opts) const {
  const HiddenInit& h = cfg_.hidden_init;
  switch (h.kind) {
    case HiddenInit::Kind::kZero:
      return Matrix(width, lanes, 0.0);
    case HiddenInit::Kind::kOne:
      return Matrix(width, lanes, 1.0);
    case HiddenInit::Kind::kGaussian:
    case HiddenInit::Kind::kUniform:
      break;
  }
  if (opts.hidden_rng == nullptr) throw ConfigError("random hidden-state init needs a hidden_noise stream");
  Matrix m(width, lanes);
  // Lane-major draw order: each sequence gets its own contiguous block of noise.
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    for (std::size_t r = 0; r < width; ++r) {
      m(r, lane) = h.kind == HiddenInit::Kind::kUniform
                       ? uniform01(*opts.hidden_rng)
                       : std::clamp(normal(*opts.hidden_rng, h.mean, h.stddev), 0.0, 1.0);
    }
  }
  return m;
}

Matrix Seq2SeqModel::encode(const TokenRows& src, const ForwardOptions& opts, ForwardTape* tape) const {
  check_rows(src, cfg_.seq_len, cfg_.vocab_size, "encode source");
  const std::size_t lanes = src.size();
  std::vector<std::shared_ptr<const Mixture>> local;
  const auto& mixes = tape && !tape->mixtures.empty() ? tape->mixtures : (local = build_mixtures(opts));
  if (tape) {
    tape->src_embed.assign(cfg_.seq_len, {});
    tape->n.assign(cfg_.seq_len, {});
    tape->k.assign(cfg_.seq_len, {});
  }
  const std::size_t n_off = mixture_offset(Group::kN);
  const std::size_t k_off = mixture_offset(Group::kK);
  Matrix k_state = initial_state(cfg_.last(Group::kK), lanes, opts);
  for (std::size_t t = 0; t < cfg_.seq_len; ++t) {
    auto ids = column(src, t);
    Matrix x = embed_relax(ids);
    if (tape) {
      tape->src_embed[t].ids = ids;
      tape->src_embed[t].relaxed = x;
    }
    x = apply_dropout(std::move(x), cfg_.dropout.embedding, opts, tape ? &tape->src_embed[t].dropout_mask : nullptr);
    Matrix h = run_group(Group::kN, n_off, mixes, std::move(x), opts, tape ? &tape->n[t] : nullptr);
    k_state = run_group(Group::kK, k_off, mixes, vconcat({&h, &k_state}), opts, tape ? &tape->k[t] : nullptr);
  }
  return k_state;
}

ForwardResult Seq2SeqModel::forward(const TokenRows& src, const TokenRows& tgt_in, const ForwardOptions& opts) const {
  check_rows(tgt_in, cfg_.seq_len, cfg_.vocab_size, "decoder input");
  if (src.size() != tgt_in.size()) throw ShapeError("source and target batch sizes differ");
  const std::size_t lanes = src.size();
  const std::size_t S = cfg_.seq_len;
  ForwardResult res;
  ForwardTape& tape = res.tape;
  tape.model_id = id_;
  tape.lanes = lanes;
  tape.mixtures = build_mixtures(opts);
  res.context = encode(src, opts, &tape);

  tape.tgt_embed.assign(S, {});
  tape.l.assign(S, {});
  tape.p.assign(S, {});
  tape.m.assign(S, {});
  const auto& mixes = tape.mixtures;
  const std::size_t l_off = mixture_offset(Group::kL);
  const std::size_t p_off = mixture_offset(Group::kP);
  const std::size_t m_off = mixture_offset(Group::kM);
  Matrix p_state = initial_state(cfg_.last(Group::kP), lanes, opts);
  double reg = 0.0;
  for (std::size_t t = 0; t < S; ++t) reg += embedding_reg_loss(tape.src_embed[t].relaxed);
  for (std::size_t t = 0; t < S; ++t) {
    auto ids = column(tgt_in, t);
    Matrix y = embed_relax(ids);
    reg += embedding_reg_loss(y);
    tape.tgt_embed[t].ids = ids;
    tape.tgt_embed[t].relaxed = y;
    y = apply_dropout(std::move(y), cfg_.dropout.embedding, opts, &tape.tgt_embed[t].dropout_mask);
    Matrix l = run_group(Group::kL, l_off, mixes, std::move(y), opts, &tape.l[t]);
    p_state = run_group(Group::kP, p_off, mixes, vconcat({&p_state, &res.context, &l}), opts, &tape.p[t]);
    Matrix m = run_group(Group::kM, m_off, mixes, vconcat({&p_state, &res.context, &l}), opts, &tape.m[t]);

    Matrix scores(cfg_.vocab_size, lanes);
    Matrix probs(cfg_.vocab_size, lanes);
    const std::size_t k = cfg_.group_factor;
    const double inv_tau = 1.0 / cfg_.groupsum_tau;
    for (std::size_t g = 0; g < cfg_.vocab_size; ++g) {
      auto out = scores.row(g);
      for (std::size_t i = 0; i < k; ++i) {
        auto src_row = m.row(g * k + i);
        for (std::size_t lane = 0; lane < lanes; ++lane) out[lane] += src_row[lane];
      }
      for (double& v : out) v *= inv_tau;
    }
    for (std::size_t lane = 0; lane < lanes; ++lane) {
      double hi = -INFINITY;
      for (std::size_t g = 0; g < cfg_.vocab_size; ++g) hi = std::max(hi, scores(g, lane));
      double sum = 0.0;
      for (std::size_t g = 0; g < cfg_.vocab_size; ++g) sum += (probs(g, lane) = std::exp(scores(g, lane) - hi));
      for (std::size_t g = 0; g < cfg_.vocab_size; ++g) probs(g, lane) /= sum;
    }
    res.scores.push_back(std::move(scores));
    res.probs.push_back(std::move(probs));
  }
  res.emb_reg = reg / static_cast<double>(2 * S);
  return res;
}

Matrix Seq2SeqModel::backprop_group(Group g, const GroupTape& tape, Matrix grad,
                                    std::vector<std::vector<double>>& corner_grads) const {
  const auto& layers = groups_[static_cast<int>(g)];
  if (tape.layers.size() != layers.size()) throw ShapeError("tape does not match the model");
  multiply_mask(grad, tape.dropout_mask);
  const std::size_t off = mixture_offset(g);
  for (std::size_t i = layers.size(); i-- > 0;) {
    grad = layers[i].backward(tape.layers[i], grad, corner_grads[off + i]);
  }
  return grad;
}

void Seq2SeqModel::backprop_embedding(const EmbedTape& tape, Matrix grad, double reg_scale, Gradients& grads) const {
  multiply_mask(grad, tape.dropout_mask);
  const std::size_t d = cfg_.emb_dim;
  for (std::size_t lane = 0; lane < tape.ids.size(); ++lane) {
    double* dst = grads.embedding.data() + tape.ids[lane] * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double x = tape.relaxed(i, lane);
      const double gx = grad(i, lane) + reg_scale * (1.0 - 2.0 * x);
      dst[i] += gx * x * (1.0 - x);
    }
  }
}

Gradients Seq2SeqModel::backward(const ForwardTape& tape, const std::vector<Matrix>& grad_scores,
                                 double emb_reg_weight) const {
  if (tape.model_id != id_) throw ShapeError("tape was produced by a different model");
  const std::size_t S = cfg_.seq_len;
  const std::size_t lanes = tape.lanes;
  if (grad_scores.size() != S || tape.m.size() != S || tape.k.size() != S)
    throw ShapeError("backward: tape/gradient length mismatch");
  Gradients grads = zero_gradients();
  std::vector<std::vector<double>> corner_grads;
  for (const auto& g : groups_)
    for (const auto& layer : g) corner_grads.emplace_back(layer.width() * 4, 0.0);

  const std::size_t Pw = cfg_.last(Group::kP);
  const std::size_t Kw = cfg_.last(Group::kK);
  const std::size_t Nw = cfg_.last(Group::kN);
  const std::size_t k = cfg_.group_factor;
  const double inv_tau = 1.0 / cfg_.groupsum_tau;
  // Regularizer is the mean over 2S embedding matrices of size d x lanes.
  const double reg_scale = emb_reg_weight / static_cast<double>(2 * S * cfg_.emb_dim * lanes);

  Matrix grad_c(Kw, lanes);
  Matrix grad_p_next(Pw, lanes);
  for (std::size_t t = S; t-- > 0;) {
    const Matrix& gs = grad_scores[t];
    if (gs.rows() != cfg_.vocab_size || gs.cols() != lanes) throw ShapeError("grad_scores shape mismatch");
    Matrix grad_m(cfg_.last(Group::kM), lanes);
    for (std::size_t g = 0; g < cfg_.vocab_size; ++g) {
      auto src = gs.row(g);
      for (std::size_t i = 0; i < k; ++i) {
        auto dst = grad_m.row(g * k + i);
        for (std::size_t lane = 0; lane < lanes; ++lane) dst[lane] = src[lane] * inv_tau;
      }
    }
    Matrix gm_in = backprop_group(Group::kM, tape.m[t], std::move(grad_m), corner_grads);
    auto [gp, gc_m, gl] = split3(gm_in, Pw, Kw);
    add_into(gp, grad_p_next);
    add_into(grad_c, gc_m);
    Matrix gp_in = backprop_group(Group::kP, tape.p[t], std::move(gp), corner_grads);
    auto [gp_prev, gc_p, gl_p] = split3(gp_in, Pw, Kw);
    grad_p_next = std::move(gp_prev);  // gradient w.r.t. p_0 is discarded at t = 0
    add_into(grad_c, gc_p);
    add_into(gl, gl_p);
    Matrix gy = backprop_group(Group::kL, tape.l[t], std::move(gl), corner_grads);
    backprop_embedding(tape.tgt_embed[t], std::move(gy), reg_scale, grads);
  }

  Matrix grad_k = std::move(grad_c);
  for (std::size_t t = S; t-- > 0;) {
    Matrix gk_in = backprop_group(Group::kK, tape.k[t], std::move(grad_k), corner_grads);
    Matrix gh = row_slice(gk_in, 0, Nw);
    grad_k = row_slice(gk_in, Nw, Kw);  // discarded at t = 0
    Matrix gx = backprop_group(Group::kN, tape.n[t], std::move(gh), corner_grads);
    backprop_embedding(tape.src_embed[t], std::move(gx), reg_scale, grads);
  }

  std::size_t idx = 0;
  for (int gi = 0; gi < 5; ++gi) {
    for (std::size_t li = 0; li < groups_[gi].size(); ++li, ++idx) {
      groups_[gi][li].corner_to_logit_grad(*tape.mixtures[idx], corner_grads[idx], grads.logits[gi][li]);
    }
  }
  return grads;
}

TokenRows Seq2SeqModel::generate(const TokenRows& src, std::size_t max_len, Rng& hidden_rng) const {
  ForwardOptions opts;
  opts.hidden_rng = &hidden_rng;
  const std::size_t lanes = src.size();
  const auto mixes = build_mixtures(opts);
  ForwardTape enc_tape;
  enc_tape.mixtures = mixes;
  Matrix context = encode(src, opts, &enc_tape);
  const std::size_t l_off = mixture_offset(Group::kL);
  const std::size_t p_off = mixture_offset(Group::kP);
  const std::size_t m_off = mixture_offset(Group::kM);
  Matrix p_state = initial_state(cfg_.last(Group::kP), lanes, opts);
  std::vector<TokenId> prev(lanes, kBos);
  std::vector<bool> done(lanes, false);
  TokenRows out(lanes);
  const std::size_t k = cfg_.group_factor;
  for (std::size_t step = 0; step < max_len; ++step) {
    Matrix l = run_group(Group::kL, l_off, mixes, embed_relax(prev), opts, nullptr);
    p_state = run_group(Group::kP, p_off, mixes, vconcat({&p_state, &context, &l}), opts, nullptr);
    Matrix m = run_group(Group::kM, m_off, mixes, vconcat({&p_state, &context, &l}), opts, nullptr);
    bool all_done = true;
    for (std::size_t lane = 0; lane < lanes; ++lane) {
      TokenId best = 0;
      double best_score = -INFINITY;
      for (std::size_t g = 0; g < cfg_.vocab_size; ++g) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += m(g * k + i, lane);
        if (s > best_score) {
          best_score = s;
          best = static_cast<TokenId>(g);
        }
      }
      prev[lane] = best;
      if (!done[lane]) {
        out[lane].push_back(best);
        if (best == kEos) done[lane] = true;
      }
      all_done = all_done && done[lane];
    }
    if (all_done) break;
  }
  return out;
}

}  // namespace rdlgn
