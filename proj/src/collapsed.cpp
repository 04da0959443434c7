#include "rdlgn/collapsed.hpp"

#include <bit>
#include <string>

#include "rdlgn/error.hpp"

namespace rdlgn {
namespace {

std::uint64_t apply_gate(std::uint8_t gate, std::uint64_t a, std::uint64_t b) {
  switch (gate) {
    case 0: return 0;
    case 1: return ~(a | b);
    case 2: return ~a & b;
    case 3: return ~a;
    case 4: return a & ~b;
    case 5: return ~b;
    case 6: return a ^ b;
    case 7: return ~(a & b);
    case 8: return a & b;
    case 9: return ~(a ^ b);
    case 10: return b;
    case 11: return ~a | b;
    case 12: return a;
    case 13: return a | ~b;
    case 14: return a | b;
    default: return ~std::uint64_t{0};
  }
}

std::vector<TokenId> column(const TokenRows& rows, std::size_t t) {
  std::vector<TokenId> ids(rows.size());
  for (std::size_t lane = 0; lane < rows.size(); ++lane) ids[lane] = rows[lane][t];
  return ids;
}

void check_rows(const TokenRows& rows, const ModelConfig& cfg, const char* what) {
  if (rows.empty()) throw ShapeError(std::string(what) + ": empty batch");
  for (const auto& r : rows)
    if (r.size() != cfg.seq_len) throw ShapeError(std::string(what) + ": wrong sequence length");
}

BitLanes run_group(const CollapsedModel& cm, Group g, BitLanes x) {
  for (const auto& layer : cm.layers(g)) x = eval_bitpacked(layer, x);
  return x;
}

// One decoder step: returns M's output and advances p_state.
BitLanes decode_step(const CollapsedModel& cm, const BitLanes& context, BitLanes& p_state,
                     std::span<const TokenId> prev) {
  BitLanes l = run_group(cm, Group::kL, cm.embed(prev));
  p_state = run_group(cm, Group::kP, vconcat_bits({&p_state, &context, &l}));
  return run_group(cm, Group::kM, vconcat_bits({&p_state, &context, &l}));
}

}  // namespace

BitLanes::BitLanes(std::size_t width, std::size_t lanes)
    : width_(width), lanes_(lanes), words_((lanes + kWordBits - 1) / kWordBits) {
  if (lanes == 0) throw ShapeError("BitLanes needs at least one lane");
  const std::size_t rem = lanes % kWordBits;
  tail_ = rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
  data_.assign(width_ * words_, 0);
}

void BitLanes::set(std::size_t r, std::size_t lane, bool v) {
  std::uint64_t& w = row(r)[lane / kWordBits];
  const std::uint64_t bit = std::uint64_t{1} << (lane % kWordBits);
  w = v ? (w | bit) : (w & ~bit);
}

BitLanes BitLanes::from_matrix(const Matrix& m) {
  BitLanes out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t lane = 0; lane < m.cols(); ++lane) {
      const double v = m(r, lane);
      if (v != 0.0 && v != 1.0) throw ShapeError("BitLanes::from_matrix needs 0/1 entries");
      out.set(r, lane, v == 1.0);
    }
  }
  return out;
}

Matrix BitLanes::to_matrix() const {
  Matrix m(width_, lanes_);
  for (std::size_t r = 0; r < width_; ++r)
    for (std::size_t lane = 0; lane < lanes_; ++lane) m(r, lane) = get(r, lane) ? 1.0 : 0.0;
  return m;
}

BitLanes vconcat_bits(std::initializer_list<const BitLanes*> parts) {
  std::size_t width = 0;
  const std::size_t lanes = (*parts.begin())->lanes();
  for (const BitLanes* p : parts) {
    if (p->lanes() != lanes) throw ShapeError("vconcat_bits: lane counts differ");
    width += p->width();
  }
  BitLanes out(width, lanes);
  std::size_t r0 = 0;
  for (const BitLanes* p : parts) {
    for (std::size_t r = 0; r < p->width(); ++r) {
      auto src = p->row(r);
      std::copy(src.begin(), src.end(), out.row(r0 + r).begin());
    }
    r0 += p->width();
  }
  return out;
}

BitLanes eval_bitpacked(const CollapsedLogicLayer& layer, const BitLanes& x) {
  if (x.width() != layer.in_dim()) throw ShapeError("eval_bitpacked: input width does not match the layer");
  BitLanes out(layer.width(), x.lanes());
  const std::size_t words = x.words_per_row();
  const auto ca = layer.conn_a();
  const auto cb = layer.conn_b();
  const auto gates = layer.gates();
  for (std::size_t j = 0; j < layer.width(); ++j) {
    const std::uint8_t g = gates[j].index();
    auto a = x.row(ca[j]);
    auto b = x.row(cb[j]);
    auto y = out.row(j);
    for (std::size_t w = 0; w < words; ++w) y[w] = apply_gate(g, a[w], b[w]);
    // Gates with t00 = 1 turn zero padding into ones.
    if (g & 1U) y[words - 1] &= x.tail_mask();
  }
  return out;
}

BitLanes CollapsedModel::embed(std::span<const TokenId> ids) const {
  const std::size_t d = config.emb_dim;
  BitLanes out(d, ids.size());
  for (std::size_t lane = 0; lane < ids.size(); ++lane) {
    if (ids[lane] >= config.vocab_size) throw ShapeError("token id " + std::to_string(ids[lane]) + " >= vocab size");
    const std::uint8_t* row = embedding.data() + ids[lane] * d;
    for (std::size_t i = 0; i < d; ++i)
      if (row[i]) out.set(i, lane, true);
  }
  return out;
}

void CollapsedModel::validate() const {
  config.validate();
  if (embedding.size() != config.vocab_size * config.emb_dim)
    throw ShapeError("collapsed embedding does not match the config");
  for (Group g : kAllGroups) {
    const auto& sizes = config.group_sizes(g);
    const auto& ls = layers(g);
    if (ls.size() != sizes.size()) throw ShapeError("layer count mismatch in group " + std::string(group_name(g)));
    std::size_t in_dim = config.group_input_dim(g);
    for (std::size_t i = 0; i < ls.size(); ++i) {
      if (ls[i].in_dim() != in_dim || ls[i].width() != sizes[i])
        throw ShapeError("layer shape mismatch in group " + std::string(group_name(g)));
      in_dim = sizes[i];
    }
  }
}

CollapsedModel collapse_model(const Seq2SeqModel& model) {
  CollapsedModel cm;
  cm.config = model.config();
  auto e = model.embedding().values();
  cm.embedding.resize(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) cm.embedding[i] = e[i] >= 0.0 ? 1 : 0;
  for (Group g : kAllGroups)
    for (const auto& layer : model.layers(g)) cm.groups[static_cast<int>(g)].push_back(layer.collapse());
  return cm;
}

std::vector<std::uint32_t> hard_group_scores(std::span<const std::uint8_t> bits, std::size_t k) {
  if (k == 0 || bits.size() % k != 0) throw ShapeError("hard_group_scores: length is not a multiple of k");
  std::vector<std::uint32_t> out(bits.size() / k, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) out[i / k] += bits[i] ? 1 : 0;
  return out;
}

std::size_t hard_class(std::span<const std::uint32_t> scores) {
  std::size_t best = 0;
  for (std::size_t g = 1; g < scores.size(); ++g)
    if (scores[g] > scores[best]) best = g;
  return best;
}

std::vector<TokenId> hard_classify(const BitLanes& m_out, std::size_t vocab, std::size_t k) {
  if (m_out.width() != vocab * k) throw ShapeError("hard_classify: width is not vocab * k");
  const std::size_t lanes = m_out.lanes();
  std::vector<TokenId> best(lanes, 0);
  std::vector<std::uint32_t> best_count(lanes, 0);
  std::vector<std::uint32_t> count(lanes);
  for (std::size_t g = 0; g < vocab; ++g) {
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      auto row = m_out.row(g * k + i);
      for (std::size_t w = 0; w < row.size(); ++w) {
        for (std::uint64_t bits = row[w]; bits != 0; bits &= bits - 1)
          ++count[w * BitLanes::kWordBits + static_cast<std::size_t>(std::countr_zero(bits))];
      }
    }
    for (std::size_t lane = 0; lane < lanes; ++lane) {
      if (g == 0 || count[lane] > best_count[lane]) {
        best_count[lane] = count[lane];
        best[lane] = static_cast<TokenId>(g);
      }
    }
  }
  return best;
}

BitLanes hard_encode(const CollapsedModel& cm, const TokenRows& src) {
  check_rows(src, cm.config, "hard encode source");
  BitLanes k_state(cm.config.last(Group::kK), src.size());
  for (std::size_t t = 0; t < cm.config.seq_len; ++t) {
    BitLanes h = run_group(cm, Group::kN, cm.embed(column(src, t)));
    k_state = run_group(cm, Group::kK, vconcat_bits({&h, &k_state}));
  }
  return k_state;
}

TokenRows hard_teacher_forced(const CollapsedModel& cm, const TokenRows& src, const TokenRows& tgt_in) {
  check_rows(tgt_in, cm.config, "hard decoder input");
  if (src.size() != tgt_in.size()) throw ShapeError("source and target batch sizes differ");
  const BitLanes context = hard_encode(cm, src);
  BitLanes p_state(cm.config.last(Group::kP), src.size());
  TokenRows out(src.size());
  for (std::size_t t = 0; t < cm.config.seq_len; ++t) {
    BitLanes m = decode_step(cm, context, p_state, column(tgt_in, t));
    auto pred = hard_classify(m, cm.config.vocab_size, cm.config.group_factor);
    for (std::size_t lane = 0; lane < src.size(); ++lane) out[lane].push_back(pred[lane]);
  }
  return out;
}

TokenRows hard_forward_seq(const CollapsedModel& cm, const TokenRows& src, std::size_t max_len) {
  const BitLanes context = hard_encode(cm, src);
  const std::size_t lanes = src.size();
  BitLanes p_state(cm.config.last(Group::kP), lanes);
  std::vector<TokenId> prev(lanes, kBos);
  std::vector<bool> done(lanes, false);
  TokenRows out(lanes);
  for (std::size_t step = 0; step < max_len; ++step) {
    BitLanes m = decode_step(cm, context, p_state, prev);
    prev = hard_classify(m, cm.config.vocab_size, cm.config.group_factor);
    bool all_done = true;
    for (std::size_t lane = 0; lane < lanes; ++lane) {
      if (!done[lane]) {
        out[lane].push_back(prev[lane]);
        done[lane] = prev[lane] == kEos;
      }
      all_done = all_done && done[lane];
    }
    if (all_done) break;
  }
  return out;
}

}  // namespace rdlgn
