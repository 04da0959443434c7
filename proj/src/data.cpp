#include "rdlgn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "rdlgn/error.hpp"

namespace rdlgn {
namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      word.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else {
      flush();
      if (std::isspace(c) == 0) out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& corpus, std::size_t capacity) {
  if (capacity < kSpecials + 1) throw ConfigError("vocabulary capacity must be >= 5");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (const auto& tok : line) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (const auto& [tok, n] : ranked) {
    if (tokens.size() >= capacity) break;
    tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kSpecials) throw DataError("vocabulary is missing the special tokens");
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second)
      throw DataError("duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) { return from_tokens(read_lines(path)); }

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw DataError("token id out of range");
  return tokens_[id];
}

std::vector<TokenId> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(id < tokens_.size() ? tokens_[id] : tokens_[kUnk]);
  }
  return out;
}

std::size_t PreparedPair::target_tokens() const {
  return static_cast<std::size_t>(std::count_if(tgt_out.begin(), tgt_out.end(), [](TokenId t) { return t != kPad; }));
}

std::optional<PreparedPair> prepare_pair(const std::vector<std::string>& src_tokens,
                                         const std::vector<std::string>& tgt_tokens, const Vocab& vocab,
                                         std::size_t seq_len) {
  if (seq_len < 2) throw ConfigError("sequence length must be >= 2");
  if (src_tokens.empty() || tgt_tokens.empty()) return std::nullopt;
  auto fit = [&](const std::vector<std::string>& toks) {
    std::vector<TokenId> ids = vocab.encode(toks);
    if (ids.size() > seq_len - 1) ids.resize(seq_len - 1);
    ids.push_back(kEos);
    ids.resize(seq_len, kPad);
    return ids;
  };
  PreparedPair p;
  p.src = fit(src_tokens);
  p.tgt_out = fit(tgt_tokens);
  p.tgt_in.assign(seq_len, kPad);
  p.tgt_in[0] = kBos;
  std::copy(p.tgt_out.begin(), p.tgt_out.end() - 1, p.tgt_in.begin() + 1);
  return p;
}

std::pair<std::vector<TokenId>, std::vector<TokenId>> make_shift_sample(std::span<const TokenId> tokens,
                                                                        std::size_t shift) {
  const std::size_t S = tokens.size();
  if (shift >= S) throw ConfigError("shift " + std::to_string(shift) + " must be < sequence length " + std::to_string(S));
  std::vector<TokenId> input(tokens.begin(), tokens.end());
  std::vector<TokenId> target(S, kPad);
  std::copy(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(shift),
            target.begin() + static_cast<std::ptrdiff_t>(shift));
  return {std::move(input), std::move(target)};
}

PreparedPair make_shift_pair(std::span<const TokenId> tokens, std::size_t shift) {
  auto [input, target] = make_shift_sample(tokens, shift);
  PreparedPair p;
  p.tgt_in.assign(target.size(), kPad);
  p.tgt_in[0] = kBos;
  std::copy(target.begin(), target.end() - 1, p.tgt_in.begin() + 1);
  p.src = std::move(input);
  p.tgt_out = std::move(target);
  return p;
}

Vocab synthetic_vocab(std::size_t vocab_size) {
  std::vector<std::string> tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (std::size_t i = Vocab::kSpecials; i < vocab_size; ++i) tokens.push_back("t" + std::to_string(i));
  return Vocab::from_tokens(std::move(tokens));
}

std::vector<std::vector<TokenId>> synthetic_stream(std::size_t count, std::size_t seq_len, std::size_t vocab_size,
                                                   Rng& rng) {
  if (vocab_size <= Vocab::kSpecials) throw ConfigError("synthetic vocabulary needs content tokens");
  std::uniform_int_distribution<TokenId> pick(Vocab::kSpecials, static_cast<TokenId>(vocab_size - 1));
  std::vector<std::vector<TokenId>> out(count, std::vector<TokenId>(seq_len));
  for (auto& seq : out)
    for (auto& t : seq) t = pick(rng);
  return out;
}

std::vector<TokenBatch> batch_by_tokens(const std::vector<PreparedPair>& pairs, std::size_t token_budget,
                                        Rng* shuffle) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) std::shuffle(order.begin(), order.end(), *shuffle);
  std::vector<TokenBatch> batches;
  TokenBatch cur;
  for (std::size_t idx : order) {
    const std::size_t n = pairs[idx].target_tokens();
    if (!cur.pairs.empty() && cur.tokens + n > token_budget) {
      batches.push_back(std::move(cur));
      cur = {};
    }
    cur.pairs.push_back(idx);
    cur.tokens += n;
  }
  if (!cur.pairs.empty()) batches.push_back(std::move(cur));
  return batches;
}

BatchRows gather(const std::vector<PreparedPair>& pairs, std::span<const std::size_t> indices) {
  BatchRows rows;
  for (std::size_t i : indices) {
    rows.src.push_back(pairs.at(i).src);
    rows.tgt_in.push_back(pairs[i].tgt_in);
    rows.tgt_out.push_back(pairs[i].tgt_out);
  }
  return rows;
}

TokenRows argmax_predictions(const std::vector<Matrix>& step_probs) {
  if (step_probs.empty()) return {};
  const std::size_t lanes = step_probs.front().cols();
  TokenRows preds(lanes, std::vector<TokenId>(step_probs.size()));
  for (std::size_t t = 0; t < step_probs.size(); ++t) {
    const Matrix& p = step_probs[t];
    for (std::size_t lane = 0; lane < lanes; ++lane) {
      TokenId best = 0;
      for (std::size_t v = 1; v < p.rows(); ++v)
        if (p(v, lane) > p(best, lane)) best = static_cast<TokenId>(v);
      preds[lane][t] = best;
    }
  }
  return preds;
}

double token_accuracy(const TokenRows& preds, const TokenRows& targets) {
  if (preds.size() != targets.size()) throw ShapeError("token_accuracy: batch size mismatch");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (preds[i].size() != targets[i].size()) throw ShapeError("token_accuracy: length mismatch");
    for (std::size_t t = 0; t < targets[i].size(); ++t) {
      if (targets[i][t] == kPad) continue;
      ++total;
      hit += preds[i][t] == targets[i][t] ? 1 : 0;
    }
  }
  if (total == 0) throw DataError("token_accuracy: no non-pad target positions");
  return static_cast<double>(hit) / static_cast<double>(total);
}

double perplexity(const std::vector<Matrix>& step_probs, const TokenRows& targets) {
  double nll = 0.0;
  std::size_t total = 0;
  for (std::size_t lane = 0; lane < targets.size(); ++lane) {
    for (std::size_t t = 0; t < targets[lane].size(); ++t) {
      const TokenId y = targets[lane][t];
      if (y == kPad) continue;
      nll -= std::log(std::max(step_probs.at(t)(y, lane), 1e-12));
      ++total;
    }
  }
  if (total == 0) throw DataError("perplexity: no non-pad target positions");
  return std::exp(nll / static_cast<double>(total));
}

double corpus_bleu(const std::vector<std::vector<TokenId>>& hypotheses,
                   const std::vector<std::vector<TokenId>>& references) {
  if (hypotheses.empty()) throw DataError("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size()) throw ShapeError("corpus_bleu: hypothesis/reference count mismatch");
  constexpr std::size_t kMaxN = 4;
  std::array<double, kMaxN> matches{}, totals{};
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::map<std::vector<TokenId>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[std::vector<TokenId>(r.begin() + i, r.begin() + i + n)];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[std::vector<TokenId>(h.begin() + i, h.begin() + i + n)];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        matches[n - 1] += static_cast<double>(std::min(c, it == ref_counts.end() ? std::size_t{0} : it->second));
        totals[n - 1] += static_cast<double>(c);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  // No unigram overlap means no translation; only higher orders are smoothed.
  if (matches[0] == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxN; ++n) {
    const double p = matches[n] > 0.0 ? matches[n] / totals[n] : 1.0 / (totals[n] + 1.0);
    log_sum += std::log(p);
  }
  const double bp =
      hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return 100.0 * bp * std::exp(log_sum / kMaxN);
}

std::vector<TokenId> strip_special(std::span<const TokenId> ids) {
  std::vector<TokenId> out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(id);
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace rdlgn
