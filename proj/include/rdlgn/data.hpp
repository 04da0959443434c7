#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rdlgn/matrix.hpp"
#include "rdlgn/model.hpp"
#include "rdlgn/rng.hpp"

namespace rdlgn {

/// Lowercased word-level split: runs of letters/digits form one token, every
/// other non-space character is a token of its own. Bytes >= 0x80 count as
/// letters so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

/// Shared vocabulary with PAD=0, BOS=1, EOS=2, UNK=3.
class Vocab {
 public:
  static constexpr std::size_t kSpecials = 4;

  /// Frequency-ranked (ties broken lexicographically), top capacity - 4 kept.
  static Vocab build(const std::vector<std::vector<std::string>>& corpus, std::size_t capacity);
  /// Tokens in id order, specials first.
  static Vocab from_tokens(std::vector<std::string> tokens);

  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;
  /// Drops PAD/BOS and stops at EOS.
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Fixed-length training example. tgt_in is tgt_out shifted right behind BOS.
struct PreparedPair {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt_in;
  std::vector<TokenId> tgt_out;

  std::size_t target_tokens() const;  // non-pad positions of tgt_out
  bool operator==(const PreparedPair&) const = default;
};

/// Encode, keep at most S-1 tokens, append EOS, right-pad to S. Returns
/// nullopt for an empty source or target.
std::optional<PreparedPair> prepare_pair(const std::vector<std::string>& src_tokens,
                                         const std::vector<std::string>& tgt_tokens, const Vocab& vocab,
                                         std::size_t seq_len);

/// Shift-task example: target = f PADs then input[0 .. S-f-1].
std::pair<std::vector<TokenId>, std::vector<TokenId>> make_shift_sample(std::span<const TokenId> tokens,
                                                                        std::size_t shift);

/// Pair for the shift task with teacher-forcing input built from the target.
PreparedPair make_shift_pair(std::span<const TokenId> tokens, std::size_t shift);

/// Vocabulary of `vocab_size` ids whose content tokens are named t4, t5, ...
Vocab synthetic_vocab(std::size_t vocab_size);

/// `count` sequences of `seq_len` content tokens drawn uniformly from [4, vocab_size).
std::vector<std::vector<TokenId>> synthetic_stream(std::size_t count, std::size_t seq_len, std::size_t vocab_size,
                                                   Rng& rng);

/// Indices into the pair list, grouped so each batch holds at most
/// `token_budget` non-pad target tokens.
struct TokenBatch {
  std::vector<std::size_t> pairs;
  std::size_t tokens = 0;
};

/// Greedy fill in the given order (shuffled first when `shuffle` is set).
std::vector<TokenBatch> batch_by_tokens(const std::vector<PreparedPair>& pairs, std::size_t token_budget,
                                        Rng* shuffle = nullptr);

/// Collect the batch as lane-major token rows.
struct BatchRows {
  TokenRows src, tgt_in, tgt_out;
};
BatchRows gather(const std::vector<PreparedPair>& pairs, std::span<const std::size_t> indices);

/// Argmax per step and lane of a V x lanes probability sequence.
TokenRows argmax_predictions(const std::vector<Matrix>& step_probs);

/// Fraction of non-pad target positions predicted exactly.
double token_accuracy(const TokenRows& preds, const TokenRows& targets);

/// exp of the mean negative log-likelihood over non-pad target positions.
double perplexity(const std::vector<Matrix>& step_probs, const TokenRows& targets);

/// Corpus BLEU in [0, 100]: clipped n-gram precisions for n = 1..4,
/// geometric mean, brevity penalty. Zero unigram matches give 0; a zero
/// match count at n >= 2 counts as 1 / (total + 1).
double corpus_bleu(const std::vector<std::vector<TokenId>>& hypotheses,
                   const std::vector<std::vector<TokenId>>& references);

/// Strip trailing EOS/PAD and everything after the first EOS.
std::vector<TokenId> strip_special(std::span<const TokenId> ids);

/// Read a UTF-8 text file, one sentence per line.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace rdlgn
