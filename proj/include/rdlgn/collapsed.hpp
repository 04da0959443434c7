#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "rdlgn/logic_layer.hpp"
#include "rdlgn/matrix.hpp"
#include "rdlgn/model.hpp"

namespace rdlgn {

/// Packed bit matrix: one row per feature, lanes packed LSB-first into
/// 64-bit words. Bits past `lanes` in the last word of a row are always 0.
class BitLanes {
 public:
  static constexpr std::size_t kWordBits = 64;

  BitLanes() = default;
  BitLanes(std::size_t width, std::size_t lanes);

  std::size_t width() const { return width_; }
  std::size_t lanes() const { return lanes_; }
  std::size_t words_per_row() const { return words_; }
  /// Valid-lane mask of the last word in every row.
  std::uint64_t tail_mask() const { return tail_; }

  std::span<std::uint64_t> row(std::size_t r) { return {data_.data() + r * words_, words_}; }
  std::span<const std::uint64_t> row(std::size_t r) const { return {data_.data() + r * words_, words_}; }

  bool get(std::size_t r, std::size_t lane) const { return (row(r)[lane / kWordBits] >> (lane % kWordBits)) & 1U; }
  void set(std::size_t r, std::size_t lane, bool v);

  /// Entries of `m` must be exactly 0 or 1.
  static BitLanes from_matrix(const Matrix& m);
  Matrix to_matrix() const;

  bool operator==(const BitLanes&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t lanes_ = 0;
  std::size_t words_ = 0;
  std::uint64_t tail_ = 0;
  std::vector<std::uint64_t> data_;
};

/// Stack bit matrices with equal lane counts vertically.
BitLanes vconcat_bits(std::initializer_list<const BitLanes*> parts);

/// Word-parallel evaluation of one collapsed layer over every lane.
BitLanes eval_bitpacked(const CollapsedLogicLayer& layer, const BitLanes& x);

/// Discrete model: Heaviside embeddings and one gate per neuron.
struct CollapsedModel {
  ModelConfig config;
  std::vector<std::uint8_t> embedding;  // V x d, row-major, 0/1
  std::array<std::vector<CollapsedLogicLayer>, 5> groups;

  const std::vector<CollapsedLogicLayer>& layers(Group g) const { return groups[static_cast<int>(g)]; }
  /// Bits of `ids`, d x lanes.
  BitLanes embed(std::span<const TokenId> ids) const;
  /// Throws ShapeError when the parts disagree with the config.
  void validate() const;

  bool operator==(const CollapsedModel&) const = default;
};

/// Argmax gate per neuron and E >= 0 per embedding entry.
CollapsedModel collapse_model(const Seq2SeqModel& model);

/// Popcount of each consecutive group of k bits.
std::vector<std::uint32_t> hard_group_scores(std::span<const std::uint8_t> bits, std::size_t k);
/// Argmax with the lowest index winning ties.
std::size_t hard_class(std::span<const std::uint32_t> scores);

/// Per-lane argmax token of the popcount GroupSum of the last M layer.
std::vector<TokenId> hard_classify(const BitLanes& m_out, std::size_t vocab, std::size_t k);

/// Encoder over S steps from an all-zero state; returns c (last(K) x lanes).
BitLanes hard_encode(const CollapsedModel& cm, const TokenRows& src);

/// Teacher-forced predictions, lane-major [lane][t].
TokenRows hard_teacher_forced(const CollapsedModel& cm, const TokenRows& src, const TokenRows& tgt_in);

/// Greedy decoding from BOS; each lane stops at EOS or max_len.
TokenRows hard_forward_seq(const CollapsedModel& cm, const TokenRows& src, std::size_t max_len);

}  // namespace rdlgn
