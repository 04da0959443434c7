#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "rdlgn/logic_layer.hpp"
#include "rdlgn/matrix.hpp"
#include "rdlgn/rng.hpp"

namespace rdlgn {

using TokenId = std::uint32_t;
/// One token sequence per lane.
using TokenRows = std::vector<std::vector<TokenId>>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;

/// The five logic-layer groups, in checkpoint order.
enum class Group : std::uint8_t { kN = 0, kK = 1, kL = 2, kP = 3, kM = 4 };
inline constexpr std::array<Group, 5> kAllGroups = {Group::kN, Group::kK, Group::kL, Group::kP, Group::kM};
std::string_view group_name(Group g);

/// Initial recurrent state (k_0 of the encoder, p_0 of the decoder).
struct HiddenInit {
  enum class Kind { kGaussian, kZero, kOne, kUniform };
  Kind kind = Kind::kGaussian;
  double mean = 0.5;   // kGaussian only; samples are clamped to [0, 1]
  double stddev = 0.25;

  bool operator==(const HiddenInit&) const = default;
};

/// Drop probability after the embedding and after each group's output.
struct DropoutConfig {
  double embedding = 0.0;
  std::array<double, 5> group = {0.0, 0.0, 0.0, 0.0, 0.0};

  bool operator==(const DropoutConfig&) const = default;
};

struct Seeds {
  std::uint64_t connectivity = 1;
  std::uint64_t init = 2;
  std::uint64_t hidden_noise = 3;
  std::uint64_t gumbel = 4;
  std::uint64_t data = 5;
  std::uint64_t dropout = 6;

  bool operator==(const Seeds&) const = default;
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t emb_dim = 0;
  std::size_t seq_len = 0;
  std::array<std::vector<std::size_t>, 5> sizes;  // indexed by Group
  std::size_t group_factor = 1;
  double groupsum_tau = 1.0;
  NodeInit node_init;
  HiddenInit hidden_init;
  DropoutConfig dropout;
  GumbelConfig gumbel;
  double embedding_init_std = 1.0;
  Seeds seeds;

  const std::vector<std::size_t>& group_sizes(Group g) const { return sizes[static_cast<int>(g)]; }
  std::size_t last(Group g) const { return group_sizes(g).back(); }

  /// Input width of the first layer of a group.
  std::size_t group_input_dim(Group g) const;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// Reference-size preset: d=1024, V=16000, S=16, k=30.
  static ModelConfig base_preset();

  bool operator==(const ModelConfig&) const = default;
};

/// Parameter and size bookkeeping derived from a config alone.
struct Accounting {
  std::array<std::size_t, 5> group_logits{};  // 16 * sum(widths) per group
  std::size_t embedding_params = 0;           // V * d
  std::size_t trainable_params = 0;
  std::size_t collapsed_gates = 0;            // sum of all widths
  std::size_t embedding_bits = 0;             // V * d
};
Accounting accounting(const ModelConfig& cfg);

/// out[g] = (1 / tau) * sum of the k entries of group g. Throws if the
/// length is not divisible by k.
std::vector<double> group_sum(std::span<const double> v, std::size_t k, double tau);

/// Mean of x(1 - x) over all entries.
double embedding_reg_loss(const Matrix& x);

struct GroupTape {
  std::vector<LayerTape> layers;
  Matrix dropout_mask;  // empty when dropout is inactive
};

struct EmbedTape {
  std::vector<TokenId> ids;  // one per lane
  Matrix relaxed;            // sigmoid(E) before dropout, d x lanes
  Matrix dropout_mask;
};

/// Everything the reverse pass needs from one teacher-forced forward call.
struct ForwardTape {
  std::uint64_t model_id = 0;
  std::size_t lanes = 0;
  std::vector<std::shared_ptr<const Mixture>> mixtures;  // one per layer, global order
  std::vector<EmbedTape> src_embed, tgt_embed;           // per timestep
  std::vector<GroupTape> n, k, l, p, m;                  // per timestep
};

struct ForwardOptions {
  bool train = false;           // enables dropout and (if configured) Gumbel sampling
  Rng* hidden_rng = nullptr;    // required unless hidden init is deterministic
  Rng* dropout_rng = nullptr;
  Rng* gumbel_rng = nullptr;
};

struct ForwardResult {
  Matrix context;                 // last(K) x lanes
  std::vector<Matrix> scores;     // per step, V x lanes (GroupSum output)
  std::vector<Matrix> probs;      // per step, V x lanes
  double emb_reg = 0.0;           // embedding regularizer over source and target
  ForwardTape tape;
};

/// Parameter gradients, laid out like Seq2SeqModel::parameters().
struct Gradients {
  std::vector<double> embedding;                           // V x d
  std::array<std::vector<std::vector<double>>, 5> logits;  // [group][layer] width x 16

  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
};

class Seq2SeqModel {
 public:
  explicit Seq2SeqModel(ModelConfig cfg);
  /// Assemble from explicit parts (checkpoint loading).
  Seq2SeqModel(ModelConfig cfg, Matrix embedding, std::array<std::vector<SoftLogicLayer>, 5> groups);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t id() const { return id_; }

  const Matrix& embedding() const { return embedding_; }
  Matrix& embedding_mut() { return embedding_; }
  const std::vector<SoftLogicLayer>& layers(Group g) const { return groups_[static_cast<int>(g)]; }
  std::vector<SoftLogicLayer>& layers_mut(Group g) { return groups_[static_cast<int>(g)]; }

  /// Trainable tensors: embedding first, then every layer's logits in
  /// N, K, L, P, M order. Taking mutable views invalidates earlier tapes.
  std::vector<std::span<double>> parameters();
  Gradients zero_gradients() const;
  std::size_t parameter_count() const;

  /// sigmoid of embedding rows, d x lanes.
  Matrix embed_relax(std::span<const TokenId> ids) const;
  /// Heaviside of embedding rows (bit = E >= 0), d x lanes of 0/1.
  Matrix embed_hard(std::span<const TokenId> ids) const;

  /// Encoder pass over S timesteps; returns c = k_S (last(K) x lanes).
  Matrix encode(const TokenRows& src, const ForwardOptions& opts, ForwardTape* tape = nullptr) const;

  /// Full teacher-forced pass. `tgt_in` begins with BOS.
  ForwardResult forward(const TokenRows& src, const TokenRows& tgt_in, const ForwardOptions& opts) const;

  /// Reverse pass. `grad_scores[t]` is dLoss/dscores at step t; `emb_reg_weight`
  /// scales the embedding regularizer that forward() reported.
  Gradients backward(const ForwardTape& tape, const std::vector<Matrix>& grad_scores,
                     double emb_reg_weight) const;

  /// Greedy decoding from BOS; each lane stops at EOS or max_len.
  TokenRows generate(const TokenRows& src, std::size_t max_len, Rng& hidden_rng) const;

 private:
  std::vector<std::shared_ptr<const Mixture>> build_mixtures(const ForwardOptions& opts) const;
  Matrix run_group(Group g, std::size_t mix_offset, const std::vector<std::shared_ptr<const Mixture>>& mixes,
                   Matrix x, const ForwardOptions& opts, GroupTape* tape) const;
  Matrix initial_state(std::size_t width, std::size_t lanes, const ForwardOptions& opts) const;
  Matrix apply_dropout(Matrix x, double p, const ForwardOptions& opts, Matrix* mask_out) const;
  std::size_t mixture_offset(Group g) const;
  Matrix backprop_group(Group g, const GroupTape& tape, Matrix grad,
                        std::vector<std::vector<double>>& corner_grads) const;
  void backprop_embedding(const EmbedTape& tape, Matrix grad, double reg_scale, Gradients& grads) const;

  ModelConfig cfg_;
  Matrix embedding_;  // V x d
  std::array<std::vector<SoftLogicLayer>, 5> groups_;
  std::uint64_t id_ = 0;
};

}  // namespace rdlgn
