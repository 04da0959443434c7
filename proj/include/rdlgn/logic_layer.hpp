#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "rdlgn/gate.hpp"
#include "rdlgn/matrix.hpp"
#include "rdlgn/rng.hpp"

namespace rdlgn {

/// Initial distribution of the per-neuron gate logits.
struct NodeInit {
  enum class Kind { kGaussian, kResidual };

  Kind kind = Kind::kResidual;
  double sigma = 1.0;  ///< std of the i.i.d. normal part
  double beta = 5.0;   ///< bias added to the pass-through ("output = a") logit for kResidual

  static NodeInit gaussian(double sigma) { return {Kind::kGaussian, sigma, 0.0}; }
  static NodeInit residual(double beta, double sigma = 1.0) { return {Kind::kResidual, sigma, beta}; }

  bool operator==(const NodeInit&) const = default;
};

struct GumbelConfig {
  bool enabled = false;
  double tau = 1.0;

  bool operator==(const GumbelConfig&) const = default;
};

/// Per-neuron mixture weights over the 16 gates, and the resulting expected
/// truth table (corner weights). Computed once per parameter version and
/// shared by every timestep that runs the layer.
struct Mixture {
  std::uint64_t layer_id = 0;
  std::uint64_t version = 0;
  double tau = 1.0;                             // softmax temperature the weights were built with
  std::vector<double> weights;                  // width x 16
  std::vector<std::array<double, 4>> corners;   // width, (00, 01, 10, 11)
};

/// Forward state needed by the backward pass.
struct LayerTape {
  std::shared_ptr<const Mixture> mixture;
  Matrix input;  // in_dim x lanes
};

struct SoftBackward {
  Matrix grad_x;                 // in_dim x lanes
  std::vector<double> grad_z;    // width x 16
};

class CollapsedLogicLayer;

/// Trainable logic layer: fixed random two-input wiring and a softmax
/// mixture over the 16 relaxed gates per neuron.
class SoftLogicLayer {
 public:
  SoftLogicLayer(std::size_t in_dim, std::size_t width, std::uint64_t connectivity_seed,
                 const NodeInit& init, std::uint64_t init_seed);

  /// Construct from explicit parts (checkpoint loading, tests).
  SoftLogicLayer(std::size_t in_dim, std::vector<std::uint32_t> conn_a, std::vector<std::uint32_t> conn_b,
                 std::vector<double> logits);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t width() const { return conn_a_.size(); }
  std::size_t parameter_count() const { return logits_.size(); }
  std::span<const std::uint32_t> conn_a() const { return conn_a_; }
  std::span<const std::uint32_t> conn_b() const { return conn_b_; }
  std::span<const double> logits() const { return logits_; }

  /// Mutable access to the logits; invalidates every tape built before.
  std::span<double> logits_mut() {
    ++version_;
    return logits_;
  }

  std::uint64_t id() const { return id_; }
  std::uint64_t version() const { return version_; }

  /// Softmax mixture of the current logits.
  std::shared_ptr<const Mixture> mixture() const;
  /// softmax((z + G) / tau) with Gumbel noise G drawn from `rng`.
  std::shared_ptr<const Mixture> gumbel_mixture(const GumbelConfig& cfg, Rng& rng) const;
  /// softmax((z + noise) / tau) for explicit noise (width x 16).
  std::shared_ptr<const Mixture> perturbed_mixture(std::span<const double> noise, double tau) const;

  /// y[j] = sum_l w[j][l] * g_l(x[a_j], x[b_j]) for every lane.
  Matrix forward(std::shared_ptr<const Mixture> mix, Matrix x, LayerTape& tape) const;

  /// Reverse pass for one forward call. Adds the gradient with respect to
  /// the corner weights into `corner_grad` (width x 4) and returns the input
  /// gradient.
  Matrix backward(const LayerTape& tape, const Matrix& grad_y, std::span<double> corner_grad) const;

  /// Maps accumulated corner-weight gradients to logit gradients and adds
  /// them into `grad_z` (width x 16).
  void corner_to_logit_grad(const Mixture& mix, std::span<const double> corner_grad,
                            std::span<double> grad_z) const;

  // Single-call conveniences.
  Matrix forward_soft(Matrix x, LayerTape& tape) const { return forward(mixture(), std::move(x), tape); }
  Matrix forward_gumbel(Matrix x, const GumbelConfig& cfg, Rng& rng, LayerTape& tape) const;
  SoftBackward backward_soft(const LayerTape& tape, const Matrix& grad_y) const;

  CollapsedLogicLayer collapse() const;

 private:
  void check_tape(const LayerTape& tape) const;

  std::size_t in_dim_ = 0;
  std::vector<std::uint32_t> conn_a_;
  std::vector<std::uint32_t> conn_b_;
  std::vector<double> logits_;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

/// Discrete layer: one fixed gate per neuron.
class CollapsedLogicLayer {
 public:
  CollapsedLogicLayer() = default;
  CollapsedLogicLayer(std::size_t in_dim, std::vector<std::uint32_t> conn_a, std::vector<std::uint32_t> conn_b,
                      std::vector<GateKind> gates);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t width() const { return gates_.size(); }
  std::span<const std::uint32_t> conn_a() const { return conn_a_; }
  std::span<const std::uint32_t> conn_b() const { return conn_b_; }
  std::span<const GateKind> gates() const { return gates_; }

  /// Scalar reference evaluation on one Boolean input vector (0/1 bytes).
  std::vector<std::uint8_t> forward_hard(std::span<const std::uint8_t> bits) const;

  bool operator==(const CollapsedLogicLayer&) const = default;

 private:
  std::size_t in_dim_ = 0;
  std::vector<std::uint32_t> conn_a_;
  std::vector<std::uint32_t> conn_b_;
  std::vector<GateKind> gates_;
};

/// Index of the largest of 16 logits; ties go to the lowest index.
std::uint8_t argmax_gate(std::span<const double> row);

}  // namespace rdlgn
