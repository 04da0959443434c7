#include "rdlgn/logic_layer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "rdlgn/error.hpp"

namespace rdlgn {
namespace {

std::uint64_t next_layer_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

constexpr std::array<std::array<double, 4>, 16> make_tables() {
  std::array<std::array<double, 4>, 16> t{};
  for (int l = 0; l < 16; ++l) t[l] = corner_table(GateKind(static_cast<std::uint8_t>(l)));
  return t;
}
constexpr auto kTables = make_tables();

// Softmax of (row + noise) / tau into out; fills the expected truth table.
void mix_row(std::span<const double> row, const double* noise, double tau, std::span<double> out,
             std::array<double, 4>& corner) {
  double scaled[16];
  double hi = -INFINITY;
  for (int l = 0; l < 16; ++l) {
    scaled[l] = (row[l] + (noise ? noise[l] : 0.0)) / tau;
    hi = std::max(hi, scaled[l]);
  }
  double sum = 0.0;
  for (int l = 0; l < 16; ++l) {
    out[l] = std::exp(scaled[l] - hi);
    sum += out[l];
  }
  corner = {0.0, 0.0, 0.0, 0.0};
  for (int l = 0; l < 16; ++l) {
    out[l] /= sum;
    for (int c = 0; c < 4; ++c) corner[c] += out[l] * kTables[l][c];
  }
}

}  // namespace

SoftLogicLayer::SoftLogicLayer(std::size_t in_dim, std::size_t width, std::uint64_t connectivity_seed,
                               const NodeInit& init, std::uint64_t init_seed)
    : in_dim_(in_dim), id_(next_layer_id()) {
  if (in_dim < 2) throw ConfigError("logic layer needs in_dim >= 2, got " + std::to_string(in_dim));
  if (width < 1) throw ConfigError("logic layer needs width >= 1");
  if (init.sigma < 0.0 || (init.kind == NodeInit::Kind::kResidual && init.beta <= 0.0))
    throw ConfigError("node init: sigma must be >= 0 and beta > 0");

  Rng conn_rng(connectivity_seed);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(in_dim - 1));
  conn_a_.resize(width);
  conn_b_.resize(width);
  for (std::size_t j = 0; j < width; ++j) {
    conn_a_[j] = pick(conn_rng);
    do {
      conn_b_[j] = pick(conn_rng);
    } while (conn_b_[j] == conn_a_[j]);
  }

  Rng init_rng(init_seed);
  logits_.assign(width * 16, 0.0);
  if (init.sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, init.sigma);
    for (double& z : logits_) z = noise(init_rng);
  }
  if (init.kind == NodeInit::Kind::kResidual) {
    for (std::size_t j = 0; j < width; ++j) logits_[j * 16 + gates::kA.index()] += init.beta;
  }
}

SoftLogicLayer::SoftLogicLayer(std::size_t in_dim, std::vector<std::uint32_t> conn_a,
                               std::vector<std::uint32_t> conn_b, std::vector<double> logits)
    : in_dim_(in_dim), conn_a_(std::move(conn_a)), conn_b_(std::move(conn_b)), logits_(std::move(logits)),
      id_(next_layer_id()) {
  if (in_dim_ < 2) throw ConfigError("logic layer needs in_dim >= 2");
  if (conn_a_.empty() || conn_a_.size() != conn_b_.size() || logits_.size() != conn_a_.size() * 16)
    throw ShapeError("logic layer parts have inconsistent sizes");
  for (std::size_t j = 0; j < conn_a_.size(); ++j) {
    if (conn_a_[j] >= in_dim_ || conn_b_[j] >= in_dim_ || conn_a_[j] == conn_b_[j])
      throw ShapeError("invalid connectivity at neuron " + std::to_string(j));
  }
}

std::shared_ptr<const Mixture> SoftLogicLayer::mixture() const { return perturbed_mixture({}, 1.0); }

std::shared_ptr<const Mixture> SoftLogicLayer::gumbel_mixture(const GumbelConfig& cfg, Rng& rng) const {
  if (!(cfg.tau > 0.0)) throw ConfigError("gumbel tau must be > 0");
  std::vector<double> noise(logits_.size());
  for (double& g : noise) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    g = -std::log(-std::log(u));
  }
  return perturbed_mixture(noise, cfg.tau);
}

std::shared_ptr<const Mixture> SoftLogicLayer::perturbed_mixture(std::span<const double> noise, double tau) const {
  if (!(tau > 0.0)) throw ConfigError("mixture temperature must be > 0");
  if (!noise.empty() && noise.size() != logits_.size()) throw ShapeError("gumbel noise size mismatch");
  auto mix = std::make_shared<Mixture>();
  mix->layer_id = id_;
  mix->version = version_;
  mix->tau = tau;
  mix->weights.resize(logits_.size());
  mix->corners.resize(width());
  for (std::size_t j = 0; j < width(); ++j) {
    mix_row(std::span<const double>(logits_).subspan(j * 16, 16), noise.empty() ? nullptr : noise.data() + j * 16,
            tau, std::span<double>(mix->weights).subspan(j * 16, 16), mix->corners[j]);
  }
  return mix;
}

Matrix SoftLogicLayer::forward(std::shared_ptr<const Mixture> mix, Matrix x, LayerTape& tape) const {
  if (x.rows() != in_dim_)
    throw ShapeError("logic layer expects " + std::to_string(in_dim_) + " inputs, got " + std::to_string(x.rows()));
  if (!mix || mix->layer_id != id_ || mix->corners.size() != width()) throw ShapeError("mixture from another layer");
  const std::size_t lanes = x.cols();
  Matrix y(width(), lanes);
  for (std::size_t j = 0; j < width(); ++j) {
    const auto& w = mix->corners[j];
    const double c0 = w[0];
    const double c1 = w[2] - w[0];
    const double c2 = w[1] - w[0];
    const double c3 = w[3] - w[2] - w[1] + w[0];
    const double* a = x.row(conn_a_[j]).data();
    const double* b = x.row(conn_b_[j]).data();
    double* out = y.row(j).data();
    for (std::size_t l = 0; l < lanes; ++l) {
      const double v = c0 + c1 * a[l] + c2 * b[l] + c3 * a[l] * b[l];
      out[l] = std::clamp(v, 0.0, 1.0);
    }
  }
  tape.mixture = std::move(mix);
  tape.input = std::move(x);
  return y;
}

void SoftLogicLayer::check_tape(const LayerTape& tape) const {
  if (!tape.mixture || tape.mixture->layer_id != id_) throw ShapeError("tape was produced by a different layer");
  if (tape.mixture->version != version_) throw ShapeError("stale tape: logits changed since the forward pass");
}

Matrix SoftLogicLayer::backward(const LayerTape& tape, const Matrix& grad_y, std::span<double> corner_grad) const {
  check_tape(tape);
  const Matrix& x = tape.input;
  const std::size_t lanes = x.cols();
  if (grad_y.rows() != width() || grad_y.cols() != lanes) throw ShapeError("grad_y shape mismatch");
  if (corner_grad.size() != width() * 4) throw ShapeError("corner_grad size mismatch");
  Matrix grad_x(in_dim_, lanes);
  for (std::size_t j = 0; j < width(); ++j) {
    const auto& w = tape.mixture->corners[j];
    const double c1 = w[2] - w[0];
    const double c2 = w[1] - w[0];
    const double c3 = w[3] - w[2] - w[1] + w[0];
    const double* __restrict a = x.row(conn_a_[j]).data();
    const double* __restrict b = x.row(conn_b_[j]).data();
    const double* __restrict gy = grad_y.row(j).data();
    double* __restrict ga = grad_x.row(conn_a_[j]).data();
    double* __restrict gb = grad_x.row(conn_b_[j]).data();
    double d0 = 0.0, d1 = 0.0, d2 = 0.0, d3 = 0.0;
    for (std::size_t l = 0; l < lanes; ++l) {
      const double g = gy[l];
      d0 += g;
      d1 += g * a[l];
      d2 += g * b[l];
      d3 += g * a[l] * b[l];
      ga[l] += g * (c1 + c3 * b[l]);
      gb[l] += g * (c2 + c3 * a[l]);
    }
    double* cg = corner_grad.data() + j * 4;
    cg[0] += d0 - d1 - d2 + d3;
    cg[1] += d2 - d3;
    cg[2] += d1 - d3;
    cg[3] += d3;
  }
  return grad_x;
}

void SoftLogicLayer::corner_to_logit_grad(const Mixture& mix, std::span<const double> corner_grad,
                                          std::span<double> grad_z) const {
  if (corner_grad.size() != width() * 4 || grad_z.size() != width() * 16)
    throw ShapeError("corner_to_logit_grad size mismatch");
  const double inv_tau = 1.0 / mix.tau;
  for (std::size_t j = 0; j < width(); ++j) {
    const double* cg = corner_grad.data() + j * 4;
    const auto& w = mix.corners[j];
    const double mean = cg[0] * w[0] + cg[1] * w[1] + cg[2] * w[2] + cg[3] * w[3];
    const double* p = mix.weights.data() + j * 16;
    double* gz = grad_z.data() + j * 16;
    for (int l = 0; l < 16; ++l) {
      const auto& t = kTables[l];
      const double f = cg[0] * t[0] + cg[1] * t[1] + cg[2] * t[2] + cg[3] * t[3];
      gz[l] += inv_tau * p[l] * (f - mean);
    }
  }
}

Matrix SoftLogicLayer::forward_gumbel(Matrix x, const GumbelConfig& cfg, Rng& rng, LayerTape& tape) const {
  if (!cfg.enabled) throw ConfigError("forward_gumbel called with gumbel disabled");
  return forward(gumbel_mixture(cfg, rng), std::move(x), tape);
}

SoftBackward SoftLogicLayer::backward_soft(const LayerTape& tape, const Matrix& grad_y) const {
  std::vector<double> corner_grad(width() * 4, 0.0);
  SoftBackward out;
  out.grad_x = backward(tape, grad_y, corner_grad);
  out.grad_z.assign(width() * 16, 0.0);
  corner_to_logit_grad(*tape.mixture, corner_grad, out.grad_z);
  return out;
}

std::uint8_t argmax_gate(std::span<const double> row) {
  std::uint8_t best = 0;
  for (std::uint8_t l = 1; l < 16; ++l) {
    if (row[l] > row[best]) best = l;
  }
  return best;
}

CollapsedLogicLayer SoftLogicLayer::collapse() const {
  std::vector<GateKind> gates(width());
  for (std::size_t j = 0; j < width(); ++j) {
    gates[j] = GateKind(argmax_gate(std::span<const double>(logits_).subspan(j * 16, 16)));
  }
  return CollapsedLogicLayer(in_dim_, conn_a_, conn_b_, std::move(gates));
}

CollapsedLogicLayer::CollapsedLogicLayer(std::size_t in_dim, std::vector<std::uint32_t> conn_a,
                                         std::vector<std::uint32_t> conn_b, std::vector<GateKind> gates)
    : in_dim_(in_dim), conn_a_(std::move(conn_a)), conn_b_(std::move(conn_b)), gates_(std::move(gates)) {
  if (conn_a_.size() != gates_.size() || conn_b_.size() != gates_.size())
    throw ShapeError("collapsed layer parts have inconsistent sizes");
  for (std::size_t j = 0; j < gates_.size(); ++j) {
    if (conn_a_[j] >= in_dim_ || conn_b_[j] >= in_dim_) throw ShapeError("collapsed connectivity out of range");
  }
}

std::vector<std::uint8_t> CollapsedLogicLayer::forward_hard(std::span<const std::uint8_t> bits) const {
  if (bits.size() != in_dim_) throw ShapeError("collapsed layer input size mismatch");
  std::vector<std::uint8_t> out(width());
  for (std::size_t j = 0; j < width(); ++j) {
    out[j] = discrete_eval(gates_[j], bits[conn_a_[j]] != 0, bits[conn_b_[j]] != 0) ? 1 : 0;
  }
  return out;
}

}  // namespace rdlgn
