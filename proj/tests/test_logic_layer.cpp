#include <doctest.h>

#include <cmath>
#include <random>

#include "rdlgn/error.hpp"
#include "rdlgn/logic_layer.hpp"

using namespace rdlgn;

namespace {

Matrix random_inputs(std::size_t rows, std::size_t lanes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix x(rows, lanes);
  for (double& v : x.values()) v = u(rng);
  return x;
}

// Naive reference: softmax per neuron, then the 16-term weighted gate sum.
Matrix naive_forward(const SoftLogicLayer& layer, const Matrix& x) {
  Matrix y(layer.width(), x.cols());
  for (std::size_t j = 0; j < layer.width(); ++j) {
    const auto z = layer.logits().subspan(j * 16, 16);
    double hi = z[0];
    for (double v : z) hi = std::max(hi, v);
    double w[16], sum = 0.0;
    for (int l = 0; l < 16; ++l) sum += (w[l] = std::exp(z[l] - hi));
    for (std::size_t lane = 0; lane < x.cols(); ++lane) {
      const double a = x(layer.conn_a()[j], lane), b = x(layer.conn_b()[j], lane);
      double acc = 0.0;
      for (int l = 0; l < 16; ++l) acc += w[l] / sum * relaxed_eval(GateKind(static_cast<std::uint8_t>(l)), a, b);
      y(j, lane) = acc;
    }
  }
  return y;
}

double weighted_sum(const Matrix& y, const Matrix& gy) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.values().size(); ++i) s += y.values()[i] * gy.values()[i];
  return s;
}

}  // namespace

TEST_SUITE("logic_layer") {
  TEST_CASE("forward matches the naive 16-gate loop") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SoftLogicLayer layer(13, 21, seed, NodeInit::gaussian(2.0), seed + 100);
      const Matrix x = random_inputs(13, 7, seed);
      LayerTape tape;
      const Matrix y = layer.forward_soft(x, tape);
      const Matrix ref = naive_forward(layer, x);
      for (std::size_t i = 0; i < y.values().size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-13));
    }
  }

  TEST_CASE("connectivity never wires a neuron to the same input twice") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      SoftLogicLayer layer(2 + seed % 5, 64, seed, NodeInit{}, seed);
      for (std::size_t j = 0; j < layer.width(); ++j) {
        CHECK(layer.conn_a()[j] != layer.conn_b()[j]);
        CHECK(layer.conn_a()[j] < layer.in_dim());
        CHECK(layer.conn_b()[j] < layer.in_dim());
      }
    }
    CHECK_THROWS_AS(SoftLogicLayer(1, 4, 0, NodeInit{}, 0), ConfigError);
  }

  TEST_CASE("same seeds give identical layers") {
    SoftLogicLayer a(10, 30, 7, NodeInit{}, 8), b(10, 30, 7, NodeInit{}, 8);
    CHECK(std::equal(a.conn_a().begin(), a.conn_a().end(), b.conn_a().begin()));
    CHECK(std::equal(a.logits().begin(), a.logits().end(), b.logits().begin()));
  }

  TEST_CASE("residual init favours the pass-through gate") {
    SoftLogicLayer layer(10, 200, 1, NodeInit::residual(5.0, 1.0), 2);
    const auto col = layer.collapse();
    std::size_t pass = 0;
    for (GateKind g : col.gates()) pass += g == gates::kA ? 1 : 0;
    CHECK(pass > 190);
  }

  TEST_CASE("outputs stay in [0, 1] for any logits") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SoftLogicLayer layer(8, 40, seed, NodeInit::gaussian(20.0), seed);
      LayerTape tape;
      const Matrix y = layer.forward_soft(random_inputs(8, 16, seed), tape);
      for (double v : y.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  TEST_CASE("input and logit gradients match central differences") {
    SoftLogicLayer layer(6, 9, 3, NodeInit::gaussian(1.0), 4);
    Matrix x = random_inputs(6, 5, 9);
    for (double& v : x.values()) v = 0.1 + 0.8 * v;  // keep x +- h inside [0, 1]
    const Matrix gy = random_inputs(9, 5, 10);
    LayerTape tape;
    layer.forward_soft(x, tape);
    const SoftBackward sb = layer.backward_soft(tape, gy);
    auto loss = [&](const Matrix& xi) {
      LayerTape t;
      return weighted_sum(layer.forward_soft(xi, t), gy);
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.values().size(); ++i) {
      Matrix up = x, down = x;
      up.values()[i] += h;
      down.values()[i] -= h;
      CHECK(sb.grad_x.values()[i] == doctest::Approx((loss(up) - loss(down)) / (2 * h)).epsilon(1e-7));
    }
    for (std::size_t i = 0; i < layer.logits().size(); ++i) {
      const double saved = layer.logits()[i];
      layer.logits_mut()[i] = saved + h;
      const double up = loss(x);
      layer.logits_mut()[i] = saved - h;
      const double down = loss(x);
      layer.logits_mut()[i] = saved;
      CHECK(sb.grad_z[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-7));
    }
  }

  TEST_CASE("logit gradient equals p_i (f_i - y) / tau in closed form") {
    SoftLogicLayer layer(5, 4, 1, NodeInit::gaussian(1.5), 2);
    const Matrix x = random_inputs(5, 1, 3);
    Matrix gy(4, 1, 1.0);
    for (double tau : {1.0, 0.5, 3.0}) {
      std::vector<double> zero(layer.logits().size(), 0.0);
      LayerTape tape;
      layer.forward(layer.perturbed_mixture(zero, tau), x, tape);
      const SoftBackward sb = layer.backward_soft(tape, gy);
      const Mixture& mix = *tape.mixture;
      for (std::size_t j = 0; j < 4; ++j) {
        const double a = x(layer.conn_a()[j], 0), b = x(layer.conn_b()[j], 0);
        double y = 0.0;
        for (int l = 0; l < 16; ++l) y += mix.weights[j * 16 + l] * relaxed_eval(GateKind(static_cast<std::uint8_t>(l)), a, b);
        for (int i = 0; i < 16; ++i) {
          const double f = relaxed_eval(GateKind(static_cast<std::uint8_t>(i)), a, b);
          CHECK(std::abs(sb.grad_z[j * 16 + i] - mix.weights[j * 16 + i] * (f - y) / tau) < 1e-10);
        }
      }
    }
  }

  TEST_CASE("gumbel noise is drawn from the given stream and is reproducible") {
    SoftLogicLayer layer(6, 10, 1, NodeInit{}, 2);
    GumbelConfig cfg{true, 0.7};
    Rng r1(5), r2(5);
    const auto m1 = layer.gumbel_mixture(cfg, r1);
    const auto m2 = layer.gumbel_mixture(cfg, r2);
    CHECK(m1->weights == m2->weights);
    CHECK(m1->weights != layer.mixture()->weights);
    for (std::size_t j = 0; j < 10; ++j) {
      double s = 0.0;
      for (int l = 0; l < 16; ++l) s += m1->weights[j * 16 + l];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("a tape goes stale once the logits change") {
    SoftLogicLayer layer(6, 5, 1, NodeInit{}, 2);
    LayerTape tape;
    layer.forward_soft(random_inputs(6, 3, 1), tape);
    const Matrix gy(5, 3, 1.0);
    CHECK_NOTHROW(layer.backward_soft(tape, gy));
    layer.logits_mut()[0] += 1.0;
    CHECK_THROWS_AS(layer.backward_soft(tape, gy), ShapeError);
    SoftLogicLayer other(6, 5, 1, NodeInit{}, 2);
    CHECK_THROWS_AS(other.backward_soft(tape, gy), ShapeError);
  }

  TEST_CASE("argmax ties go to the lowest gate index") {
    std::vector<double> row(16, 0.0);
    CHECK(argmax_gate(row) == 0);
    row[5] = row[9] = 2.0;
    CHECK(argmax_gate(row) == 5);
  }

  TEST_CASE("collapse of one-hot logits keeps exactly those gates") {
    std::vector<std::uint32_t> a = {0, 1, 2}, b = {1, 2, 0};
    std::vector<double> z(48, 0.0);
    const int chosen[3] = {8, 14, 6};
    for (int j = 0; j < 3; ++j) z[j * 16 + chosen[j]] = 30.0;
    SoftLogicLayer layer(3, a, b, z);
    const CollapsedLogicLayer c = layer.collapse();
    for (int j = 0; j < 3; ++j) CHECK(c.gates()[j].index() == chosen[j]);
    CHECK(c == layer.collapse());
    const auto out = c.forward_hard(std::vector<std::uint8_t>{1, 1, 0});
    CHECK(out == std::vector<std::uint8_t>{1, 1, 1});  // AND(1,1), OR(1,0), XOR(0,1)
  }
}
