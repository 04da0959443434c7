#include <doctest.h>

#include <cmath>
#include <random>

#include "rdlgn/error.hpp"
#include "rdlgn/training.hpp"

using namespace rdlgn;

namespace {

// V x 1 probability column per step.
std::vector<Matrix> one_lane(const std::vector<std::vector<double>>& steps) {
  std::vector<Matrix> out;
  for (const auto& p : steps) {
    Matrix m(p.size(), 1);
    for (std::size_t i = 0; i < p.size(); ++i) m(i, 0) = p[i];
    out.push_back(m);
  }
  return out;
}

// Textbook Adam(W) on one scalar, written out longhand.
struct ScalarAdamW {
  double lr, b1, b2, eps, wd;
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return theta - lr * mhat / (std::sqrt(vhat) + eps) - lr * wd * theta;
  }
};

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("smoothed cross-entropy reference values") {
    // Id 0 is PAD here, so the 0.7 mass sits on class 1.
    const auto p = one_lane({{0.1, 0.7, 0.1, 0.1}});
    const LossResult r = smoothed_cross_entropy(p, TokenRows{{1}}, 0.1);
    CHECK(r.loss == doctest::Approx(-(0.925 * std::log(0.7) + 3 * 0.025 * std::log(0.1))));
    CHECK(r.loss == doctest::Approx(0.5026).epsilon(1e-4));
    CHECK(r.tokens == 1);

    const auto u = one_lane({{0.25, 0.25, 0.25, 0.25}});
    CHECK(smoothed_cross_entropy(u, TokenRows{{2}}, 0.0).loss == doctest::Approx(std::log(4.0)));
    const auto sure = one_lane({{0.0, 1.0, 0.0, 0.0}});
    CHECK(smoothed_cross_entropy(sure, TokenRows{{1}}, 0.0).loss == doctest::Approx(0.0));
  }

  TEST_CASE("alpha = 0 equals plain cross-entropy and pads are skipped") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Matrix> probs;
      const std::size_t V = 6, lanes = 3, S = 4;
      for (std::size_t t = 0; t < S; ++t) {
        Matrix m(V, lanes);
        for (std::size_t l = 0; l < lanes; ++l) {
          double s = 0;
          for (std::size_t i = 0; i < V; ++i) s += (m(i, l) = u(rng));
          for (std::size_t i = 0; i < V; ++i) m(i, l) /= s;
        }
        probs.push_back(m);
      }
      TokenRows tgt(lanes, std::vector<TokenId>(S));
      for (auto& r : tgt)
        for (auto& y : r) y = static_cast<TokenId>(rng() % V);
      tgt[0][3] = kPad;
      double nll = 0;
      std::size_t n = 0;
      for (std::size_t l = 0; l < lanes; ++l)
        for (std::size_t t = 0; t < S; ++t)
          if (tgt[l][t] != kPad) {
            nll -= std::log(probs[t](tgt[l][t], l));
            ++n;
          }
      const LossResult r = smoothed_cross_entropy(probs, tgt, 0.0);
      CHECK(r.tokens == n);
      CHECK(std::abs(r.loss - nll / n) < 1e-12);
    }
  }

  TEST_CASE("aux weight ramp anchors and shape") {
    const AuxTerm term;
    CHECK(aux_weight(0, term) == 0.0);
    CHECK(aux_weight(1000, term) == 0.0);
    CHECK(aux_weight(100000, term) == doctest::Approx(0.1));
    CHECK(aux_weight(50500, term) == doctest::Approx(0.05));
    CHECK(aux_weight(1000000, term) == doctest::Approx(0.1));
    double prev = 0.0;
    for (std::int64_t t = 0; t <= 120000; t += 37) {
      const double w = aux_weight(t, term);
      CHECK(w >= prev);
      CHECK(w <= term.w_max);
      CHECK(std::abs(w - prev) <= term.w_max * 37.0 / 99000.0 + 1e-15);  // Lipschitz, hence continuous
      prev = w;
    }
  }

  TEST_CASE("AdamW first step and agreement with an independent implementation") {
    AdamW opt(AdamWConfig{}, {1});
    std::vector<double> theta = {1.0};
    const std::vector<double> g = {1.0};
    opt.step({std::span<double>(theta)}, {std::span<const double>(g)});
    CHECK(theta[0] == doctest::Approx(1 - 0.05 / (1 + 1e-8) - 0.05 * 0.001).epsilon(1e-12));
    CHECK(theta[0] == doctest::Approx(0.94995).epsilon(1e-6));

    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0, 1);
    for (double wd : {0.0, 0.001, 0.1}) {
      AdamWConfig cfg;
      cfg.weight_decay = wd;
      AdamW a(cfg, {3});
      std::vector<ScalarAdamW> ref(3, ScalarAdamW{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, wd});
      std::vector<double> p = {0.3, -1.2, 2.0}, q = p;
      for (int s = 0; s < 25; ++s) {
        std::vector<double> grad = {n(rng), n(rng), n(rng)};
        a.step({std::span<double>(p)}, {std::span<const double>(grad)});
        for (int i = 0; i < 3; ++i) q[i] = ref[i].step(q[i], grad[i]);
      }
      for (int i = 0; i < 3; ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
    }
  }

  TEST_CASE("AdamW edge cases") {
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg, {1});
    std::vector<double> theta = {0.7};
    const std::vector<double> zero = {0.0};
    opt.step({std::span<double>(theta)}, {std::span<const double>(zero)});
    CHECK(theta[0] == 0.7);

    // Constant gradient: bias-corrected update magnitude is lr at every step.
    AdamW c(cfg, {1});
    std::vector<double> x = {0.0};
    const std::vector<double> g = {0.3};
    for (int s = 0; s < 10; ++s) {
      const double before = x[0];
      c.step({std::span<double>(x)}, {std::span<const double>(g)});
      CHECK(std::abs(before - x[0]) == doctest::Approx(0.05).epsilon(1e-6));
    }

    std::vector<double> bad = {NAN};
    const double saved = x[0];
    CHECK_THROWS(c.step({std::span<double>(x)}, {std::span<const double>(bad)}));
    CHECK(x[0] == saved);
  }

  TEST_CASE("plateau scheduler") {
    PlateauConfig cfg;
    cfg.patience = 3;
    PlateauScheduler s(cfg);
    double lr = 0.05;
    lr = s.update(1.0, lr);
    std::vector<double> seen;
    for (int i = 0; i < 6; ++i) {
      lr = s.update(1.0, lr);
      seen.push_back(lr);
    }
    CHECK(seen[1] == doctest::Approx(0.05));
    CHECK(seen[2] == doctest::Approx(0.04));
    CHECK(seen[5] == doctest::Approx(0.032));
    for (std::size_t i = 1; i < seen.size(); ++i) CHECK(seen[i] <= seen[i - 1]);

    PlateauScheduler d(cfg);
    double lr2 = 0.05;
    for (int i = 0; i < 100; ++i) lr2 = d.update(10.0 - 0.01 * i, lr2);
    CHECK(lr2 == 0.05);

    // Patience counts steps, not calls.
    PlateauScheduler e(cfg);
    double lr3 = e.update(1.0, 0.05, 500);
    lr3 = e.update(1.0, lr3, 3);
    CHECK(lr3 == doctest::Approx(0.04));
  }

  TEST_CASE("gradient stats") {
    Gradients g;
    for (int gi = 0; gi < 5; ++gi) g.logits[gi] = {std::vector<double>(32, -0.5)};
    auto s = gradient_stats(g);
    CHECK(s.size() == 10);
    CHECK(s[0].name == "N");
    CHECK(s[0].mean == doctest::Approx(0.5));
    CHECK(s[0].stddev == 0.0);
    CHECK(s[0].ratio == 0.0);

    g.logits[1] = {{0.0, 2.0}, {-2.0, 0.0}};
    s = gradient_stats(g);
    CHECK(s[1].mean == doctest::Approx(1.0));
    CHECK(s[1].stddev == doctest::Approx(1.0));
    CHECK(s[1].ratio == doctest::Approx(1.0));
    CHECK(s[6].name == "K0");
    CHECK(s[7].name == "K1");

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 3);
    g.logits[4] = {std::vector<double>(100), std::vector<double>(77)};
    std::vector<double> all;
    for (auto& l : g.logits[4])
      for (double& v : l) all.push_back(std::abs(v = n(rng)));
    double mean = 0;
    for (double v : all) mean += v;
    mean /= all.size();
    double var = 0;
    for (double v : all) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / all.size());
    s = gradient_stats(g);
    CHECK(std::abs(s[4].mean - mean) < 1e-12);
    CHECK(std::abs(s[4].stddev - sd) < 1e-12);

    g.logits[2].clear();
    CHECK_THROWS(gradient_stats(g));
  }
}
