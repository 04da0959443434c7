#include <doctest.h>

#include <random>
#include <set>

#include "rdlgn/gate.hpp"

using namespace rdlgn;

namespace {

// Truth tables written out by hand, (t00, t01, t10, t11).
struct Named {
  GateKind kind;
  int t00, t01, t10, t11;
};
constexpr Named kHand[] = {
    {gates::kFalse, 0, 0, 0, 0}, {gates::kNor, 1, 0, 0, 0},      {gates::kNotAAndB, 0, 1, 0, 0},
    {gates::kNotA, 1, 1, 0, 0},  {gates::kAAndNotB, 0, 0, 1, 0}, {gates::kNotB, 1, 0, 1, 0},
    {gates::kXor, 0, 1, 1, 0},   {gates::kNand, 1, 1, 1, 0},     {gates::kAnd, 0, 0, 0, 1},
    {gates::kXnor, 1, 0, 0, 1},  {gates::kB, 0, 1, 0, 1},        {gates::kNotAOrB, 1, 1, 0, 1},
    {gates::kA, 0, 0, 1, 1},     {gates::kAOrNotB, 1, 0, 1, 1},  {gates::kOr, 0, 1, 1, 1},
    {gates::kTrue, 1, 1, 1, 1},
};

// Independent closed forms of the 16 relaxations.
double oracle(int index, double a, double b) {
  switch (index) {
    case 0: return 0.0;
    case 1: return 1.0 - (a + b - a * b);
    case 2: return b - a * b;
    case 3: return 1.0 - a;
    case 4: return a - a * b;
    case 5: return 1.0 - b;
    case 6: return a + b - 2.0 * a * b;
    case 7: return 1.0 - a * b;
    case 8: return a * b;
    case 9: return 1.0 - (a + b - 2.0 * a * b);
    case 10: return b;
    case 11: return 1.0 - a + a * b;
    case 12: return a;
    case 13: return 1.0 - b + a * b;
    case 14: return a + b - a * b;
    default: return 1.0;
  }
}

}  // namespace

TEST_SUITE("gate") {
  TEST_CASE("index is the truth table and the mapping is a bijection") {
    std::set<int> tables;
    for (const auto& h : kHand) {
      CHECK(discrete_eval(h.kind, false, false) == bool(h.t00));
      CHECK(discrete_eval(h.kind, false, true) == bool(h.t01));
      CHECK(discrete_eval(h.kind, true, false) == bool(h.t10));
      CHECK(discrete_eval(h.kind, true, true) == bool(h.t11));
      tables.insert(h.t00 | h.t01 << 1 | h.t10 << 2 | h.t11 << 3);
    }
    CHECK(tables.size() == 16);
    CHECK(gates::kAnd.index() == 8);
    CHECK(gates::kOr.index() == 14);
    CHECK(gates::kA.name() == "A");
  }

  TEST_CASE("relaxations agree with truth tables at the corners") {
    for (int i = 0; i < 16; ++i) {
      const GateKind g(static_cast<std::uint8_t>(i));
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) CHECK(relaxed_eval(g, a, b) == double(discrete_eval(g, a, b)));
    }
  }

  TEST_CASE("AND and OR reduce exactly to a*b and a+b-a*b") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 0; n < 1000; ++n) {
      const double a = u(rng), b = u(rng);
      CHECK(relaxed_eval(gates::kAnd, a, b) == a * b);
      CHECK(relaxed_eval(gates::kOr, a, b) == a + b - a * b);
    }
  }

  TEST_CASE("all 16 relaxations match closed forms and stay in [0, 1]") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 0; n < 500; ++n) {
      const double a = u(rng), b = u(rng);
      for (int i = 0; i < 16; ++i) {
        const double y = relaxed_eval(GateKind(static_cast<std::uint8_t>(i)), a, b);
        CHECK(y == doctest::Approx(oracle(i, a, b)).epsilon(1e-14));
        CHECK(y >= -1e-15);
        CHECK(y <= 1.0 + 1e-15);
      }
    }
  }

  TEST_CASE("partials match central differences") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    const double h = 1e-6;
    for (int n = 0; n < 50; ++n) {
      const double a = u(rng), b = u(rng);
      for (int i = 0; i < 16; ++i) {
        const GateKind g(static_cast<std::uint8_t>(i));
        const auto [da, db] = relaxed_partials(g, a, b);
        CHECK(da == doctest::Approx((oracle(i, a + h, b) - oracle(i, a - h, b)) / (2 * h)).epsilon(1e-7));
        CHECK(db == doctest::Approx((oracle(i, a, b + h) - oracle(i, a, b - h)) / (2 * h)).epsilon(1e-7));
      }
    }
  }
}
