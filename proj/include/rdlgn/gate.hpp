#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <string_view>
#include <utility>

namespace rdlgn {

/// One of the 16 two-input Boolean functions.
///
/// The index is the truth table itself: bit 0 holds the output at (a,b)=(0,0),
/// bit 1 at (0,1), bit 2 at (1,0), bit 3 at (1,1). FALSE is 0, AND is 8,
/// OR is 14, TRUE is 15, and the pass-through "output = a" gate is 12.
class GateKind {
 public:
  static constexpr int kCount = 16;

  constexpr GateKind() = default;
  constexpr explicit GateKind(std::uint8_t index) : index_(index & 0xF) {
    assert(index < kCount);
  }

  constexpr std::uint8_t index() const { return index_; }

  /// Output at Boolean corner (a, b).
  constexpr bool table(bool a, bool b) const {
    return (index_ >> ((a ? 2 : 0) | (b ? 1 : 0))) & 1U;
  }

  constexpr bool operator==(const GateKind&) const = default;

  std::string_view name() const;

 private:
  std::uint8_t index_ = 0;
};

namespace gates {
inline constexpr GateKind kFalse{0};
inline constexpr GateKind kNor{1};
inline constexpr GateKind kNotAAndB{2};
inline constexpr GateKind kNotA{3};
inline constexpr GateKind kAAndNotB{4};
inline constexpr GateKind kNotB{5};
inline constexpr GateKind kXor{6};
inline constexpr GateKind kNand{7};
inline constexpr GateKind kAnd{8};
inline constexpr GateKind kXnor{9};
inline constexpr GateKind kB{10};
inline constexpr GateKind kNotAOrB{11};
inline constexpr GateKind kA{12};
inline constexpr GateKind kAOrNotB{13};
inline constexpr GateKind kOr{14};
inline constexpr GateKind kTrue{15};
}  // namespace gates

/// Truth-table entry for (a, b).
constexpr bool discrete_eval(GateKind kind, bool a, bool b) { return kind.table(a, b); }

/// Multilinear extension of the gate: the expectation of g(A, B) for
/// independent A ~ Bernoulli(a), B ~ Bernoulli(b), written as
/// c0 + c1 a + c2 b + c3 ab with integer coefficients. Exact at the corners;
/// AND evaluates to exactly a*b and OR to exactly (a + b) - a*b.
constexpr double relaxed_eval(GateKind kind, double a, double b) {
  assert(a >= 0.0 && a <= 1.0 && b >= 0.0 && b <= 1.0);
  const int t00 = kind.table(false, false);
  const int t01 = kind.table(false, true);
  const int t10 = kind.table(true, false);
  const int t11 = kind.table(true, true);
  const int c1 = t10 - t00;
  const int c2 = t01 - t00;
  const int c3 = t11 - t10 - t01 + t00;
  double y = t00;
  if (c1 != 0) y += c1 * a;
  if (c2 != 0) y += c2 * b;
  if (c3 != 0) y += c3 * (a * b);
  return y;
}

/// (dg/da, dg/db) of the multilinear extension.
constexpr std::pair<double, double> relaxed_partials(GateKind kind, double a, double b) {
  const double t00 = kind.table(false, false);
  const double t01 = kind.table(false, true);
  const double t10 = kind.table(true, false);
  const double t11 = kind.table(true, true);
  const double da = (t10 - t00) * (1.0 - b) + (t11 - t01) * b;
  const double db = (t01 - t00) * (1.0 - a) + (t11 - t10) * a;
  return {da, db};
}

/// Corner weights of a gate in (00, 01, 10, 11) order.
constexpr std::array<double, 4> corner_table(GateKind kind) {
  return {double(kind.table(false, false)), double(kind.table(false, true)),
          double(kind.table(true, false)), double(kind.table(true, true))};
}

}  // namespace rdlgn
