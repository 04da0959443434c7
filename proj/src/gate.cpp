#include "rdlgn/gate.hpp"

namespace rdlgn {

std::string_view GateKind::name() const {
  static constexpr std::array<std::string_view, kCount> kNames = {
      "FALSE", "NOR",  "NOT_A_AND_B", "NOT_A", "A_AND_NOT_B", "NOT_B", "XOR",  "NAND",
      "AND",   "XNOR", "B",           "NOT_A_OR_B", "A",     "A_OR_NOT_B",  "OR", "TRUE"};
  return kNames[index_];
}

}  // namespace rdlgn
