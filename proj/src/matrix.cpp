#include "rdlgn/matrix.hpp"

#include <algorithm>

#include "rdlgn/error.hpp"

namespace rdlgn {

Matrix vconcat(std::initializer_list<const Matrix*> parts) {
  std::size_t rows = 0;
  std::size_t cols = (*parts.begin())->cols();
  for (const Matrix* p : parts) {
    if (p->cols() != cols) throw ShapeError("vconcat: lane count mismatch");
    rows += p->rows();
  }
  Matrix out(rows, cols);
  auto dst = out.values().begin();
  for (const Matrix* p : parts) dst = std::copy(p->values().begin(), p->values().end(), dst);
  return out;
}

Matrix row_slice(const Matrix& src, std::size_t begin, std::size_t count) {
  if (begin + count > src.rows()) throw ShapeError("row_slice out of range");
  Matrix out(count, src.cols());
  const auto first = src.values().begin() + static_cast<std::ptrdiff_t>(begin * src.cols());
  std::copy(first, first + static_cast<std::ptrdiff_t>(count * src.cols()), out.values().begin());
  return out;
}

void add_into(Matrix& dst, const Matrix& src) {
  if (dst.rows() != src.rows() || dst.cols() != src.cols()) throw ShapeError("add_into: shape mismatch");
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace rdlgn
