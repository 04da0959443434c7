#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace rdlgn {

/// Dense row-major matrix of doubles.
///
/// Activations use a feature-major layout: one row per feature (neuron),
/// one column per lane (independent sample in the batch), so that a
/// neuron's values across the batch are contiguous.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Stack matrices with equal column counts vertically.
Matrix vconcat(std::initializer_list<const Matrix*> parts);

/// Copy rows [begin, begin + count) of `src` into a new matrix.
Matrix row_slice(const Matrix& src, std::size_t begin, std::size_t count);

/// dst += src, elementwise.
void add_into(Matrix& dst, const Matrix& src);

}  // namespace rdlgn
