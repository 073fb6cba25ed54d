#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ser {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return std::span<double>(data).subspan(r * cols, cols); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }
  void append_row(std::span<const double> values) {
    if (rows == 0 && cols == 0) cols = values.size();
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
  }
};

}  // namespace ser
