#ifndef DUALCOG_TENSOR_HPP_
#define DUALCOG_TENSOR_HPP_

#include <algorithm>
#include <cassert>
#include <span>
#include <vector>

namespace dualcog {

// Dense row-major matrix of doubles. Vectors are 1×n or n×1 tensors.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  std::size_t size() const { return data.size(); }
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::span<const double> row_span(int r) const {
    return {row(r), static_cast<std::size_t>(cols)};
  }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace dualcog

#endif  // DUALCOG_TENSOR_HPP_
