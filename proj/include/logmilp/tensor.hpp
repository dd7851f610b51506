#pragma once

#include <algorithm>
#include <cassert>
#include <span>
#include <vector>

namespace logmilp {

/// Dense row-major matrix. Vectors are 1×n or n×1 matrices.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const T> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

template <class To, class From>
Mat<To> cast(const Mat<From>& m) {
  Mat<To> out(m.rows, m.cols);
  std::transform(m.data.begin(), m.data.end(), out.data.begin(), [](From v) { return static_cast<To>(v); });
  return out;
}

}  // namespace logmilp
