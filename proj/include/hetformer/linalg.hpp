#pragma once

// Minimal row-major dense matrix plus the handful of products the encoder
// needs. Every output element is produced by one thread with a fixed inner
// summation order, so results are bit-identical for any thread count.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetformer/parallel.hpp"

namespace hetformer::linalg {

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix& operator+=(const Matrix& o) {
    assert(rows_ == o.rows_ && cols_ == o.cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

// C = A * B
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  require_shape(a.cols() == b.rows(), "matmul inner dimension");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix<T> c(n, m);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * k * m >= parallel::kMinParallelWork)
  for (long i = 0; i < rows; ++i) {
    T* out = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a(i, p);
      const T* brow = &b(p, 0);
      for (std::size_t j = 0; j < m; ++j) out[j] += aip * brow[j];
    }
  }
  return c;
}

// C = A^T * B
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn shared rows");
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  Matrix<T> c(n, m);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * k * m >= parallel::kMinParallelWork)
  for (long i = 0; i < rows; ++i) {
    T* out = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const T api = a(p, i);
      const T* brow = &b(p, 0);
      for (std::size_t j = 0; j < m; ++j) out[j] += api * brow[j];
    }
  }
  return c;
}

// C = A * B^T
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt shared cols");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Matrix<T> c(n, m);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * k * m >= parallel::kMinParallelWork)
  for (long i = 0; i < rows; ++i) {
    const T* arow = &a(i, 0);
    for (std::size_t j = 0; j < m; ++j) {
      const T* brow = &b(j, 0);
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) = acc;
    }
  }
  return c;
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

template <typename T>
bool all_finite(const Matrix<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace hetformer::linalg
