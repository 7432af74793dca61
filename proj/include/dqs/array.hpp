#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dqs/errors.hpp"

namespace dqs {

// Flat row-major container for all vector/matrix quantities.
class DenseArray {
 public:
  DenseArray() = default;

  explicit DenseArray(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw DimensionError("DenseArray: shape entries must be positive");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
  }

  DenseArray(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw DimensionError("DenseArray: shape entries must be positive");
      n *= static_cast<std::size_t>(d);
    }
    if (n != data_.size()) throw DimensionError("DenseArray: data length does not match shape");
  }

  static DenseArray vector(std::initializer_list<double> vals) {
    return DenseArray({static_cast<int>(vals.size())}, std::vector<double>(vals));
  }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

  // 2-D accessors; rank-1 arrays are treated as a single row.
  int rows() const { return rank() == 1 ? 1 : shape_[0]; }
  int cols() const { return rank() == 1 ? shape_[0] : shape_[1]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  std::span<double> row(int r) {
    return {data_.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())};
  }
  std::span<const double> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())};
  }

  std::span<double> flat() { return {data_.data(), data_.size()}; }
  std::span<const double> flat() const { return {data_.data(), data_.size()}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const DenseArray& other) const { return shape_ == other.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const DenseArray& a, const DenseArray& b, const char* where) {
  if (!a.same_shape(b)) throw DimensionError(std::string(where) + ": shape mismatch");
}

// Error-compensated pairwise reduction; keeps results independent of how
// work is chunked (to well below 1e-12 relative).
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 32) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

namespace detail {

// C(m x n) = A(m x k) @ B(k x n), row-major. Accumulation runs in saxpy
// order (contiguous over n) which vectorizes well at MLP-layer sizes.
inline void matmul(const double* A, const double* B, double* C, int m, int n, int k,
                   bool accumulate = false) {
  for (int i = 0; i < m; ++i) {
    double* c = C + static_cast<std::size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) c[j] = 0.0;
    const double* a = A + static_cast<std::size_t>(i) * k;
    for (int t = 0; t < k; ++t) {
      double av = a[t];
      if (av == 0.0) continue;
      const double* b = B + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

inline void transpose(const double* A, double* AT, int m, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) AT[static_cast<std::size_t>(j) * m + i] = A[static_cast<std::size_t>(i) * n + j];
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

}  // namespace dqs
