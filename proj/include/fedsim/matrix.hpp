#pragma once

#include <cstddef>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

// Variance floor added inside every square root of a variance, so the
// gradient stays finite when a column collapses to a constant.
inline constexpr double kVarianceEpsilon = 1e-8;

// Dense row-major matrix of doubles. The single carrier for batches,
// parameters, representations and probability tables.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix gaussian(std::size_t rows, std::size_t cols, RngStream& rng);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a (m x k) times b (k x n); throws std::invalid_argument on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

// a (m x k) times b^T where b is (n x k).
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// a^T times b where a is (k x m), b is (k x n).
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

// Row-wise softmax with max subtraction; rows sum to 1.
Matrix row_softmax(const Matrix& logits);

// Symmetric n x n matrix of squared Euclidean distances between rows.
Matrix pairwise_sq_dists(const Matrix& reps);

// Per-column sqrt(population variance + kVarianceEpsilon).
std::vector<double> column_std(const Matrix& p);

// Middle element of the sorted values; mean of the two middle ones for even
// length. Throws on empty input.
double median(std::vector<double> values);

}  // namespace fedsim
