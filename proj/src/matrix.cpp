#include "fedsim/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedsim {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) + "x" +
                                std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::gaussian(std::size_t rows, std::size_t cols, RngStream& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data_) v = rng.next_gaussian();
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) +
                                " and " + std::to_string(b.rows()) + " differ");
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = out.row_ptr(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimensions differ");
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row_ptr(j);
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t t = 0;
      for (; t + 4 <= k; t += 4) {
        s0 += arow[t] * brow[t];
        s1 += arow[t + 1] * brow[t + 1];
        s2 += arow[t + 2] * brow[t + 2];
        s3 += arow[t + 3] * brow[t + 3];
      }
      for (; t < k; ++t) s0 += arow[t] * brow[t];
      out(i, j) = (s0 + s1) + (s2 + s3);
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("matmul_tn: inner dimensions differ");
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* arow = a.row_ptr(k);
    const double* brow = b.row_ptr(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* orow = out.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

Matrix row_softmax(const Matrix& logits) {
  if (!logits.all_finite()) {
    throw std::invalid_argument("row_softmax: non-finite logits");
  }
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const double* in = logits.row_ptr(i);
    double* out = p.row_ptr(i);
    double mx = in[0];
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < logits.cols(); ++j) out[j] *= inv;
  }
  return p;
}

Matrix pairwise_sq_dists(const Matrix& reps) {
  if (reps.rows() == 0) {
    throw std::invalid_argument("pairwise_sq_dists: empty input");
  }
  const std::size_t n = reps.rows();
  const std::size_t d = reps.cols();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = reps.row_ptr(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* xj = reps.row_ptr(j);
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = xi[t] - xj[t];
        s += diff * diff;
      }
      out(i, j) = s;
      out(j, i) = s;
    }
  }
  return out;
}

std::vector<double> column_std(const Matrix& p) {
  if (p.rows() == 0) {
    throw std::invalid_argument("column_std: empty input");
  }
  const std::size_t n = p.rows();
  const std::size_t d = p.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = p.row_ptr(i);
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = p.row_ptr(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = row[j] - mean[j];
      var[j] += diff * diff;
    }
  }
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = std::sqrt(var[j] / static_cast<double>(n) + kVarianceEpsilon);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) {
    throw std::invalid_argument("median: empty input");
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace fedsim
