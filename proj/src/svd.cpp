#include "fedsim/svd.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace fedsim {

namespace {

constexpr double kJacobiTol = 1e-12;
constexpr int kMaxSweeps = 100;

}  // namespace

std::vector<double> svd_values(const Matrix& w) {
  if (w.empty()) {
    throw std::invalid_argument("svd_values: empty matrix");
  }
  // Work with the n-column orientation where n is the smaller dimension, so
  // the implicit Gram matrix the rotations diagonalize is n x n.
  Matrix a = (w.rows() >= w.cols()) ? w : transpose(w);
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();

  auto col_dot = [&](std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a(i, p) * a(i, q);
    return s;
  };

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double worst = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = col_dot(p, q);
        const double app = col_dot(p, p);
        const double aqq = col_dot(q, q);
        if (app == 0.0 || aqq == 0.0) continue;
        const double rel = std::abs(apq) / std::sqrt(app * aqq);
        worst = std::max(worst, rel);
        if (rel <= kJacobiTol) continue;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, tau) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double vp = a(i, p);
          const double vq = a(i, q);
          a(i, p) = c * vp - s * vq;
          a(i, q) = s * vp + c * vq;
        }
      }
    }
    if (worst <= kJacobiTol) {
      std::vector<double> sv(n);
      for (std::size_t j = 0; j < n; ++j) sv[j] = std::sqrt(col_dot(j, j));
      std::sort(sv.begin(), sv.end(), std::greater<double>());
      return sv;
    }
  }
  throw std::runtime_error("svd_values: Jacobi sweeps did not converge");
}

Matrix orthonormalize_rows(const Matrix& w, RngStream& rng) {
  if (w.rows() > w.cols()) {
    throw std::invalid_argument("orthonormalize_rows: more rows than columns");
  }
  const std::size_t n = w.rows();
  const std::size_t d = w.cols();
  Matrix out = w;
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      // Project out the preceding rows.
      for (std::size_t k = 0; k < i; ++k) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += out(i, j) * out(k, j);
        for (std::size_t j = 0; j < d; ++j) out(i, j) -= dot * out(k, j);
      }
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += out(i, j) * out(i, j);
      norm = std::sqrt(norm);
      if (norm >= 1e-10) {
        for (std::size_t j = 0; j < d; ++j) out(i, j) /= norm;
        break;
      }
      for (std::size_t j = 0; j < d; ++j) out(i, j) = rng.next_gaussian();
    }
  }
  return out;
}

}  // namespace fedsim
