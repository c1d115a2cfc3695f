#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rmo/matrix.hpp"

namespace rmo {

struct QrResult {
  Matrix q;  // m x n, orthonormal columns
  Matrix r;  // n x n, upper triangular, positive diagonal
};

/// Thin Householder QR of a tall matrix. The sign of each column of Q is
/// chosen so that R has a strictly positive diagonal, which makes the
/// factorization unique for full-rank input.
inline QrResult thin_qr(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (m < n) {
    throw DimensionError("thin_qr needs rows >= cols, got " + a.shape());
  }
  const double scale = a.frobenius_norm();
  Matrix work = a;
  std::vector<std::vector<double>> reflectors(n);
  std::vector<double> betas(n, 0.0);

  for (std::size_t k = 0; k < n; ++k) {
    double norm2 = 0.0;
    for (std::size_t i = k; i < m; ++i) norm2 += work(i, k) * work(i, k);
    const double norm = std::sqrt(norm2);
    if (!(norm > 1e-12 * scale)) {
      throw SingularityError("thin_qr: matrix is rank deficient at column " + std::to_string(k),
                             k);
    }
    const double x0 = work(k, k);
    const double alpha = x0 >= 0.0 ? -norm : norm;
    std::vector<double> v(m - k);
    v[0] = x0 - alpha;
    for (std::size_t i = k + 1; i < m; ++i) v[i - k] = work(i, k);
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    const double beta = vnorm2 > 0.0 ? 2.0 / vnorm2 : 0.0;
    for (std::size_t j = k; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < m; ++i) dot += v[i - k] * work(i, j);
      dot *= beta;
      for (std::size_t i = k; i < m; ++i) work(i, j) -= dot * v[i - k];
    }
    reflectors[k] = std::move(v);
    betas[k] = beta;
  }

  QrResult out{Matrix(m, n), Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) out.r(i, j) = work(i, j);

  // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of the identity.
  for (std::size_t j = 0; j < n; ++j) out.q(j, j) = 1.0;
  for (std::size_t kk = n; kk-- > 0;) {
    const auto& v = reflectors[kk];
    const double beta = betas[kk];
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = kk; i < m; ++i) dot += v[i - kk] * out.q(i, j);
      dot *= beta;
      for (std::size_t i = kk; i < m; ++i) out.q(i, j) -= dot * v[i - kk];
    }
  }

  for (std::size_t k = 0; k < n; ++k) {
    if (out.r(k, k) < 0.0) {
      for (std::size_t j = k; j < n; ++j) out.r(k, j) = -out.r(k, j);
      for (std::size_t i = 0; i < m; ++i) out.q(i, k) = -out.q(i, k);
    }
  }
  return out;
}

/// Solves X * R = B for X with R upper triangular (back substitution by rows).
inline Matrix solve_right_upper(const Matrix& b, const Matrix& r) {
  const std::size_t n = r.rows();
  if (r.cols() != n || b.cols() != n) {
    throw DimensionError("solve_right_upper: shapes " + b.shape() + ", " + r.shape());
  }
  Matrix x(b.rows(), n);
  for (std::size_t i = 0; i < b.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = b(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= x(i, k) * r(k, j);
      x(i, j) = s / r(j, j);
    }
  }
  return x;
}

/// Determinant of a square matrix via partial-pivot LU.
inline double determinant(Matrix a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("determinant of non-square " + a.shape());
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

}  // namespace rmo
