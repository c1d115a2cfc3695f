#pragma once

#include <cstdint>
#include <string>

#include "rmo/error.hpp"
#include "rmo/linalg.hpp"
#include "rmo/matrix.hpp"
#include "rmo/random.hpp"

namespace rmo {

enum class Family { Stiefel, Grassmann };

inline std::string to_string(Family f) { return f == Family::Stiefel ? "stiefel" : "grassmann"; }

/// Stiefel(d, p) or Grassmann(d, p). Grassmann points are stored as an
/// orthonormal d x p representative of the subspace.
struct ManifoldKind {
  Family family = Family::Stiefel;
  std::size_t d = 1;
  std::size_t p = 1;

  ManifoldKind() = default;
  ManifoldKind(Family f, std::size_t rows, std::size_t cols) : family(f), d(rows), p(cols) {
    if (d < 1 || p < 1 || p > d) {
      throw DimensionError("manifold needs 1 <= p <= d, got " + Matrix::shape_string(d, p));
    }
  }
  static ManifoldKind stiefel(std::size_t d, std::size_t p) { return {Family::Stiefel, d, p}; }
  static ManifoldKind grassmann(std::size_t d, std::size_t p) { return {Family::Grassmann, d, p}; }

  std::string name() const { return to_string(family) + "(" + std::to_string(d) + "," +
                                    std::to_string(p) + ")"; }
  friend bool operator==(const ManifoldKind&, const ManifoldKind&) = default;
};

struct ManifoldPoint {
  ManifoldKind kind;
  Matrix w;
};

struct TangentVector {
  ManifoldKind kind;
  Matrix v;
};

namespace detail {
inline void require_ambient_shape(const ManifoldPoint& at, const Matrix& x, const char* op) {
  if (x.rows() != at.kind.d || x.cols() != at.kind.p) {
    throw DimensionError(std::string(op) + ": expected " +
                         Matrix::shape_string(at.kind.d, at.kind.p) + ", got " + x.shape());
  }
}
}  // namespace detail

/// Stiefel: X - W sym(W^T X). Grassmann: X - W W^T X.
inline TangentVector project_to_tangent(const ManifoldPoint& at, const Matrix& x) {
  detail::require_ambient_shape(at, x, "project_to_tangent");
  Matrix wtx = matmul_tn(at.w, x);
  if (at.kind.family == Family::Stiefel) {
    Matrix sym = wtx + wtx.transposed();
    sym *= 0.5;
    return {at.kind, x - matmul(at.w, sym)};
  }
  return {at.kind, x - matmul(at.w, wtx)};
}

/// Q factor of W + V. The zero vector maps back to W itself.
inline ManifoldPoint retract(const ManifoldPoint& at, const TangentVector& v) {
  detail::require_ambient_shape(at, v.v, "retract");
  if (v.v.is_zero()) return at;
  return {at.kind, thin_qr(at.w + v.v).q};
}

/// Vector transport realized as projection onto the target tangent space.
inline TangentVector transport_by_projection(const ManifoldPoint& target, const Matrix& v) {
  return project_to_tangent(target, v);
}

inline double feasibility_violation(const ManifoldPoint& p) { return orthonormality_violation(p.w); }

/// Q factor of a standard normal d x p draw.
inline ManifoldPoint random_point(const ManifoldKind& kind, std::uint64_t seed) {
  Rng rng(seed);
  for (;;) {
    Matrix a = rng.normal_matrix(kind.d, kind.p);
    try {
      return {kind, thin_qr(a).q};
    } catch (const SingularityError&) {
      // Measure-zero event; draw again from the same stream.
    }
  }
}

/// Tangency residual: Stiefel ||W^T V + V^T W||_F, Grassmann ||W^T V||_F.
inline double tangency_violation(const ManifoldPoint& at, const Matrix& v) {
  Matrix wtv = matmul_tn(at.w, v);
  if (at.kind.family == Family::Stiefel) return (wtv + wtv.transposed()).frobenius_norm();
  return wtv.frobenius_norm();
}

}  // namespace rmo
