#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation whose inputs include a tracked value
// (a leaf, or anything computed from one). Untracked values are stored
// but carry no pullback. backward() walks the record once in reverse
// order and accumulates adjoints; contributions are always summed, never
// assigned, so a value used twice receives both contributions.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rmo/error.hpp"
#include "rmo/linalg.hpp"
#include "rmo/matrix.hpp"

namespace rmo::ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Matrix& value() const;
  bool tracked() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Pullback = std::function<void(const Matrix& out_adjoint, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, {}, nullptr); }
  Var leaf(Matrix value) { return push(std::move(value), true, {}, nullptr); }

  /// Records an operation. The node is tracked iff any input is tracked;
  /// untracked nodes drop their pullback.
  Var record(Matrix value, std::vector<Var> inputs, Pullback pullback) {
    if (!value.all_finite()) {
      throw NumericError("non-finite value produced on tape at node " +
                         std::to_string(nodes_.size()));
    }
    bool tracked = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw Error("operands belong to different tapes");
      tracked = tracked || nodes_[v.id()].tracked;
      ids.push_back(v.id());
    }
    return push(std::move(value), tracked, std::move(ids), tracked ? std::move(pullback) : nullptr);
  }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool tracked(std::size_t id) const { return nodes_.at(id).tracked; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adds `contribution` to the adjoint of `v` if v is tracked.
  void accumulate(const Var& v, const Matrix& contribution) {
    Node& n = nodes_[v.id()];
    if (!n.tracked) return;
    Matrix& adj = adjoints_[v.id()];
    if (adj.empty()) {
      adj = contribution;
    } else {
      adj += contribution;
    }
  }

  /// Reverse pass seeded with d(objective)/d(out) = seed.
  void backward(const Var& out, const Matrix& seed) {
    if (!seed.same_shape(out.value())) {
      throw DimensionError("backward seed shape " + seed.shape() + " does not match output " +
                           out.value().shape());
    }
    adjoints_.assign(nodes_.size(), Matrix());
    if (!nodes_[out.id()].tracked) return;
    adjoints_[out.id()] = seed;
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.pullback || adjoints_[i].empty()) continue;
      n.pullback(adjoints_[i], *this);
    }
  }

  /// Reverse pass of a 1x1 output with unit seed.
  void backward(const Var& scalar_out) {
    if (scalar_out.value().rows() != 1 || scalar_out.value().cols() != 1) {
      throw DimensionError("backward without seed needs a 1x1 output, got " +
                           scalar_out.value().shape());
    }
    backward(scalar_out, Matrix(1, 1, 1.0));
  }

  /// Gradient of the last backward pass with respect to v (zeros if v
  /// received no contribution).
  Matrix grad(const Var& v) const {
    if (v.id() < adjoints_.size() && !adjoints_[v.id()].empty()) return adjoints_[v.id()];
    return Matrix(v.value().rows(), v.value().cols());
  }

 private:
  struct Node {
    Matrix value;
    bool tracked;
    std::vector<std::size_t> inputs;
    Pullback pullback;
  };

  Var push(Matrix value, bool tracked, std::vector<std::size_t> inputs, Pullback pullback) {
    nodes_.push_back(Node{std::move(value), tracked, std::move(inputs), std::move(pullback)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::tracked() const { return tape_->tracked(id_); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape() + " vs " +
                         b.value().shape());
  }
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Matrix c = rmo::matmul(a.value(), b.value());
  return a.tape().record(std::move(c), {a, b}, [a, b](const Matrix& g, Tape& t) {
    if (a.tracked()) t.accumulate(a, matmul_nt(g, b.value()));
    if (b.tracked()) t.accumulate(b, matmul_tn(a.value(), g));
  });
}

inline Var transpose(const Var& a) {
  return a.tape().record(a.value().transposed(), {a},
                         [a](const Matrix& g, Tape& t) { t.accumulate(a, g.transposed()); });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](const Matrix& g, Tape& t) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](const Matrix& g, Tape& t) {
    t.accumulate(a, g);
    t.accumulate(b, -1.0 * g);
  });
}

/// Entrywise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  return a.tape().record(hadamard(a.value(), b.value()), {a, b},
                         [a, b](const Matrix& g, Tape& t) {
                           if (a.tracked()) t.accumulate(a, hadamard(g, b.value()));
                           if (b.tracked()) t.accumulate(b, hadamard(g, a.value()));
                         });
}

inline Var scale(const Var& a, double s) {
  return a.tape().record(s * a.value(), {a},
                         [a, s](const Matrix& g, Tape& t) { t.accumulate(a, s * g); });
}

inline Var sigmoid(const Var& a) {
  Matrix y = detail::map(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  Matrix dy = detail::map(y, [](double s) { return s * (1.0 - s); });
  return a.tape().record(std::move(y), {a}, [a, dy = std::move(dy)](const Matrix& g, Tape& t) {
    t.accumulate(a, hadamard(g, dy));
  });
}

inline Var tanh(const Var& a) {
  Matrix y = detail::map(a.value(), [](double x) { return std::tanh(x); });
  Matrix dy = detail::map(y, [](double s) { return 1.0 - s * s; });
  return a.tape().record(std::move(y), {a}, [a, dy = std::move(dy)](const Matrix& g, Tape& t) {
    t.accumulate(a, hadamard(g, dy));
  });
}

inline Var square(const Var& a) {
  Matrix y = detail::map(a.value(), [](double x) { return x * x; });
  return a.tape().record(std::move(y), {a}, [a](const Matrix& g, Tape& t) {
    t.accumulate(a, 2.0 * hadamard(g, a.value()));
  });
}

/// Sum of all entries, as a 1x1 matrix.
inline Var sum(const Var& a) {
  return a.tape().record(Matrix(1, 1, a.value().sum()), {a}, [a](const Matrix& g, Tape& t) {
    t.accumulate(a, Matrix(a.value().rows(), a.value().cols(), g(0, 0)));
  });
}

/// a + 1 * row, adding a 1 x cols row vector to every row of a.
inline Var add_row(const Var& a, const Var& row) {
  if (row.value().rows() != 1 || row.value().cols() != a.value().cols()) {
    throw DimensionError("add_row: row " + row.value().shape() + " does not fit " +
                         a.value().shape());
  }
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += row.value()(0, j);
  return a.tape().record(std::move(y), {a, row}, [a, row](const Matrix& g, Tape& t) {
    t.accumulate(a, g);
    if (row.tracked()) {
      Matrix r(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) r(0, j) += g(i, j);
      t.accumulate(row, r);
    }
  });
}

/// Columns [begin, begin + count) of a.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const Matrix& v = a.value();
  if (begin + count > v.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + v.shape());
  }
  Matrix y(v.rows(), count);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) y(i, j) = v(i, begin + j);
  return a.tape().record(std::move(y), {a}, [a, begin, count](const Matrix& g, Tape& t) {
    Matrix full(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) full(i, begin + j) = g(i, j);
    t.accumulate(a, full);
  });
}

/// diag(v) * a, with v an (a.rows x 1) column.
inline Var scale_rows(const Var& a, const Var& v) {
  if (v.value().cols() != 1 || v.value().rows() != a.value().rows()) {
    throw DimensionError("scale_rows: scale " + v.value().shape() + " does not fit " +
                         a.value().shape());
  }
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) *= v.value()(i, 0);
  return a.tape().record(std::move(y), {a, v}, [a, v](const Matrix& g, Tape& t) {
    const Matrix& av = a.value();
    const Matrix& vv = v.value();
    if (a.tracked()) {
      Matrix ga = g;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= vv(i, 0);
      t.accumulate(a, ga);
    }
    if (v.tracked()) {
      Matrix gv(vv.rows(), 1);
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) gv(i, 0) += g(i, j) * av(i, j);
      t.accumulate(v, gv);
    }
  });
}

/// a * diag(v), with v an (a.cols x 1) column.
inline Var scale_cols(const Var& a, const Var& v) {
  if (v.value().cols() != 1 || v.value().rows() != a.value().cols()) {
    throw DimensionError("scale_cols: scale " + v.value().shape() + " does not fit " +
                         a.value().shape());
  }
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) *= v.value()(j, 0);
  return a.tape().record(std::move(y), {a, v}, [a, v](const Matrix& g, Tape& t) {
    const Matrix& av = a.value();
    const Matrix& vv = v.value();
    if (a.tracked()) {
      Matrix ga = g;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= vv(j, 0);
      t.accumulate(a, ga);
    }
    if (v.tracked()) {
      Matrix gv(vv.rows(), 1);
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) gv(j, 0) += g(i, j) * av(i, j);
      t.accumulate(v, gv);
    }
  });
}

/// Same row-major data viewed as rows x cols.
inline Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  const Matrix& v = a.value();
  if (rows * cols != v.size()) {
    throw DimensionError("reshape: cannot view " + v.shape() + " as " +
                         Matrix::shape_string(rows, cols));
  }
  const auto src = v.data();
  Matrix y(rows, cols, std::vector<double>(src.begin(), src.end()));
  return a.tape().record(std::move(y), {a}, [a](const Matrix& g, Tape& t) {
    const auto gs = g.data();
    t.accumulate(a, Matrix(a.value().rows(), a.value().cols(),
                           std::vector<double>(gs.begin(), gs.end())));
  });
}

/// Same value, no gradient flows back through it.
inline Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

/// Q factor of the sign-fixed thin QR. Only the Q adjoint is propagated:
/// with M = -Qbar^T Q and copyltu(M) the symmetric matrix built from the
/// lower triangle of M, Abar = (Qbar + Q copyltu(M)) R^{-T}.
inline Var thin_qr_q(const Var& a) {
  QrResult qr = thin_qr(a.value());
  Matrix q = qr.q;
  return a.tape().record(std::move(q), {a}, [a, qr = std::move(qr)](const Matrix& g, Tape& t) {
    const std::size_t n = qr.r.rows();
    Matrix m = matmul_tn(g, qr.q);
    m *= -1.0;
    Matrix sym(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        sym(i, j) = m(i, j);
        sym(j, i) = m(i, j);
      }
    }
    Matrix b = g + rmo::matmul(qr.q, sym);
    // Abar = B R^{-T}: solve X R^T = B, i.e. R X^T = B^T (R upper).
    const std::size_t rows = b.rows();
    Matrix x(rows, n);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = n; j-- > 0;) {
        double s = b(i, j);
        for (std::size_t k = j + 1; k < n; ++k) s -= x(i, k) * qr.r(j, k);
        x(i, j) = s / qr.r(j, j);
      }
    }
    t.accumulate(a, x);
  });
}

}  // namespace rmo::ad
