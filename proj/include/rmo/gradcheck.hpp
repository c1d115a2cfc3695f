#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "rmo/autodiff.hpp"

namespace rmo::ad {

struct GradCheckReport {
  double max_abs_err = 0.0;
  // Largest coordinate error divided by the larger infinity norm of the
  // two gradients. Normalizing by the gradient scale rather than by each
  // coordinate keeps near-zero coordinates from amplifying rounding noise.
  double max_rel_err = 0.0;
  std::size_t probe_count = 0;
};

/// Scalar function of one matrix input, evaluated on the given tape.
using ScalarTapeFn = std::function<Var(Tape&, const Var&)>;

inline double evaluate_scalar(const ScalarTapeFn& f, const Matrix& x) {
  Tape tape;
  Var y = f(tape, tape.constant(x));
  if (y.rows() != 1 || y.cols() != 1) {
    throw DimensionError("grad_check: function must return 1x1, got " + y.value().shape());
  }
  return y.value()(0, 0);
}

inline Matrix tape_gradient(const ScalarTapeFn& f, const Matrix& x) {
  Tape tape;
  Var xv = tape.leaf(x);
  Var y = f(tape, xv);
  tape.backward(y);
  return tape.grad(xv);
}

/// Central differences (f(x+eps e) - f(x-eps e)) / 2 eps per coordinate.
inline Matrix central_difference(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                 double eps) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = probe.data()[k];
    probe.data()[k] = orig + eps;
    const double fp = f(probe);
    probe.data()[k] = orig - eps;
    const double fm = f(probe);
    probe.data()[k] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite function value at coordinate " +
                         std::to_string(k));
    }
    g.data()[k] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

inline GradCheckReport compare_gradients(const Matrix& analytic, const Matrix& numeric) {
  if (!analytic.same_shape(numeric)) {
    throw DimensionError("compare_gradients: " + analytic.shape() + " vs " + numeric.shape());
  }
  GradCheckReport r;
  r.probe_count = analytic.size();
  const double scale = std::max(analytic.max_abs(), numeric.max_abs());
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    r.max_abs_err = std::max(r.max_abs_err, std::abs(analytic.data()[k] - numeric.data()[k]));
  }
  r.max_rel_err = scale > 0.0 ? r.max_abs_err / scale : 0.0;
  return r;
}

inline GradCheckReport grad_check(const ScalarTapeFn& f, const Matrix& x, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw Error("grad_check: eps must lie in (0, 1e-2]");
  }
  const Matrix analytic = tape_gradient(f, x);
  const Matrix numeric =
      central_difference([&f](const Matrix& p) { return evaluate_scalar(f, p); }, x, eps);
  return compare_gradients(analytic, numeric);
}

}  // namespace rmo::ad
