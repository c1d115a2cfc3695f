#pragma once

#include <cmath>
#include <vector>

#include "rmo/manifold.hpp"
#include "rmo/subspace_optimizer.hpp"

namespace rmo {

/// Per-parameter state of the handcrafted optimizers.
struct BaselineState {
  Matrix momentum;             // d x p, empty until first use
  std::vector<double> u_row;   // d
  std::vector<double> u_col;   // p
  std::size_t step_count = 0;

  static BaselineState zeros(std::size_t d, std::size_t p) {
    return {Matrix(d, p), std::vector<double>(d, 0.0), std::vector<double>(p, 0.0), 0};
  }
};

/// W' = retract(-alpha proj_W(egrad)).
inline ManifoldPoint rsgd_step(const ManifoldPoint& at, const Matrix& egrad, double alpha) {
  if (alpha < 0.0) throw ConfigError("rsgd_step: alpha must be >= 0");
  const Matrix g = project_to_tangent(at, egrad).v;
  return retract(at, TangentVector{at.kind, -alpha * g});
}

namespace detail {
inline void ensure_baseline_state(BaselineState& s, const ManifoldPoint& at) {
  if (s.momentum.empty()) s.momentum = Matrix(at.kind.d, at.kind.p);
  if (s.u_row.empty()) s.u_row.assign(at.kind.d, 0.0);
  if (s.u_col.empty()) s.u_col.assign(at.kind.p, 0.0);
  if (!s.momentum.same_shape(at.w) || s.u_row.size() != at.kind.d ||
      s.u_col.size() != at.kind.p) {
    throw StateError("baseline state shaped for " + s.momentum.shape() + ", point is " +
                     at.w.shape());
  }
}
}  // namespace detail

/// Heavy-ball momentum. The stored buffer lives in the tangent space of
/// the previous point and is moved to the current one by projection.
inline ManifoldPoint rsgdm_step(const ManifoldPoint& at, const Matrix& egrad, BaselineState& state,
                                double alpha, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("rsgdm_step: beta must lie in [0, 1)");
  if (alpha < 0.0) throw ConfigError("rsgdm_step: alpha must be >= 0");
  detail::ensure_baseline_state(state, at);
  Matrix m = project_to_tangent(at, egrad).v;
  if (beta != 0.0) m += beta * transport_by_projection(at, state.momentum).v;
  state.momentum = m;
  ++state.step_count;
  return retract(at, TangentVector{at.kind, -alpha * m});
}

/// Row/column diagonal preconditioner built from running averages of the
/// covariance diagonals, applied as fourth roots on both sides.
inline ManifoldPoint rasa_like_step(const ManifoldPoint& at, const Matrix& egrad,
                                    BaselineState& state, double alpha, double beta2,
                                    double epsilon) {
  if (!(beta2 >= 0.0 && beta2 <= 1.0)) throw ConfigError("rasa_like_step: beta2 must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw ConfigError("rasa_like_step: epsilon must be > 0");
  detail::ensure_baseline_state(state, at);
  const Matrix g = project_to_tangent(at, egrad).v;
  const CovarianceDiagonals cov = covariance_diagonals(g);
  for (std::size_t i = 0; i < state.u_row.size(); ++i)
    state.u_row[i] = beta2 * state.u_row[i] + (1.0 - beta2) * cov.rhat[i];
  for (std::size_t j = 0; j < state.u_col.size(); ++j)
    state.u_col[j] = beta2 * state.u_col[j] + (1.0 - beta2) * cov.chat[j];
  AdaptationOutput scales{state.u_row, state.u_col};
  for (double& v : scales.rdiag) v = 1.0 / std::sqrt(std::sqrt(v + epsilon));
  for (double& v : scales.cdiag) v = 1.0 / std::sqrt(std::sqrt(v + epsilon));
  const Matrix refined = project_to_tangent(at, refine_gradient(scales, g)).v;
  ++state.step_count;
  return retract(at, TangentVector{at.kind, -alpha * refined});
}

}  // namespace rmo
