#pragma once

// Learned optimizer with row/column subspace adaptation.
//
// One step on a point W with Euclidean gradient E:
//   G     = proj_W(E)
//   r_i   = row_net(sum_j G_ij^2 / p)      for every row i
//   c_j   = col_net(sum_i G_ij^2 / d)      for every column j
//   Ghat  = diag(r) G diag(c)
//   W'    = retract_W(-proj_W(Ghat))

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rmo/autodiff.hpp"
#include "rmo/manifold.hpp"
#include "rmo/recurrent_net.hpp"

namespace rmo {

struct CovarianceDiagonals {
  std::vector<double> rhat;  // length d
  std::vector<double> chat;  // length p
};

/// Scaled squared row and column norms of G, i.e. diag(G G^T / p) and
/// diag(G^T G / d), without forming either product.
inline CovarianceDiagonals covariance_diagonals(const Matrix& g) {
  const std::size_t d = g.rows();
  const std::size_t p = g.cols();
  CovarianceDiagonals out{std::vector<double>(d, 0.0), std::vector<double>(p, 0.0)};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const double s = g(i, j) * g(i, j);
      out.rhat[i] += s;
      out.chat[j] += s;
    }
  }
  for (double& v : out.rhat) v /= static_cast<double>(p);
  for (double& v : out.chat) v /= static_cast<double>(d);
  return out;
}

struct AdaptationOutput {
  std::vector<double> rdiag;
  std::vector<double> cdiag;
};

/// Ghat_ij = rdiag_i * G_ij * cdiag_j.
inline Matrix refine_gradient(const AdaptationOutput& out, const Matrix& g) {
  if (out.rdiag.size() != g.rows() || out.cdiag.size() != g.cols()) {
    throw DimensionError("refine_gradient: diagonals of length (" +
                         std::to_string(out.rdiag.size()) + ", " +
                         std::to_string(out.cdiag.size()) + ") for G " + g.shape());
  }
  Matrix r = g;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) r(i, j) = out.rdiag[i] * g(i, j) * out.cdiag[j];
  return r;
}

/// Which adaptive factors are produced by the networks. The others are
/// fixed to the identity.
enum class AdaptMode {
  Full,       // both R and C learned
  RowOnly,    // C = I
  ColOnly,    // R = I
  Identity,   // R = C = I, a unit-step Riemannian gradient step
  Elementwise // no subspace structure: row_net scales every entry of G on its own
};

enum class InputTransform {
  Raw,  // statistics fed as they are
  Log   // ln(statistic + 1e-12)
};

inline std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::Full: return "full";
    case AdaptMode::RowOnly: return "row-only";
    case AdaptMode::ColOnly: return "col-only";
    case AdaptMode::Identity: return "identity";
    case AdaptMode::Elementwise: return "elementwise";
  }
  return "?";
}

struct AdaptOptions {
  AdaptMode mode = AdaptMode::Full;
  InputTransform input = InputTransform::Raw;
};

/// Recurrent state of every row, column (and, for the elementwise mode,
/// entry) of every registered parameter matrix.
class CoordinateState {
 public:
  struct Slot {
    std::size_t d = 0;
    std::size_t p = 0;
    CellState rows;
    CellState cols;
    CellState entries;
    friend bool operator==(const Slot&, const Slot&) = default;
  };

  CoordinateState() = default;
  CoordinateState(std::size_t hidden, std::size_t num_layers)
      : hidden_(hidden), layers_(num_layers) {}

  /// Slot for `param_id`, registering a zero state on first use.
  Slot& slot(std::size_t param_id, std::size_t d, std::size_t p) {
    auto it = slots_.find(param_id);
    if (it == slots_.end()) {
      Slot s;
      s.d = d;
      s.p = p;
      s.rows = CellState::zeros(d, hidden_, layers_);
      s.cols = CellState::zeros(p, hidden_, layers_);
      it = slots_.emplace(param_id, std::move(s)).first;
    } else if (it->second.d != d || it->second.p != p) {
      throw StateError("coordinate state for parameter " + std::to_string(param_id) +
                       " registered as " + Matrix::shape_string(it->second.d, it->second.p) +
                       ", now used with " + Matrix::shape_string(d, p));
    }
    return it->second;
  }

  bool contains(std::size_t param_id) const { return slots_.count(param_id) != 0; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t num_layers() const noexcept { return layers_; }

  /// Total coordinate forwards run through this state object.
  std::size_t forward_count() const noexcept { return forwards_; }
  void count_forwards(std::size_t n) noexcept { forwards_ += n; }

  /// Drops every registered slot; the forward counter is kept.
  void reset() { slots_.clear(); }

  friend bool operator==(const CoordinateState& a, const CoordinateState& b) {
    return a.hidden_ == b.hidden_ && a.layers_ == b.layers_ && a.slots_ == b.slots_;
  }

 private:
  std::size_t hidden_ = 20;
  std::size_t layers_ = 2;
  std::map<std::size_t, Slot> slots_;
  std::size_t forwards_ = 0;
};

namespace detail {

inline Matrix transform_inputs(std::vector<double> v, InputTransform t) {
  if (t == InputTransform::Log) {
    for (double& x : v) x = std::log(x + 1e-12);
  }
  return Matrix::column(v);
}

/// Runs one recurrent step of `net` over a batch of coordinates on the
/// tape. Incoming state enters as constants; the new state is written back.
inline ad::Var run_cells(ad::Tape& tape, const BoundNet& net, const Matrix& inputs,
                         CellState& state) {
  std::vector<ad::Var> h, c;
  for (std::size_t l = 0; l < state.h.size(); ++l) {
    h.push_back(tape.constant(state.h[l]));
    c.push_back(tape.constant(state.c[l]));
  }
  BoundCellOutput o = cell_forward(net, tape.constant(inputs), h, c);
  for (std::size_t l = 0; l < state.h.size(); ++l) {
    state.h[l] = o.h[l].value();
    state.c[l] = o.c[l].value();
  }
  return o.y;
}

/// Tangent projection with W fixed and X on the tape.
inline ad::Var project_on_tape(const ad::Var& w, const ad::Var& x, Family family) {
  ad::Var wtx = ad::matmul(ad::transpose(w), x);
  if (family == Family::Stiefel) {
    ad::Var sym = ad::scale(ad::add(wtx, ad::transpose(wtx)), 0.5);
    return ad::sub(x, ad::matmul(w, sym));
  }
  return ad::sub(x, ad::matmul(w, wtx));
}

}  // namespace detail

/// Result of recording one optimizer step on a tape.
struct TapeStep {
  ad::Var direction;  // proj_W(Ghat); the step moves W by -direction
  ad::Var rdiag;      // d x 1 (or d x p for the elementwise mode)
  ad::Var cdiag;      // p x 1
  Matrix riemannian_grad;
};

/// Records one step of the learned optimizer on `tape`. The point, the
/// Euclidean gradient and the incoming recurrent state are constants; only
/// the bound network tensors can be tracked. `slot` is advanced in place.
inline TapeStep record_step(ad::Tape& tape, const BoundNet& row_net, const BoundNet& col_net,
                            const ManifoldPoint& at, const Matrix& egrad,
                            CoordinateState::Slot& slot, const AdaptOptions& opts,
                            std::size_t* forwards = nullptr) {
  const std::size_t d = at.kind.d;
  const std::size_t p = at.kind.p;
  TapeStep out;
  out.riemannian_grad = project_to_tangent(at, egrad).v;
  const Matrix& g = out.riemannian_grad;
  ad::Var gv = tape.constant(g);
  ad::Var wv = tape.constant(at.w);
  std::size_t count = 0;

  ad::Var refined;
  if (opts.mode == AdaptMode::Elementwise) {
    if (slot.entries.h.empty()) {
      slot.entries = CellState::zeros(d * p, row_net.hidden, row_net.layers.size());
    }
    std::vector<double> sq(d * p);
    for (std::size_t k = 0; k < sq.size(); ++k) sq[k] = g.data()[k] * g.data()[k];
    ad::Var y = detail::run_cells(tape, row_net, detail::transform_inputs(std::move(sq), opts.input),
                                  slot.entries);
    count += d * p;
    out.rdiag = ad::reshape(y, d, p);
    out.cdiag = tape.constant(Matrix(p, 1, 1.0));
    refined = ad::mul(out.rdiag, gv);
  } else {
    CovarianceDiagonals cov = covariance_diagonals(g);
    const bool learn_r = opts.mode == AdaptMode::Full || opts.mode == AdaptMode::RowOnly;
    const bool learn_c = opts.mode == AdaptMode::Full || opts.mode == AdaptMode::ColOnly;
    if (learn_r) {
      out.rdiag = detail::run_cells(tape, row_net,
                                    detail::transform_inputs(std::move(cov.rhat), opts.input),
                                    slot.rows);
      count += d;
    } else {
      out.rdiag = tape.constant(Matrix(d, 1, 1.0));
    }
    if (learn_c) {
      out.cdiag = detail::run_cells(tape, col_net,
                                    detail::transform_inputs(std::move(cov.chat), opts.input),
                                    slot.cols);
      count += p;
    } else {
      out.cdiag = tape.constant(Matrix(p, 1, 1.0));
    }
    refined = ad::scale_cols(ad::scale_rows(gv, out.rdiag), out.cdiag);
  }
  out.direction = detail::project_on_tape(wv, refined, at.kind.family);
  if (forwards) *forwards += count;
  return out;
}

/// Runs both networks over the rows and columns of G and returns the
/// diagonals of R and C. Performs exactly d + p coordinate forwards in the
/// full mode.
inline AdaptationOutput adapt(const OptimizerParams& params, const Matrix& g,
                              CoordinateState& state, std::size_t param_id,
                              const AdaptOptions& opts = {}) {
  if (opts.mode == AdaptMode::Elementwise) {
    throw ConfigError("adapt: the elementwise mode has no row/column diagonals");
  }
  CoordinateState::Slot& slot = state.slot(param_id, g.rows(), g.cols());
  AdaptationOutput out{std::vector<double>(g.rows(), 1.0), std::vector<double>(g.cols(), 1.0)};
  CovarianceDiagonals cov = covariance_diagonals(g);
  if (opts.mode == AdaptMode::Full || opts.mode == AdaptMode::RowOnly) {
    out.rdiag = cell_forward(params.row_net, detail::transform_inputs(cov.rhat, opts.input).data(),
                             slot.rows);
    state.count_forwards(g.rows());
  }
  if (opts.mode == AdaptMode::Full || opts.mode == AdaptMode::ColOnly) {
    out.cdiag = cell_forward(params.col_net, detail::transform_inputs(cov.chat, opts.input).data(),
                             slot.cols);
    state.count_forwards(g.cols());
  }
  return out;
}

/// One learned-optimizer update of P, advancing the coordinate state of
/// `param_id`. A zero update direction returns P unchanged.
inline ManifoldPoint optimizer_step(const OptimizerParams& params, const ManifoldPoint& at,
                                    const Matrix& egrad, CoordinateState& state,
                                    std::size_t param_id, const AdaptOptions& opts = {}) {
  if (!egrad.same_shape(at.w)) {
    throw DimensionError("optimizer_step: gradient " + egrad.shape() + " for point " +
                         at.w.shape());
  }
  CoordinateState::Slot& slot = state.slot(param_id, at.kind.d, at.kind.p);
  ad::Tape tape;
  BoundNet row = BoundNet::bind(tape, params.row_net, false);
  BoundNet col = BoundNet::bind(tape, params.col_net, false);
  std::size_t forwards = 0;
  TapeStep step = record_step(tape, row, col, at, egrad, slot, opts, &forwards);
  state.count_forwards(forwards);
  return retract(at, TangentVector{at.kind, -1.0 * step.direction.value()});
}

}  // namespace rmo
