#pragma once

// Finite-difference verification suites: tape primitives, the thin-QR
// pullback, task gradients and the truncated meta-gradient.

#include <functional>
#include <string>
#include <vector>

#include "rmo/autodiff.hpp"
#include "rmo/gradcheck.hpp"
#include "rmo/meta_trainer.hpp"
#include "rmo/random.hpp"
#include "rmo/tasks.hpp"

namespace rmo {

struct CheckResult {
  std::string suite;
  std::string name;
  ad::GradCheckReport report;
  double tolerance = 0.0;
  bool passed() const { return report.max_rel_err <= tolerance; }
};

struct SuiteOptions {
  double eps = 1e-5;
  double rel_tol = 1e-6;       // primitives, qr, tasks
  double meta_rel_tol = 1e-4;  // truncated meta-gradient
  std::size_t instances = 20;  // random instances per primitive
  std::uint64_t seed = 20240;
};

namespace detail {

inline Matrix uniform_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

/// Worst report over several instances.
inline ad::GradCheckReport worst(const ad::GradCheckReport& a, const ad::GradCheckReport& b) {
  ad::GradCheckReport r;
  r.max_abs_err = std::max(a.max_abs_err, b.max_abs_err);
  r.max_rel_err = std::max(a.max_rel_err, b.max_rel_err);
  r.probe_count = a.probe_count + b.probe_count;
  return r;
}

/// Builds a scalar test function: sum(weights .* op(x)), with the weights
/// drawn once per instance so every output entry matters.
using UnaryOp = std::function<ad::Var(ad::Tape&, const ad::Var&)>;

struct PrimitiveCase {
  std::string name;
  // Draws the input shape and a tape op for one instance.
  std::function<std::pair<Matrix, UnaryOp>(Rng&)> make;
};

inline ad::GradCheckReport check_case(const PrimitiveCase& c, const SuiteOptions& o, Rng& rng) {
  ad::GradCheckReport acc;
  for (std::size_t k = 0; k < o.instances; ++k) {
    auto [x, op] = c.make(rng);
    // Output shape of op, for the weight matrix.
    Matrix probe_out;
    {
      ad::Tape t;
      probe_out = op(t, t.constant(x)).value();
    }
    const Matrix weights = uniform_matrix(rng, probe_out.rows(), probe_out.cols());
    ad::ScalarTapeFn f = [op, weights](ad::Tape& t, const ad::Var& xv) {
      return ad::sum(ad::mul(op(t, xv), t.constant(weights)));
    };
    acc = worst(acc, ad::grad_check(f, x, o.eps));
  }
  return acc;
}

inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

inline std::vector<PrimitiveCase> primitive_cases() {
  using ad::Tape;
  using ad::Var;
  std::vector<PrimitiveCase> cases;
  auto unary = [&cases](std::string name, std::function<Var(const Var&)> f) {
    cases.push_back({std::move(name), [f](Rng& rng) {
                       Matrix x = uniform_matrix(rng, dim(rng, 1, 8), dim(rng, 1, 5));
                       return std::pair<Matrix, UnaryOp>(
                           x, [f](Tape&, const Var& v) { return f(v); });
                     }});
  };
  unary("sigmoid", [](const Var& v) { return ad::sigmoid(v); });
  unary("tanh", [](const Var& v) { return ad::tanh(v); });
  unary("square", [](const Var& v) { return ad::square(v); });
  unary("scale", [](const Var& v) { return ad::scale(v, -1.75); });
  unary("transpose", [](const Var& v) { return ad::transpose(v); });
  unary("sum", [](const Var& v) { return ad::sum(v); });
  unary("reshape", [](const Var& v) { return ad::reshape(v, v.cols(), v.rows()); });

  // Binary ops: differentiate with respect to one operand, the other fixed.
  auto binary = [&cases](std::string name, bool wrt_first,
                         std::function<std::pair<std::size_t, std::size_t>(Rng&, std::size_t, std::size_t)>
                             other_shape,
                         std::function<Var(const Var&, const Var&)> f) {
    cases.push_back({std::move(name), [=](Rng& rng) {
                       const std::size_t r = dim(rng, 1, 8), c = dim(rng, 1, 5);
                       Matrix x = uniform_matrix(rng, r, c);
                       const auto [orr, oc] = other_shape(rng, r, c);
                       Matrix other = uniform_matrix(rng, orr, oc);
                       return std::pair<Matrix, UnaryOp>(
                           x, [f, other, wrt_first](Tape& t, const Var& v) {
                             Var o = t.constant(other);
                             return wrt_first ? f(v, o) : f(o, v);
                           });
                     }});
  };
  auto same = [](Rng&, std::size_t r, std::size_t c) { return std::pair(r, c); };
  binary("add.lhs", true, same, [](const Var& a, const Var& b) { return ad::add(a, b); });
  binary("add.rhs", false, same, [](const Var& a, const Var& b) { return ad::add(a, b); });
  binary("sub.lhs", true, same, [](const Var& a, const Var& b) { return ad::sub(a, b); });
  binary("sub.rhs", false, same, [](const Var& a, const Var& b) { return ad::sub(a, b); });
  binary("mul.lhs", true, same, [](const Var& a, const Var& b) { return ad::mul(a, b); });
  binary("mul.rhs", false, same, [](const Var& a, const Var& b) { return ad::mul(a, b); });
  // x is r x c; the other factor is c x k (x on the left) or k x r (x on the right).
  binary("matmul.lhs", true, [](Rng& rng, std::size_t, std::size_t c) { return std::pair(c, dim(rng, 1, 5)); },
         [](const Var& a, const Var& b) { return ad::matmul(a, b); });
  binary("matmul.rhs", false, [](Rng& rng, std::size_t r, std::size_t) { return std::pair(dim(rng, 1, 8), r); },
         [](const Var& a, const Var& b) { return ad::matmul(a, b); });
  binary("add_row.matrix", true, [](Rng&, std::size_t, std::size_t c) { return std::pair<std::size_t, std::size_t>(1, c); },
         [](const Var& a, const Var& b) { return ad::add_row(a, b); });
  binary("scale_rows.matrix", true, [](Rng&, std::size_t r, std::size_t) { return std::pair<std::size_t, std::size_t>(r, 1); },
         [](const Var& a, const Var& b) { return ad::scale_rows(a, b); });
  binary("scale_cols.matrix", true, [](Rng&, std::size_t, std::size_t c) { return std::pair<std::size_t, std::size_t>(c, 1); },
         [](const Var& a, const Var& b) { return ad::scale_cols(a, b); });

  // Operand-is-a-vector cases.
  cases.push_back({"add_row.row", [](Rng& rng) {
                     const std::size_t r = dim(rng, 1, 8), c = dim(rng, 1, 5);
                     Matrix row = uniform_matrix(rng, 1, c);
                     Matrix a = uniform_matrix(rng, r, c);
                     return std::pair<Matrix, UnaryOp>(row, [a](Tape& t, const Var& v) {
                       return ad::add_row(t.constant(a), v);
                     });
                   }});
  cases.push_back({"scale_rows.diag", [](Rng& rng) {
                     const std::size_t r = dim(rng, 1, 8), c = dim(rng, 1, 5);
                     Matrix v = uniform_matrix(rng, r, 1);
                     Matrix a = uniform_matrix(rng, r, c);
                     return std::pair<Matrix, UnaryOp>(v, [a](Tape& t, const Var& x) {
                       return ad::scale_rows(t.constant(a), x);
                     });
                   }});
  cases.push_back({"scale_cols.diag", [](Rng& rng) {
                     const std::size_t r = dim(rng, 1, 8), c = dim(rng, 1, 5);
                     Matrix v = uniform_matrix(rng, c, 1);
                     Matrix a = uniform_matrix(rng, r, c);
                     return std::pair<Matrix, UnaryOp>(v, [a](Tape& t, const Var& x) {
                       return ad::scale_cols(t.constant(a), x);
                     });
                   }});
  cases.push_back({"slice_cols", [](Rng& rng) {
                     const std::size_t r = dim(rng, 1, 8), c = dim(rng, 1, 5);
                     const std::size_t begin = rng.index(c);
                     const std::size_t count = 1 + rng.index(c - begin);
                     return std::pair<Matrix, UnaryOp>(
                         uniform_matrix(rng, r, c), [begin, count](Tape&, const Var& x) {
                           return ad::slice_cols(x, begin, count);
                         });
                   }});
  return cases;
}

}  // namespace detail

inline std::vector<CheckResult> primitive_suite(const SuiteOptions& o) {
  Rng rng(o.seed);
  std::vector<CheckResult> out;
  for (const auto& c : detail::primitive_cases()) {
    out.push_back({"primitives", c.name, detail::check_case(c, o, rng), o.rel_tol});
  }
  return out;
}

inline std::vector<CheckResult> qr_suite(const SuiteOptions& o) {
  Rng rng(o.seed + 1);
  std::vector<CheckResult> out;
  const std::vector<std::pair<std::size_t, std::size_t>> shapes{{4, 2}, {5, 2}, {3, 3}, {6, 3},
                                                                {8, 5}, {7, 1}};
  for (const auto& [m, n] : shapes) {
    ad::GradCheckReport acc;
    for (std::size_t k = 0; k < o.instances; ++k) {
      const Matrix a = detail::uniform_matrix(rng, m, n);
      const Matrix weights = detail::uniform_matrix(rng, m, n);
      ad::ScalarTapeFn f = [weights](ad::Tape& t, const ad::Var& x) {
        return ad::sum(ad::mul(ad::thin_qr_q(x), t.constant(weights)));
      };
      acc = detail::worst(acc, ad::grad_check(f, a, o.eps));
    }
    out.push_back({"qr", "thin_qr_q." + std::to_string(m) + "x" + std::to_string(n), acc, o.rel_tol});
  }
  return out;
}

/// Task gradients. The classifier gradient is compared with ambient finite
/// differences; the pca gradient is only valid on the constraint set, so it
/// is compared through the retraction: Z -> loss(retract(W, proj_W(Z))) at
/// Z = 0 has gradient proj_W(egrad).
inline std::vector<CheckResult> task_suite(const SuiteOptions& o) {
  Rng rng(o.seed + 2);
  std::vector<CheckResult> out;
  ad::GradCheckReport pca, cls;
  for (std::size_t k = 0; k < o.instances; ++k) {
    const std::size_t d = detail::dim(rng, 2, 8);
    const std::size_t p = detail::dim(rng, 1, std::min<std::size_t>(d - 1, 5));  // p = d has no tangent directions
    const std::uint64_t s = rng.index(1u << 30);

    const ManifoldPoint w = random_point(ManifoldKind::grassmann(d, p), s);
    const Dataset data = synth_subspace(d, p, 12, 0.3, s + 1);
    const Matrix analytic = project_to_tangent(w, pca_loss_grad(w, data).egrad).v;
    const Matrix numeric = ad::central_difference(
        [&](const Matrix& z) {
          const ManifoldPoint moved{w.kind, thin_qr(w.w + project_to_tangent(w, z).v).q};
          return pca_loss_grad(moved, data).loss;
        },
        Matrix(d, p), o.eps);
    pca = detail::worst(pca, ad::compare_gradients(analytic, numeric));

    const std::size_t kc = std::max<std::size_t>(2, p);
    const std::size_t dc = std::max(d, kc);
    const ManifoldPoint wc = random_point(ManifoldKind::stiefel(dc, kc), s + 2);
    const Dataset cdata = synth_classifier(dc, kc, 10, 1.5, 0.1, s + 3);
    const Matrix canalytic = classifier_loss_grad(wc, cdata).egrad;
    const Matrix cnumeric = ad::central_difference(
        [&](const Matrix& m) { return classifier_loss_grad({wc.kind, m}, cdata).loss; }, wc.w,
        o.eps);
    cls = detail::worst(cls, ad::compare_gradients(canalytic, cnumeric));
  }
  out.push_back({"tasks", "pca.through_retraction", pca, o.rel_tol});
  out.push_back({"tasks", "classifier.ambient", cls, o.rel_tol});
  return out;
}

/// Recorded inputs of a small unroll for checking the truncated
/// meta-gradient: Grassmann(d, p) pca, T inner steps, a small network.
struct MetaCheckInstance {
  OptimizerParams params;
  std::vector<StepRecord> steps;
  AdaptOptions opts;
};

inline MetaCheckInstance make_meta_instance(std::size_t d, std::size_t p, std::size_t inner_steps,
                                            std::size_t hidden, std::size_t layers,
                                            std::uint64_t seed,
                                            AdaptMode mode = AdaptMode::Full) {
  Rng rng(seed);
  MetaCheckInstance inst;
  inst.params = OptimizerParams::initialized(hidden, layers, rng);
  // Larger weights than the default initialization so every path matters.
  inst.params.for_each_tensor([&rng](const std::string&, Matrix& m) {
    for (double& v : m.data()) v += rng.uniform(-0.5, 0.5);
  });
  inst.opts.mode = mode;
  const Dataset data = synth_subspace(d, p, 40, 0.2, seed + 1);
  std::vector<Member> members(1);
  members[0].param_id = 0;
  members[0].shape = TaskShape::make(TaskKind::Pca, d, p);
  members[0].data = &data;
  members[0].w = random_point(members[0].shape.kind, seed + 2);
  members[0].batch_rng = Rng(seed + 3);
  CoordinateState state(hidden, layers);
  UnrollResult u = unroll(inst.params, members, state, inner_steps, 16, MetaLossData::Batch,
                          inst.opts, false, true);
  inst.steps = std::move(u.replay);
  return inst;
}

inline ad::GradCheckReport check_meta_gradient(const MetaCheckInstance& inst, double eps) {
  const Matrix analytic = Matrix::column(flatten(replay_gradient(inst.params, inst.steps, inst.opts)));
  OptimizerParams probe = inst.params;
  std::vector<Matrix*> tensors;
  probe.for_each_tensor([&tensors](const std::string&, Matrix& m) { tensors.push_back(&m); });
  Matrix numeric(analytic.rows(), 1);
  std::size_t k = 0;
  for (Matrix* t : tensors) {
    for (double& v : t->data()) {
      const double orig = v;
      v = orig + eps;
      const double fp = replay_objective(probe, inst.steps, inst.opts);
      v = orig - eps;
      const double fm = replay_objective(probe, inst.steps, inst.opts);
      v = orig;
      numeric(k++, 0) = (fp - fm) / (2.0 * eps);
    }
  }
  return ad::compare_gradients(analytic, numeric);
}

inline std::vector<CheckResult> meta_suite(const SuiteOptions& o) {
  std::vector<CheckResult> out;
  const MetaCheckInstance inst = make_meta_instance(6, 3, 2, 2, 1, o.seed + 3);
  out.push_back({"meta", "grassmann6x3.T2.hidden2", check_meta_gradient(inst, o.eps), o.meta_rel_tol});
  const MetaCheckInstance deep = make_meta_instance(8, 3, 3, 3, 2, o.seed + 4);
  out.push_back({"meta", "grassmann8x3.T3.hidden3x2", check_meta_gradient(deep, o.eps), o.meta_rel_tol});
  return out;
}

inline std::vector<std::string> suite_names() { return {"primitives", "qr", "tasks", "meta"}; }

/// Runs one named suite, or all of them for an empty name.
inline std::vector<CheckResult> run_gradcheck(const std::string& only, const SuiteOptions& o) {
  std::vector<CheckResult> out;
  auto take = [&out](std::vector<CheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  if (only.empty() || only == "primitives") take(primitive_suite(o));
  if (only.empty() || only == "qr") take(qr_suite(o));
  if (only.empty() || only == "tasks") take(task_suite(o));
  if (only.empty() || only == "meta") take(meta_suite(o));
  if (out.empty()) throw ConfigError("unknown gradcheck suite '" + only + "'");
  return out;
}

}  // namespace rmo
