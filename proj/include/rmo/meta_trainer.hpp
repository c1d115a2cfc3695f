#pragma once

// Bi-level training of the learned optimizer.
//
// Meta-gradients are truncated per inner step: the point entering step t,
// the gradient statistics fed to the networks and the incoming recurrent
// state are constants on that step's tape. Only
//   statistics -> cells -> heads -> refine -> projection -> retraction -> loss
// is differentiated, and the per-step contributions are summed.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "rmo/autodiff.hpp"
#include "rmo/manifold.hpp"
#include "rmo/random.hpp"
#include "rmo/recurrent_net.hpp"
#include "rmo/subspace_optimizer.hpp"
#include "rmo/tasks.hpp"

namespace rmo {

/// Raised when the meta-objective stops being finite.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, long last_good_step)
      : NumericError(what), last_good_(last_good_step) {}
  /// Last outer step that completed with a finite objective, -1 if none.
  long last_good_step() const noexcept { return last_good_; }

 private:
  long last_good_;
};

/// A manifold shape together with the task it is trained or evaluated on.
struct TaskShape {
  TaskKind task = TaskKind::Pca;
  ManifoldKind kind;

  /// pca lives on Grassmann(d, p), the classifier on Stiefel(d, classes).
  static TaskShape make(TaskKind task, std::size_t d, std::size_t p) {
    return {task, task == TaskKind::Pca ? ManifoldKind::grassmann(d, p)
                                        : ManifoldKind::stiefel(d, p)};
  }
  friend bool operator==(const TaskShape&, const TaskShape&) = default;
};

struct DataConfig {
  std::size_t n = 512;
  double noise = 0.1;           // pca: additive noise
  std::size_t p_true = 0;       // pca: planted rank, 0 means the shape's p
  double feature_scale = 2.0;   // classifier: feature standard deviation
  double label_noise = 0.05;    // classifier: fraction of relabeled samples
};

inline Dataset make_dataset(const TaskShape& shape, const DataConfig& cfg, std::uint64_t seed) {
  if (shape.task == TaskKind::Pca) {
    const std::size_t p_true = cfg.p_true == 0 ? shape.kind.p : cfg.p_true;
    return synth_subspace(shape.kind.d, p_true, cfg.n, cfg.noise, seed);
  }
  return synth_classifier(shape.kind.d, shape.kind.p, cfg.n, cfg.feature_scale, cfg.label_noise,
                          seed);
}

enum class OuterRule { Adam, Sgd };
enum class MetaLossData { Batch, Full };

struct MetaConfig {
  std::vector<TaskShape> shapes{TaskShape::make(TaskKind::Pca, 20, 4)};
  std::size_t inner_steps = 5;    // T
  std::size_t outer_steps = 300;  // tau
  std::size_t batch_size = 64;
  double outer_lr = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  OuterRule rule = OuterRule::Adam;
  std::uint64_t seed = 1;
  std::uint64_t phi_seed = 0;  // initialization of the networks
  std::size_t hidden = 20;
  std::size_t layers = 2;
  AdaptOptions adapt;
  // Points and recurrent state are redrawn every `reset_every` outer steps;
  // 1 redraws them at the start of every outer step.
  std::size_t reset_every = 1;
  MetaLossData meta_loss_data = MetaLossData::Batch;
  std::vector<std::uint64_t> data_seeds{1};
  DataConfig data;
  bool record_wall_clock = false;

  void validate() const {
    if (inner_steps < 1) throw ConfigError("inner_steps must be >= 1");
    if (outer_steps < 1) throw ConfigError("outer_steps must be >= 1");
    if (!(outer_lr > 0.0)) throw ConfigError("outer_lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (reset_every < 1) throw ConfigError("reset_every must be >= 1");
    if (shapes.empty()) throw ConfigError("at least one shape is required");
    if (data_seeds.empty()) throw ConfigError("at least one data seed is required");
    if (hidden < 1 || layers < 1) throw ConfigError("hidden and layers must be >= 1");
    if (adapt.mode == AdaptMode::Identity) throw ConfigError("identity adaptation has nothing to train");
  }
};

/// One Riemannian parameter driven by the optimizer during an unroll.
struct Member {
  std::size_t param_id = 0;
  TaskShape shape;
  const Dataset* data = nullptr;
  ManifoldPoint w;
  Rng batch_rng{0};
};

/// Minibatch of `batch_size` distinct samples (the whole set if smaller).
inline Dataset draw_batch(const Dataset& data, std::size_t batch_size, Rng& rng) {
  if (batch_size >= data.size()) return data;
  return data.subset(rng.sample_without_replacement(data.size(), batch_size));
}

struct InnerRecord {
  std::size_t outer_step = 0;
  std::size_t inner_step = 0;
  std::size_t param_id = 0;
  double loss = 0.0;
  double feasibility = 0.0;
  double wall_ms = 0.0;
};

struct OuterRecord {
  std::size_t outer_step = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
};

struct TrajectoryRecord {
  std::vector<InnerRecord> inner;
  std::vector<OuterRecord> outer;
};

/// Everything one inner step of one member depends on, for replaying the
/// truncated objective with different network weights.
struct StepRecord {
  TaskKind task = TaskKind::Pca;
  ManifoldPoint w;
  Matrix egrad;
  CoordinateState::Slot state;
  Dataset loss_data;
};

/// Sum of the recorded post-update losses.
inline double meta_objective(const TrajectoryRecord& traj) {
  double j = 0.0;
  for (const InnerRecord& r : traj.inner) j += r.loss;
  return j;
}

namespace detail {

inline std::vector<ad::Var> bound_vars(const BoundNet& row, const BoundNet& col) {
  std::vector<ad::Var> vars;
  row.for_each_var([&vars](const ad::Var& v) { vars.push_back(v); });
  col.for_each_var([&vars](const ad::Var& v) { vars.push_back(v); });
  return vars;
}

inline void add_tape_grads(OptimizerParams& acc, const ad::Tape& tape,
                           const std::vector<ad::Var>& vars) {
  std::size_t k = 0;
  acc.for_each_tensor([&](const std::string&, Matrix& m) { m += tape.grad(vars[k++]); });
}

/// Records retract(W - direction) on the tape, evaluates the loss at the
/// new point and appends <egrad(W'), W'> to `seed_terms` so the backward pass
/// is seeded with the task gradient at W'. Returns the post-update loss.
struct StepTail {
  ManifoldPoint next;
  double loss = 0.0;
};

inline StepTail finish_step(ad::Tape& tape, const ManifoldPoint& at, const TapeStep& step,
                            TaskKind task, const Dataset& loss_data, double loss_weight,
                            bool want_grad, std::vector<ad::Var>& seed_terms) {
  StepTail tail;
  tail.next = retract(at, TangentVector{at.kind, -1.0 * step.direction.value()});
  const LossGrad post = task_loss_grad(task, tail.next, loss_data);
  tail.loss = post.loss;
  if (want_grad) {
    ad::Var q = ad::thin_qr_q(ad::sub(tape.constant(at.w), step.direction));
    seed_terms.push_back(ad::sum(ad::mul(q, tape.constant(loss_weight * post.egrad))));
  }
  return tail;
}

inline void backward_terms(ad::Tape& tape, const std::vector<ad::Var>& terms) {
  if (terms.empty()) return;
  ad::Var total = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) total = ad::add(total, terms[k]);
  tape.backward(total);
}

}  // namespace detail

struct UnrollResult {
  double objective = 0.0;
  OptimizerParams grad;
  std::vector<InnerRecord> records;
  std::vector<StepRecord> replay;
};

/// Runs T inner steps over every member, updating their points and the
/// coordinate state. With `want_grad` the truncated meta-gradient is
/// accumulated; with `keep_replay` every step's inputs are kept.
inline UnrollResult unroll(const OptimizerParams& params, std::vector<Member>& members,
                           CoordinateState& state, std::size_t inner_steps,
                           std::size_t batch_size, MetaLossData loss_data,
                           const AdaptOptions& opts, bool want_grad, bool keep_replay = false,
                           double loss_weight = 1.0, bool wall_clock = false) {
  UnrollResult out;
  out.grad = OptimizerParams::zeros(params.hidden(), params.num_layers());
  for (std::size_t t = 0; t < inner_steps; ++t) {
    ad::Tape tape;
    BoundNet row = BoundNet::bind(tape, params.row_net, want_grad);
    BoundNet col = BoundNet::bind(tape, params.col_net, want_grad);
    std::vector<ad::Var> seed_terms;
    for (Member& m : members) {
      const auto t0 = std::chrono::steady_clock::now();
      const Dataset batch = draw_batch(*m.data, batch_size, m.batch_rng);
      const LossGrad lg = task_loss_grad(m.shape.task, m.w, batch);
      CoordinateState::Slot& slot = state.slot(m.param_id, m.shape.kind.d, m.shape.kind.p);
      const Dataset& ldata = loss_data == MetaLossData::Full ? *m.data : batch;
      if (keep_replay) out.replay.push_back({m.shape.task, m.w, lg.egrad, slot, ldata});
      std::size_t fwd = 0;
      const TapeStep step = record_step(tape, row, col, m.w, lg.egrad, slot, opts, &fwd);
      state.count_forwards(fwd);
      const detail::StepTail tail = detail::finish_step(tape, m.w, step, m.shape.task, ldata,
                                                        loss_weight, want_grad, seed_terms);
      if (!std::isfinite(tail.loss)) {
        throw NumericError("non-finite loss at inner step " + std::to_string(t) +
                           " for parameter " + std::to_string(m.param_id));
      }
      m.w = tail.next;
      out.objective += loss_weight * tail.loss;
      double ms = 0.0;
      if (wall_clock) {
        ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                 .count();
      }
      out.records.push_back({0, t, m.param_id, tail.loss, feasibility_violation(m.w), ms});
    }
    if (want_grad) {
      detail::backward_terms(tape, seed_terms);
      detail::add_tape_grads(out.grad, tape, detail::bound_vars(row, col));
    }
  }
  return out;
}

/// Truncated objective rebuilt from recorded step inputs: sum over
/// records of loss(retract(W_t - direction(params; W_t, egrad_t, state_t))).
inline double replay_objective(const OptimizerParams& params, const std::vector<StepRecord>& steps,
                               const AdaptOptions& opts, double loss_weight = 1.0) {
  double j = 0.0;
  for (const StepRecord& s : steps) {
    ad::Tape tape;
    BoundNet row = BoundNet::bind(tape, params.row_net, false);
    BoundNet col = BoundNet::bind(tape, params.col_net, false);
    CoordinateState::Slot slot = s.state;
    std::vector<ad::Var> unused;
    const TapeStep step = record_step(tape, row, col, s.w, s.egrad, slot, opts);
    j += loss_weight *
         detail::finish_step(tape, s.w, step, s.task, s.loss_data, 1.0, false, unused).loss;
  }
  return j;
}

/// Gradient of replay_objective with respect to every network tensor.
inline OptimizerParams replay_gradient(const OptimizerParams& params,
                                       const std::vector<StepRecord>& steps,
                                       const AdaptOptions& opts, double loss_weight = 1.0) {
  OptimizerParams grad = OptimizerParams::zeros(params.hidden(), params.num_layers());
  for (const StepRecord& s : steps) {
    ad::Tape tape;
    BoundNet row = BoundNet::bind(tape, params.row_net, true);
    BoundNet col = BoundNet::bind(tape, params.col_net, true);
    CoordinateState::Slot slot = s.state;
    std::vector<ad::Var> terms;
    const TapeStep step = record_step(tape, row, col, s.w, s.egrad, slot, opts);
    detail::finish_step(tape, s.w, step, s.task, s.loss_data, loss_weight, true, terms);
    detail::backward_terms(tape, terms);
    detail::add_tape_grads(grad, tape, detail::bound_vars(row, col));
  }
  return grad;
}

/// Truncated meta-gradient of one unroll. Members and state are advanced.
inline OptimizerParams meta_gradient(const OptimizerParams& params, std::vector<Member>& members,
                                     CoordinateState& state, std::size_t inner_steps,
                                     std::size_t batch_size,
                                     MetaLossData loss_data = MetaLossData::Batch,
                                     const AdaptOptions& opts = {}) {
  return unroll(params, members, state, inner_steps, batch_size, loss_data, opts, true).grad;
}

/// Flattened copy of every tensor, in for_each_tensor order.
inline std::vector<double> flatten(const OptimizerParams& p) {
  std::vector<double> out;
  p.for_each_tensor([&out](const std::string&, const Matrix& m) {
    out.insert(out.end(), m.data().begin(), m.data().end());
  });
  return out;
}

inline double grad_norm(const OptimizerParams& g) {
  double s = 0.0;
  for (double v : flatten(g)) s += v * v;
  return std::sqrt(s);
}

struct AdamState {
  OptimizerParams m;
  OptimizerParams v;
  std::size_t t = 0;

  static AdamState zeros(std::size_t hidden, std::size_t layers) {
    return {OptimizerParams::zeros(hidden, layers), OptimizerParams::zeros(hidden, layers), 0};
  }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Advances the step counter first, so the first call
/// uses t = 1.
inline void adam_update(OptimizerParams& phi, const OptimizerParams& grad, AdamState& s,
                        const AdamConfig& c) {
  ++s.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
  std::vector<Matrix*> ms, vs;
  std::vector<const Matrix*> gs;
  s.m.for_each_tensor([&ms](const std::string&, Matrix& x) { ms.push_back(&x); });
  s.v.for_each_tensor([&vs](const std::string&, Matrix& x) { vs.push_back(&x); });
  grad.for_each_tensor([&gs](const std::string&, const Matrix& x) { gs.push_back(&x); });
  std::size_t k = 0;
  phi.for_each_tensor([&](const std::string&, Matrix& p) {
    auto pd = p.data();
    auto md = ms[k]->data();
    auto vd = vs[k]->data();
    auto gd = gs[k]->data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gd[i];
      vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      pd[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    ++k;
  });
}

inline void sgd_update(OptimizerParams& phi, const OptimizerParams& grad, double lr) {
  std::vector<const Matrix*> gs;
  grad.for_each_tensor([&gs](const std::string&, const Matrix& x) { gs.push_back(&x); });
  std::size_t k = 0;
  phi.for_each_tensor([&](const std::string&, Matrix& p) { p -= lr * *gs[k++]; });
}

struct TrainResult {
  OptimizerParams params;
  AdamState adam;
  TrajectoryRecord trajectory;
  std::size_t outer_steps_done = 0;
};

/// Training datasets, one per (data seed, shape), in that nesting order.
inline std::vector<Dataset> training_datasets(const MetaConfig& cfg) {
  std::vector<Dataset> out;
  for (std::uint64_t s : cfg.data_seeds)
    for (const TaskShape& shape : cfg.shapes) out.push_back(make_dataset(shape, cfg.data, s));
  return out;
}

inline TrainResult train(const MetaConfig& cfg) {
  cfg.validate();
  Rng phi_rng(cfg.phi_seed);
  TrainResult res;
  res.params = OptimizerParams::initialized(cfg.hidden, cfg.layers, phi_rng);
  res.adam = AdamState::zeros(cfg.hidden, cfg.layers);
  const std::vector<Dataset> datasets = training_datasets(cfg);

  Rng master(cfg.seed);
  std::vector<Member> members(datasets.size());
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    members[k].param_id = k;
    members[k].shape = cfg.shapes[k % cfg.shapes.size()];
    members[k].data = &datasets[k];
  }
  CoordinateState state(cfg.hidden, cfg.layers);
  const AdamConfig adam{cfg.outer_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};

  for (std::size_t outer = 0; outer < cfg.outer_steps; ++outer) {
    if (outer % cfg.reset_every == 0) {
      state.reset();
      for (Member& m : members) {
        m.w = random_point(m.shape.kind, master.index(1u << 31));
        m.batch_rng = Rng(master.index(1u << 31));
      }
    }
    UnrollResult u;
    try {
      u = unroll(res.params, members, state, cfg.inner_steps, cfg.batch_size, cfg.meta_loss_data,
                 cfg.adapt, true, false, 1.0, cfg.record_wall_clock);
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged at outer step " + std::to_string(outer) + ": " +
                                e.what(),
                            static_cast<long>(outer) - 1);
    }
    const double gn = grad_norm(u.grad);
    if (!std::isfinite(u.objective) || !std::isfinite(gn)) {
      throw DivergenceError("non-finite meta-objective at outer step " + std::to_string(outer),
                            static_cast<long>(outer) - 1);
    }
    for (InnerRecord& r : u.records) {
      r.outer_step = outer;
      res.trajectory.inner.push_back(r);
    }
    res.trajectory.outer.push_back({outer, u.objective, gn});
    if (cfg.rule == OuterRule::Adam) {
      adam_update(res.params, u.grad, res.adam, adam);
    } else {
      sgd_update(res.params, u.grad, cfg.outer_lr);
      ++res.adam.t;
    }
    res.outer_steps_done = outer + 1;
  }
  return res;
}

namespace detail {
inline std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace detail

/// CSV: outer_step,inner_step,param_id,loss,feasibility,wall_ms.
inline std::string trajectory_csv(const TrajectoryRecord& traj) {
  std::string out = "outer_step,inner_step,param_id,loss,feasibility,wall_ms\n";
  for (const InnerRecord& r : traj.inner) {
    out += std::to_string(r.outer_step) + "," + std::to_string(r.inner_step) + "," +
           std::to_string(r.param_id) + "," + detail::fmt9(r.loss) + "," +
           detail::fmt9(r.feasibility) + "," + detail::fmt9(r.wall_ms) + "\n";
  }
  return out;
}

/// CSV: outer_step,objective,grad_norm.
inline std::string outer_csv(const TrajectoryRecord& traj) {
  std::string out = "outer_step,objective,grad_norm\n";
  for (const OuterRecord& r : traj.outer) {
    out += std::to_string(r.outer_step) + "," + detail::fmt9(r.objective) + "," +
           detail::fmt9(r.grad_norm) + "\n";
  }
  return out;
}

}  // namespace rmo
