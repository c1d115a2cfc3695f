#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmo/baselines.hpp"
#include "rmo/meta_trainer.hpp"
#include "rmo/subspace_optimizer.hpp"
#include "rmo/tasks.hpp"

namespace rmo {

enum class OptimizerKind { Rsgd, Rsgdm, RasaLike, Learned, RowOnly, ColOnly, NoSubspaceLstm };

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "rsgd") return OptimizerKind::Rsgd;
  if (s == "rsgdm") return OptimizerKind::Rsgdm;
  if (s == "rasa-like") return OptimizerKind::RasaLike;
  if (s == "learned") return OptimizerKind::Learned;
  if (s == "row-only") return OptimizerKind::RowOnly;
  if (s == "col-only") return OptimizerKind::ColOnly;
  if (s == "no-subspace-lstm") return OptimizerKind::NoSubspaceLstm;
  throw ConfigError("unknown optimizer '" + s +
                    "' (expected rsgd, rsgdm, rasa-like, learned, row-only, col-only or "
                    "no-subspace-lstm)");
}

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Rsgd: return "rsgd";
    case OptimizerKind::Rsgdm: return "rsgdm";
    case OptimizerKind::RasaLike: return "rasa-like";
    case OptimizerKind::Learned: return "learned";
    case OptimizerKind::RowOnly: return "row-only";
    case OptimizerKind::ColOnly: return "col-only";
    case OptimizerKind::NoSubspaceLstm: return "no-subspace-lstm";
  }
  return "?";
}

inline bool uses_network(OptimizerKind k) {
  return k == OptimizerKind::Learned || k == OptimizerKind::RowOnly ||
         k == OptimizerKind::ColOnly || k == OptimizerKind::NoSubspaceLstm;
}

inline AdaptMode adapt_mode_for(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::RowOnly: return AdaptMode::RowOnly;
    case OptimizerKind::ColOnly: return AdaptMode::ColOnly;
    case OptimizerKind::NoSubspaceLstm: return AdaptMode::Elementwise;
    default: return AdaptMode::Full;
  }
}

struct EvalConfig {
  OptimizerKind optimizer = OptimizerKind::Rsgd;
  double alpha = 0.01;
  double beta = 0.9;    // rsgdm momentum
  double beta2 = 0.99;  // rasa-like accumulator decay
  double epsilon = 1e-8;
  std::size_t steps = 200;
  std::size_t batch_size = 64;
  InputTransform input = InputTransform::Raw;
  DataConfig data;
};

struct EvalPoint {
  std::size_t step = 0;
  double loss = 0.0;
  double feasibility = 0.0;
};

/// Loss curve (on the full dataset) of one shape in an evaluation run.
struct EvalCurve {
  TaskShape shape;
  std::uint64_t seed = 0;
  std::vector<EvalPoint> points;  // steps + 1 entries, step 0 is the start
};

/// Runs the configured optimizer on every shape at once. Data, the initial
/// points and the minibatch streams derive from `seed`; network-driven
/// optimizers share one coordinate-state object across all shapes.
inline std::vector<EvalCurve> evaluate_run(const EvalConfig& cfg, const OptimizerParams* params,
                                           const std::vector<TaskShape>& shapes,
                                           std::uint64_t seed) {
  if (uses_network(cfg.optimizer) && params == nullptr) {
    throw ConfigError("optimizer '" + to_string(cfg.optimizer) + "' needs a checkpoint");
  }
  Rng seeds(seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<Dataset> data;
  std::vector<Member> members(shapes.size());
  std::vector<BaselineState> baseline(shapes.size());
  for (std::size_t k = 0; k < shapes.size(); ++k) data.push_back(make_dataset(shapes[k], cfg.data, seed));
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    members[k].param_id = k;
    members[k].shape = shapes[k];
    members[k].data = &data[k];
    members[k].w = random_point(shapes[k].kind, seeds.index(1u << 31));
    members[k].batch_rng = Rng(seeds.index(1u << 31));
  }
  CoordinateState state = params ? CoordinateState(params->hidden(), params->num_layers())
                                 : CoordinateState();
  const AdaptOptions opts{adapt_mode_for(cfg.optimizer), cfg.input};

  std::vector<EvalCurve> curves(shapes.size());
  auto record = [&](std::size_t step) {
    for (std::size_t k = 0; k < members.size(); ++k) {
      const double loss = task_loss_grad(shapes[k].task, members[k].w, data[k]).loss;
      curves[k].points.push_back({step, loss, feasibility_violation(members[k].w)});
    }
  };
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    curves[k].shape = shapes[k];
    curves[k].seed = seed;
  }
  record(0);
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    for (std::size_t k = 0; k < members.size(); ++k) {
      Member& m = members[k];
      const Dataset batch = draw_batch(data[k], cfg.batch_size, m.batch_rng);
      const Matrix egrad = task_loss_grad(m.shape.task, m.w, batch).egrad;
      switch (cfg.optimizer) {
        case OptimizerKind::Rsgd: m.w = rsgd_step(m.w, egrad, cfg.alpha); break;
        case OptimizerKind::Rsgdm:
          m.w = rsgdm_step(m.w, egrad, baseline[k], cfg.alpha, cfg.beta);
          break;
        case OptimizerKind::RasaLike:
          m.w = rasa_like_step(m.w, egrad, baseline[k], cfg.alpha, cfg.beta2, cfg.epsilon);
          break;
        default: m.w = optimizer_step(*params, m.w, egrad, state, m.param_id, opts); break;
      }
    }
    record(t);
  }
  return curves;
}

/// CSV: step,seed,loss,feasibility over any number of curves.
inline std::string evaluation_csv(const std::vector<EvalCurve>& curves) {
  std::string out = "step,seed,loss,feasibility\n";
  for (const EvalCurve& c : curves) {
    for (const EvalPoint& p : c.points) {
      out += std::to_string(p.step) + "," + std::to_string(c.seed) + "," + detail::fmt9(p.loss) +
             "," + detail::fmt9(p.feasibility) + "\n";
    }
  }
  return out;
}

}  // namespace rmo
