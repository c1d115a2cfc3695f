// Short meta-training run on synthetic PCA, then the learned optimizer
// against plain RSGD on one held-out dataset.

#include <cstdio>

#include "rmo/rmo.hpp"

int main() {
  rmo::MetaConfig cfg;
  cfg.outer_steps = 60;
  cfg.batch_size = 16;
  cfg.outer_lr = 0.003;
  cfg.data_seeds = {1, 2, 3};
  cfg.reset_every = 30;
  cfg.meta_loss_data = rmo::MetaLossData::Full;

  const rmo::TrainResult res = rmo::train(cfg);
  std::printf("meta-objective %.5f -> %.5f\n", res.trajectory.outer.front().objective,
              res.trajectory.outer.back().objective);

  rmo::EvalConfig ec;
  ec.steps = 100;
  ec.batch_size = 16;
  const std::vector<rmo::TaskShape> shapes{cfg.shapes};
  ec.optimizer = rmo::OptimizerKind::Learned;
  const double learned = rmo::evaluate_run(ec, &res.params, shapes, 101)[0].points.back().loss;
  ec.optimizer = rmo::OptimizerKind::Rsgd;
  ec.alpha = 0.1;
  const double rsgd = rmo::evaluate_run(ec, nullptr, shapes, 101)[0].points.back().loss;
  std::printf("loss after 100 steps: learned %.5f, rsgd(0.1) %.5f\n", learned, rsgd);
}
