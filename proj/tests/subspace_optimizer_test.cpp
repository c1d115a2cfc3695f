#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "rmo/baselines.hpp"
#include "rmo/subspace_optimizer.hpp"

using rmo::Matrix;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Scalar reference LSTM written out gate by gate for one coordinate.
struct ScalarCell {
  const rmo::RecurrentNet& net;
  std::vector<std::vector<double>> h, c;

  explicit ScalarCell(const rmo::RecurrentNet& n)
      : net(n), h(n.num_layers(), std::vector<double>(n.hidden)), c(h) {}

  double step(double x) {
    const std::size_t hs = net.hidden;
    std::vector<double> in{x};
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      const rmo::LstmLayer& L = net.layers[l];
      std::vector<double> pre(4 * hs);
      for (std::size_t r = 0; r < 4 * hs; ++r) {
        double s = L.b_ih(0, r) + L.b_hh(0, r);
        for (std::size_t k = 0; k < in.size(); ++k) s += L.w_ih(r, k) * in[k];
        for (std::size_t k = 0; k < hs; ++k) s += L.w_hh(r, k) * h[l][k];
        pre[r] = s;
      }
      for (std::size_t u = 0; u < hs; ++u) {
        const double i = sigm(pre[u]), f = sigm(pre[hs + u]), g = std::tanh(pre[2 * hs + u]),
                     o = sigm(pre[3 * hs + u]);
        c[l][u] = f * c[l][u] + i * g;
        h[l][u] = o * std::tanh(c[l][u]);
      }
      in = h[l];
    }
    double y = net.head_b(0, 0);
    for (std::size_t u = 0; u < hs; ++u) y += net.head_w(0, u) * in[u];
    return y;
  }
};

rmo::OptimizerParams random_params(std::size_t hidden, std::size_t layers, std::uint64_t seed,
                                   double spread = 0.5) {
  rmo::Rng rng(seed);
  auto p = rmo::OptimizerParams::zeros(hidden, layers);
  p.for_each_tensor([&](const std::string&, Matrix& m) {
    for (double& v : m.data()) v = rng.uniform(-spread, spread);
  });
  return p;
}

Matrix uniform(rmo::Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST(CovarianceDiagonals, ZeroGradient) {
  const auto cov = rmo::covariance_diagonals(Matrix(3, 2));
  EXPECT_EQ(cov.rhat, std::vector<double>(3, 0.0));
  EXPECT_EQ(cov.chat, std::vector<double>(2, 0.0));
}

TEST(CovarianceDiagonals, HandArithmetic) {
  const auto cov = rmo::covariance_diagonals(Matrix{{1, 2}, {3, 4}});
  EXPECT_EQ(cov.rhat, (std::vector<double>{2.5, 12.5}));
  EXPECT_EQ(cov.chat, (std::vector<double>{5, 10}));
  const auto id = rmo::covariance_diagonals(Matrix::identity(2));
  EXPECT_EQ(id.rhat, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(id.chat, (std::vector<double>{0.5, 0.5}));
}

TEST(CovarianceDiagonals, MatchDenseCovariances) {
  rmo::Rng rng(5);
  const Matrix g = uniform(rng, 7, 3);
  const Eigen::MatrixXd e = oracle::to_eigen(g);
  const Eigen::MatrixXd row = e * e.transpose() / 3.0, col = e.transpose() * e / 7.0;
  const auto cov = rmo::covariance_diagonals(g);
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(cov.rhat[i], row(i, i), 1e-14);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(cov.chat[j], col(j, j), 1e-14);
}

TEST(CellForward, ZeroNetGivesZeros) {
  const auto net = rmo::RecurrentNet::zeros(20, 2);
  auto st = rmo::CellState::zeros(1, 20, 2);
  EXPECT_EQ(rmo::cell_forward(net, 3.7, st), 0.0);
  for (const Matrix& m : st.h) EXPECT_TRUE(m.is_zero());
  for (const Matrix& m : st.c) EXPECT_TRUE(m.is_zero());
}

// Candidate-gate biases 0.5 + 0.5: c' = 0.5 tanh(1), h' = 0.5 tanh(c').
TEST(CellForward, CandidateBiasExample) {
  auto net = rmo::RecurrentNet::zeros(1, 1);
  net.layers[0].b_ih(0, 2) = 0.5;
  net.layers[0].b_hh(0, 2) = 0.5;
  auto st = rmo::CellState::zeros(1, 1, 1);
  rmo::cell_forward(net, 0.0, st);
  EXPECT_NEAR(st.c[0](0, 0), 0.3807970, 1e-7);
  EXPECT_NEAR(st.h[0](0, 0), 0.18169974, 1e-8);
  EXPECT_NEAR(st.h[0](0, 0), 0.5 * std::tanh(0.5 * std::tanh(1.0)), 1e-16);
}

TEST(CellForward, MatchesScalarReference) {
  const auto params = random_params(5, 2, 77);
  ScalarCell ref(params.row_net);
  auto st = rmo::CellState::zeros(1, 5, 2);
  rmo::Rng rng(1);
  for (int t = 0; t < 6; ++t) {
    const double x = rng.uniform(-2.0, 2.0);
    EXPECT_NEAR(rmo::cell_forward(params.row_net, x, st), ref.step(x), 1e-14) << "step " << t;
  }
}

TEST(CellForward, DeterministicAndStateChecked) {
  const auto params = random_params(4, 2, 3);
  auto a = rmo::CellState::zeros(1, 4, 2), b = a;
  EXPECT_EQ(rmo::cell_forward(params.row_net, 0.3, a), rmo::cell_forward(params.row_net, 0.3, b));
  EXPECT_EQ(a, b);
  auto wrong = rmo::CellState::zeros(1, 4, 1);
  EXPECT_THROW(rmo::cell_forward(params.row_net, 0.3, wrong), rmo::StateError);
}

// Batched rows are independent coordinates: same as running them one by one.
TEST(CellForward, BatchEqualsSequential) {
  const auto params = random_params(3, 2, 8);
  const std::vector<double> xs{0.1, -0.4, 2.0, 0.0};
  auto batch = rmo::CellState::zeros(xs.size(), 3, 2);
  const auto ys = rmo::cell_forward(params.col_net, xs, batch);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    ScalarCell ref(params.col_net);
    EXPECT_NEAR(ys[k], ref.step(xs[k]), 1e-14);
  }
}

TEST(CountParameters, PaperAndHandValues) {
  EXPECT_EQ(rmo::count_parameters(20, 2), 10442u);
  EXPECT_EQ(rmo::count_parameters(1, 1), 36u);
  // Per network: 4(20 + 400 + 40) + 4(400 + 400 + 40) + 21.
  EXPECT_EQ(rmo::count_parameters(20, 2), 2u * (1840u + 3360u + 21u));
}

TEST(CountParameters, EqualsStoredScalars) {
  for (auto [h, l] : {std::pair<std::size_t, std::size_t>{20, 2}, {1, 1}, {7, 3}, {2, 1}}) {
    const auto p = rmo::OptimizerParams::zeros(h, l);
    std::size_t n = 0;
    p.for_each_tensor([&n](const std::string&, const Matrix& m) { n += m.size(); });
    EXPECT_EQ(n, rmo::count_parameters(h, l));
    EXPECT_EQ(p.scalar_count(), n);
  }
}

TEST(Initialization, RangeAndForgetBias) {
  rmo::Rng rng(0);
  const auto p = rmo::OptimizerParams::initialized(20, 2, rng);
  p.for_each_tensor([](const std::string& name, const Matrix& m) {
    const bool bias = name.find("b_ih") != std::string::npos || name.find("b_hh") != std::string::npos ||
                      name.find("head_b") != std::string::npos;
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double v = m.data()[k];
      if (!bias) {
        EXPECT_LE(std::abs(v), 0.1) << name;
      } else if (name.find("b_ih") != std::string::npos && k >= 20 && k < 40) {
        EXPECT_EQ(v, 1.0) << name;
      } else {
        EXPECT_EQ(v, 0.0) << name;
      }
    }
  });
}

TEST(Adapt, ZeroParamsGiveZeroDiagonals) {
  rmo::Rng rng(1);
  rmo::CoordinateState st;
  const auto out = rmo::adapt(rmo::OptimizerParams::zeros(), uniform(rng, 6, 3), st, 0);
  EXPECT_EQ(out.rdiag, std::vector<double>(6, 0.0));
  EXPECT_EQ(out.cdiag, std::vector<double>(3, 0.0));
}

TEST(Adapt, IdenticalRowsGiveIdenticalScales) {
  const auto params = random_params(20, 2, 4);
  Matrix g{{0.3, -0.2}, {1.0, 0.5}, {0.3, -0.2}};
  rmo::CoordinateState st;
  const auto out = rmo::adapt(params, g, st, 0);
  EXPECT_EQ(out.rdiag[0], out.rdiag[2]);
  EXPECT_NE(out.rdiag[0], out.rdiag[1]);
}

TEST(Adapt, MatchesScalarReferencePerCoordinate) {
  const auto params = random_params(4, 2, 12);
  rmo::Rng rng(2);
  rmo::CoordinateState st(4, 2);
  std::vector<ScalarCell> rows(5, ScalarCell(params.row_net)), cols(3, ScalarCell(params.col_net));
  for (int t = 0; t < 3; ++t) {
    const Matrix g = uniform(rng, 5, 3);
    const auto out = rmo::adapt(params, g, st, 0);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 3; ++j) s += g(i, j) * g(i, j);
      EXPECT_NEAR(out.rdiag[i], rows[i].step(s / 3.0), 1e-13);
    }
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < 5; ++i) s += g(i, j) * g(i, j);
      EXPECT_NEAR(out.cdiag[j], cols[j].step(s / 5.0), 1e-13);
    }
  }
}

// Property: permuting the rows of G together with the row states permutes rdiag.
TEST(Adapt, RowPermutationEquivariance) {
  const auto params = random_params(6, 2, 21);
  rmo::Rng rng(3);
  const std::size_t d = 6, p = 3;
  rmo::CoordinateState a(6, 2);
  const Matrix warm = uniform(rng, d, p);
  rmo::adapt(params, warm, a, 0);  // non-trivial state
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);

  rmo::CoordinateState b = a;
  auto& sb = b.slot(0, d, p);
  const auto& sa = a.slot(0, d, p);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t u = 0; u < 6; ++u) {
        sb.rows.h[l](i, u) = sa.rows.h[l](perm[i], u);
        sb.rows.c[l](i, u) = sa.rows.c[l](perm[i], u);
      }
  const Matrix g = uniform(rng, d, p);
  Matrix gp(d, p);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < p; ++j) gp(i, j) = g(perm[i], j);
  const auto oa = rmo::adapt(params, g, a, 0);
  const auto ob = rmo::adapt(params, gp, b, 0);
  for (std::size_t i = 0; i < d; ++i) EXPECT_EQ(ob.rdiag[i], oa.rdiag[perm[i]]);
  EXPECT_EQ(ob.cdiag, oa.cdiag);
  const Matrix ra = rmo::refine_gradient(oa, g), rb = rmo::refine_gradient(ob, gp);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < p; ++j) EXPECT_EQ(rb(i, j), ra(perm[i], j));
}

TEST(Adapt, ShapeDriftIsAStateError) {
  const auto params = random_params(3, 1, 1);
  rmo::CoordinateState st(3, 1);
  rmo::adapt(params, Matrix(4, 2, 0.1), st, 7);
  EXPECT_THROW(rmo::adapt(params, Matrix(5, 2, 0.1), st, 7), rmo::StateError);
  EXPECT_NO_THROW(rmo::adapt(params, Matrix(5, 2, 0.1), st, 8));
}

TEST(Adapt, ExactlyDPlusPForwards) {
  const auto params = random_params(20, 2, 2);
  rmo::CoordinateState st;
  for (auto [d, p] : {std::pair<std::size_t, std::size_t>{4, 2}, {8, 3}, {64, 16}}) {
    const std::size_t before = st.forward_count();
    rmo::adapt(params, Matrix(d, p, 0.01), st, d * 1000 + p);
    EXPECT_EQ(st.forward_count() - before, d + p);
  }
}

TEST(Adapt, AblationModesFixTheOtherSideToOne) {
  const auto params = random_params(5, 2, 9);
  rmo::Rng rng(4);
  const Matrix g = uniform(rng, 5, 3);
  rmo::CoordinateState s1(5, 2), s2(5, 2), s3(5, 2);
  const auto full = rmo::adapt(params, g, s1, 0);
  const auto row = rmo::adapt(params, g, s2, 0, {rmo::AdaptMode::RowOnly});
  const auto col = rmo::adapt(params, g, s3, 0, {rmo::AdaptMode::ColOnly});
  EXPECT_EQ(row.rdiag, full.rdiag);
  EXPECT_EQ(row.cdiag, std::vector<double>(3, 1.0));
  EXPECT_EQ(col.cdiag, full.cdiag);
  EXPECT_EQ(col.rdiag, std::vector<double>(5, 1.0));
  EXPECT_THROW(rmo::adapt(params, g, s1, 0, {rmo::AdaptMode::Elementwise}), rmo::ConfigError);
}

TEST(Refine, IdentityAndHandArithmetic) {
  const Matrix g{{1, 2}, {3, 4}};
  EXPECT_EQ(rmo::refine_gradient({{1, 1}, {1, 1}}, g), g);
  EXPECT_EQ(rmo::refine_gradient({{2, 3}, {1, 0.5}}, g), (Matrix{{2, 2}, {9, 6}}));
  EXPECT_THROW(rmo::refine_gradient({{1}, {1, 1}}, g), rmo::DimensionError);
}

// Property: row-major vec(R G C) == (R kron C^T) vec(G), up to 8 x 5.
TEST(Refine, KroneckerStructure) {
  rmo::Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.index(8), p = 1 + rng.index(5);
    const Matrix g = uniform(rng, d, p);
    rmo::AdaptationOutput out{std::vector<double>(d), std::vector<double>(p)};
    for (double& v : out.rdiag) v = rng.uniform(-2.0, 2.0);
    for (double& v : out.cdiag) v = rng.uniform(-2.0, 2.0);
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(d, d), c = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t i = 0; i < d; ++i) r(i, i) = out.rdiag[i];
    for (std::size_t j = 0; j < p; ++j) c(j, j) = out.cdiag[j];
    const Eigen::VectorXd lhs = oracle::vec_row_major(oracle::to_eigen(rmo::refine_gradient(out, g)));
    const Eigen::VectorXd rhs = oracle::kron(r, c.transpose()) * oracle::vec_row_major(oracle::to_eigen(g));
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(OptimizerStep, ZeroGradientKeepsPoint) {
  const auto params = random_params(20, 2, 6);
  const auto p = rmo::random_point(rmo::ManifoldKind::grassmann(7, 3), 2);
  rmo::CoordinateState st;
  EXPECT_EQ(rmo::optimizer_step(params, p, Matrix(7, 3), st, 0).w, p.w);
}

TEST(OptimizerStep, ZeroParamsKeepPoint) {
  rmo::Rng rng(8);
  const auto p = rmo::random_point(rmo::ManifoldKind::stiefel(7, 3), 2);
  rmo::CoordinateState st;
  EXPECT_EQ(rmo::optimizer_step(rmo::OptimizerParams::zeros(), p, uniform(rng, 7, 3), st, 0).w, p.w);
}

TEST(OptimizerStep, IdentityAdaptationEqualsUnitRsgd) {
  rmo::Rng rng(13);
  const auto params = random_params(20, 2, 6);
  for (const auto& k : {rmo::ManifoldKind::stiefel(8, 3), rmo::ManifoldKind::grassmann(8, 3)}) {
    const auto p = rmo::random_point(k, 5);
    Matrix eg = uniform(rng, 8, 3);
    eg *= 0.2;
    rmo::CoordinateState st;
    const Matrix a = rmo::optimizer_step(params, p, eg, st, 0, {rmo::AdaptMode::Identity}).w;
    const Matrix b = rmo::rsgd_step(p, eg, 1.0).w;
    EXPECT_LE((a - b).max_abs(), 1e-14) << k.name();
  }
}

TEST(OptimizerStep, FollowsAlgorithmByHand) {
  // Ghat = R G C with G = proj(egrad), step = retract(-proj(Ghat)).
  rmo::Rng rng(17);
  const auto params = random_params(4, 2, 31, 0.3);
  const auto p = rmo::random_point(rmo::ManifoldKind::stiefel(6, 2), 4);
  const Matrix eg = uniform(rng, 6, 2);
  rmo::CoordinateState s1(4, 2), s2(4, 2);
  const Matrix g = rmo::project_to_tangent(p, eg).v;
  const auto diag = rmo::adapt(params, g, s2, 0);
  const Matrix dir = rmo::project_to_tangent(p, rmo::refine_gradient(diag, g)).v;
  const Matrix expect = oracle::from_eigen(oracle::thin_q(oracle::to_eigen(p.w - dir)));
  const Matrix got = rmo::optimizer_step(params, p, eg, s1, 0).w;
  EXPECT_LE((got - expect).max_abs(), 1e-12);
  EXPECT_EQ(s1, s2);
}

// Property: feasibility after every learned step, with one network serving two shapes.
TEST(OptimizerStep, SharedAcrossShapesAndFeasible) {
  rmo::Rng rng(23);
  rmo::Rng init(0);
  const auto params = rmo::OptimizerParams::initialized(20, 2, init);
  const std::size_t count = params.scalar_count();
  rmo::CoordinateState st;
  auto a = rmo::random_point(rmo::ManifoldKind::stiefel(8, 3), 1);
  auto b = rmo::random_point(rmo::ManifoldKind::grassmann(12, 5), 2);
  for (int t = 0; t < 200; ++t) {
    a = rmo::optimizer_step(params, a, uniform(rng, 8, 3), st, 0);
    b = rmo::optimizer_step(params, b, uniform(rng, 12, 5), st, 1);
    ASSERT_LE(rmo::feasibility_violation(a), 1e-8);
    ASSERT_LE(rmo::feasibility_violation(b), 1e-8);
  }
  EXPECT_EQ(params.scalar_count(), count);
  EXPECT_TRUE(st.contains(0) && st.contains(1));
}

TEST(OptimizerStep, ShapeMismatchThrows) {
  const auto p = rmo::random_point(rmo::ManifoldKind::stiefel(5, 2), 1);
  rmo::CoordinateState st;
  EXPECT_THROW(rmo::optimizer_step(rmo::OptimizerParams::zeros(), p, Matrix(5, 3), st, 0), rmo::DimensionError);
}
