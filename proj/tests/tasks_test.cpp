#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "rmo/autodiff.hpp"
#include "rmo/gradcheck.hpp"
#include "rmo/tasks.hpp"

using rmo::Dataset;
using rmo::Matrix;
using rmo::ManifoldKind;

namespace {

Dataset samples(Matrix x, std::vector<int> labels = {}, std::size_t classes = 0) {
  Dataset d;
  d.x = std::move(x);
  d.labels = std::move(labels);
  d.classes = classes;
  return d;
}

/// Brute-force reconstruction loss, sample by sample.
double pca_reference(const Matrix& w, const Matrix& x) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::vector<double> proj(w.rows(), 0.0);
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < w.rows(); ++k) c += w(k, j) * x(i, k);
      for (std::size_t k = 0; k < w.rows(); ++k) proj[k] += c * w(k, j);
    }
    for (std::size_t k = 0; k < w.rows(); ++k) total += (x(i, k) - proj[k]) * (x(i, k) - proj[k]);
  }
  return total / static_cast<double>(x.rows());
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t r, std::uint32_t c,
                                      std::vector<unsigned char> payload) {
  std::vector<unsigned char> b{0, 0, 8, 3};
  for (std::uint32_t v : {n, r, c}) {
    b.push_back(static_cast<unsigned char>(v >> 24));
    b.push_back(static_cast<unsigned char>(v >> 16));
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v));
  }
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

}  // namespace

TEST(Pca, SamplesInSpanHaveZeroLoss) {
  const auto p = rmo::random_point(ManifoldKind::grassmann(6, 2), 3);
  rmo::Rng rng(1);
  const Matrix x = rmo::matmul_nt(rng.normal_matrix(10, 2), p.w);
  EXPECT_NEAR(rmo::pca_loss_grad(p, samples(x)).loss, 0.0, 1e-12);
}

TEST(Pca, OrthogonalSampleIsCritical) {
  const rmo::ManifoldPoint p{ManifoldKind::grassmann(3, 1), Matrix{{1}, {0}, {0}}};
  const auto lg = rmo::pca_loss_grad(p, samples(Matrix{{0, 1, 0}}));
  EXPECT_DOUBLE_EQ(lg.loss, 1.0);
  EXPECT_TRUE(lg.egrad.is_zero());
  EXPECT_TRUE(rmo::project_to_tangent(p, lg.egrad).v.is_zero());
}

TEST(Pca, HandExample) {
  const rmo::ManifoldPoint p{ManifoldKind::grassmann(2, 1), Matrix{{1}, {0}}};
  const auto lg = rmo::pca_loss_grad(p, samples(Matrix{{1, 1}}));
  EXPECT_DOUBLE_EQ(lg.loss, 1.0);
  EXPECT_EQ(lg.egrad, (Matrix{{-2}, {-2}}));
}

TEST(Pca, MatchesBruteForceLoss) {
  rmo::Rng rng(2);
  const auto p = rmo::random_point(ManifoldKind::grassmann(7, 3), 4);
  const Matrix x = rng.normal_matrix(25, 7);
  EXPECT_NEAR(rmo::pca_loss_grad(p, samples(x)).loss, pca_reference(p.w, x), 1e-12);
}

// The gradient form holds on the manifold, so it is checked through the
// retraction: d/dZ L(qr(W + proj(Z))) at Z = 0 equals proj(egrad).
TEST(Pca, GradientThroughRetraction) {
  rmo::Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = rmo::random_point(ManifoldKind::grassmann(6, 2), 10 + trial);
    const Matrix x = rng.normal_matrix(15, 6);
    const Matrix rgrad = rmo::project_to_tangent(p, rmo::pca_loss_grad(p, samples(x)).egrad).v;
    auto f = [&](const Matrix& z) {
      const Matrix v = rmo::project_to_tangent(p, z).v;
      return pca_reference(rmo::thin_qr(p.w + v).q, x);
    };
    const Matrix fd = rmo::ad::central_difference(f, Matrix(6, 2), 1e-5);
    EXPECT_LE(rmo::ad::compare_gradients(rgrad, fd).max_rel_err, 1e-6);
  }
}

// Property: loss(W O) = loss(W) for orthogonal O.
TEST(Pca, QuotientInvariance) {
  rmo::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = rmo::random_point(ManifoldKind::grassmann(8, 3), trial);
    const Matrix o = rmo::random_point(ManifoldKind::stiefel(3, 3), 100 + trial).w;
    const Dataset data = samples(rng.normal_matrix(20, 8));
    const rmo::ManifoldPoint q{p.kind, rmo::matmul(p.w, o)};
    EXPECT_LE(std::abs(rmo::pca_loss_grad(p, data).loss - rmo::pca_loss_grad(q, data).loss), 1e-10);
  }
}

TEST(Pca, BadBatchesRejected) {
  const auto p = rmo::random_point(ManifoldKind::grassmann(4, 2), 1);
  EXPECT_THROW(rmo::pca_loss_grad(p, samples(Matrix(3, 5))), rmo::ConfigError);
  EXPECT_THROW(rmo::pca_loss_grad(p, samples(Matrix(0, 4))), rmo::ConfigError);
}

TEST(Classifier, UniformLogitsGiveLogK) {
  const rmo::ManifoldPoint p{ManifoldKind::stiefel(4, 3), Matrix{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  // Samples live on the first coordinate, so every logit is zero.
  const auto lg = rmo::classifier_loss_grad(p, samples(Matrix{{2, 0, 0, 0}, {-1, 0, 0, 0}}, {0, 2}, 3));
  EXPECT_NEAR(lg.loss, std::log(3.0), 1e-15);
}

TEST(Classifier, HandExample) {
  const rmo::ManifoldPoint p{ManifoldKind::stiefel(3, 2), Matrix{{0, 0}, {1, 0}, {0, 1}}};
  const auto lg = rmo::classifier_loss_grad(p, samples(Matrix{{1.5, 0, 0}}, {0}, 2));
  EXPECT_NEAR(lg.loss, 0.6931472, 1e-7);
  EXPECT_NEAR(lg.loss, std::log(2.0), 1e-15);
  EXPECT_EQ(lg.egrad, (Matrix{{-0.75, 0.75}, {0, 0}, {0, 0}}));
}

TEST(Classifier, GradientMatchesFiniteDifferences) {
  rmo::Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = rmo::random_point(ManifoldKind::stiefel(6, 4), trial);
    Dataset data = samples(rng.normal_matrix(12, 6), {}, 4);
    for (int i = 0; i < 12; ++i) data.labels.push_back(static_cast<int>(rng.index(4)));
    auto f = [&](const Matrix& w) { return rmo::classifier_loss_grad({p.kind, w}, data).loss; };
    const Matrix fd = rmo::ad::central_difference(f, p.w, 1e-5);
    EXPECT_LE(rmo::ad::compare_gradients(rmo::classifier_loss_grad(p, data).egrad, fd).max_rel_err, 1e-6);
  }
}

TEST(Classifier, StableForLargeLogits) {
  const rmo::ManifoldPoint p{ManifoldKind::stiefel(2, 2), Matrix::identity(2)};
  const auto lg = rmo::classifier_loss_grad(p, samples(Matrix{{1000, -1000}}, {1}, 2));
  EXPECT_TRUE(std::isfinite(lg.loss));
  EXPECT_NEAR(lg.loss, 2000.0, 1e-9);
}

TEST(Classifier, LabelOutOfRangeIsADataError) {
  const auto p = rmo::random_point(ManifoldKind::stiefel(3, 2), 1);
  EXPECT_THROW(rmo::classifier_loss_grad(p, samples(Matrix{{1, 2, 3}}, {2}, 2)), rmo::DataError);
  EXPECT_THROW(rmo::classifier_loss_grad(p, samples(Matrix{{1, 2, 3}}, {-1}, 2)), rmo::DataError);
}

TEST(SynthSubspace, PlantedBasisIsExactWithoutNoise) {
  const Dataset data = rmo::synth_subspace(10, 3, 50, 0.0, 7);
  const rmo::ManifoldPoint u{ManifoldKind::grassmann(10, 3), data.planted};
  EXPECT_NEAR(rmo::pca_loss_grad(u, data).loss, 0.0, 1e-12);
}

TEST(SynthSubspace, DeterministicAndValidated) {
  const Dataset a = rmo::synth_subspace(8, 2, 30, 0.1, 3), b = rmo::synth_subspace(8, 2, 30, 0.1, 3);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.provenance, b.provenance);
  EXPECT_NE(a.x, rmo::synth_subspace(8, 2, 30, 0.1, 4).x);
  EXPECT_THROW(rmo::synth_subspace(4, 5, 10, 0.1, 1), rmo::ConfigError);
  for (double v : a.x.data()) EXPECT_TRUE(std::isfinite(v));
}

// The eigendecomposition optimum bounds every point from below and is reached
// by the top eigenvectors.
TEST(SynthSubspace, EigenOracleLowerBound) {
  const Dataset data = rmo::synth_subspace(20, 4, 512, 0.1, 11);
  const double opt = oracle::pca_optimal_loss(data.x, 4);
  const Eigen::MatrixXd xe = oracle::to_eigen(data.x);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xe.transpose() * xe / 512.0);
  const rmo::ManifoldPoint top{ManifoldKind::grassmann(20, 4), oracle::from_eigen(es.eigenvectors().rightCols(4))};
  EXPECT_NEAR(rmo::pca_loss_grad(top, data).loss, opt, 1e-10);
  for (std::uint64_t s = 0; s < 20; ++s) {
    EXPECT_GE(rmo::pca_loss_grad(rmo::random_point(top.kind, s), data).loss, opt - 1e-12);
  }
  // Sixteen noise directions of variance 0.01, minus the spread of the smallest ones.
  EXPECT_GT(opt, 0.08);
  EXPECT_LT(opt, 0.17);
}

TEST(SynthClassifier, LabelsFollowPlantedClassifier) {
  const Dataset data = rmo::synth_classifier(16, 4, 400, 2.0, 0.0, 5);
  ASSERT_EQ(data.labels.size(), 400u);
  const Matrix z = rmo::matmul(data.x, data.planted);
  for (std::size_t i = 0; i < 400; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 4; ++j)
      if (z(i, j) > z(i, best)) best = j;
    ASSERT_EQ(static_cast<std::size_t>(data.labels[i]), best);
  }
  const Dataset noisy = rmo::synth_classifier(16, 4, 400, 2.0, 0.25, 5);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < 400; ++i) flipped += noisy.labels[i] != data.labels[i];
  EXPECT_GT(flipped, 60u);
  EXPECT_LT(flipped, 140u);
  EXPECT_EQ(rmo::synth_classifier(16, 4, 400, 2.0, 0.25, 5).labels, noisy.labels);
}

TEST(Idx, ImagesParseAndScale) {
  const auto d = rmo::parse_idx(idx_images(2, 2, 2, {0, 51, 102, 255, 1, 2, 3, 4}));
  ASSERT_EQ(d.kind, rmo::IdxData::Kind::Images);
  EXPECT_EQ(d.images.rows(), 2u);
  EXPECT_EQ(d.images.cols(), 4u);
  EXPECT_EQ(d.images(0, 3), 1.0);
  EXPECT_EQ(d.images(0, 1), 0.2);
  EXPECT_EQ(d.images(1, 0), 1.0 / 255.0);
  EXPECT_EQ(d.digest.size(), 16u);
}

TEST(Idx, Labels) {
  const auto d = rmo::parse_idx({0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9});
  ASSERT_EQ(d.kind, rmo::IdxData::Kind::Labels);
  EXPECT_EQ(d.labels, (std::vector<int>{7, 0, 9}));
}

TEST(Idx, ParseErrorsNameOffsets) {
  auto offset_of = [](const std::vector<unsigned char>& b) -> std::pair<std::size_t, std::string> {
    try {
      rmo::parse_idx(b);
    } catch (const rmo::ParseError& e) {
      return {e.offset(), e.what()};
    }
    return {SIZE_MAX, ""};
  };
  auto [off, msg] = offset_of({0, 0, 8, 5, 0, 0, 0, 1});
  EXPECT_EQ(off, 0u);
  EXPECT_EQ(msg, "unsupported magic at offset 0");

  std::tie(off, msg) = offset_of({0, 0, 8, 3, 0, 0, 0, 2, 0, 0});
  EXPECT_EQ(off, 8u);
  EXPECT_NE(msg.find("truncated header"), std::string::npos);

  std::tie(off, msg) = offset_of(idx_images(2, 2, 2, {1, 2, 3}));
  EXPECT_NE(msg.find("truncated payload"), std::string::npos);
  EXPECT_EQ(off, 19u);

  std::tie(off, msg) = offset_of(idx_images(0xffffffffu, 0xffffffffu, 0xffffffffu, {}));
  EXPECT_NE(msg.find("dimension overflow"), std::string::npos);
  EXPECT_EQ(off, 12u);
}

TEST(Idx, LoadFromFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "rmo_idx_test";
  std::filesystem::create_directories(dir);
  const auto img = idx_images(3, 1, 2, {0, 255, 10, 20, 30, 40});
  const std::vector<unsigned char> lab{0, 0, 8, 1, 0, 0, 0, 3, 1, 0, 1};
  auto write = [](const std::filesystem::path& p, const std::vector<unsigned char>& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };
  write(dir / "img.idx", img);
  write(dir / "lab.idx", lab);
  const Dataset d = rmo::load_idx_dataset((dir / "img.idx").string(), (dir / "lab.idx").string());
  EXPECT_EQ(d.x.rows(), 3u);
  EXPECT_EQ(d.labels, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(d.x(0, 1), 1.0);
  EXPECT_EQ(d.provenance.rfind("idx fnv1a=", 0), 0u);
  EXPECT_THROW(rmo::load_idx((dir / "missing.idx").string()), rmo::DataError);
  EXPECT_THROW(rmo::load_idx_dataset((dir / "lab.idx").string()), rmo::DataError);
  std::filesystem::remove_all(dir);
}
