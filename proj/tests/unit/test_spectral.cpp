#include "sgdfluct/landscape.hpp"
#include "sgdfluct/spectral.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sgdfluct;

namespace {

MatrixXd random_symmetric(Index d, std::uint64_t seed) {
  Engine eng(seed);
  MatrixXd a(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) a(i, j) = standard_normal(eng);
  return 0.5 * (a + a.transpose());
}

MatrixXd random_spd(Index d, std::uint64_t seed) {
  Engine eng(seed);
  MatrixXd b(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) b(i, j) = standard_normal(eng);
  MatrixXd a = b * b.transpose() / static_cast<double>(d);
  a.diagonal().array() += 1e-3;
  return 0.5 * (a + a.transpose());
}

}  // namespace

TEST(DenseEig, Identity) {
  const auto r = dense_symmetric_eig(MatrixXd::Identity(5, 5));
  EXPECT_TRUE(r.eigenvalues.isApprox(VectorXd::Ones(5)));
}

TEST(DenseEig, DiagonalGivesUnitVectors) {
  const VectorXd diag = VectorXd::LinSpaced(10, 1.0, 10.0);
  const auto r = dense_symmetric_eig(MatrixXd(diag.asDiagonal()));
  for (Index i = 0; i < 10; ++i) {
    EXPECT_DOUBLE_EQ(r.eigenvalues(i), 10.0 - static_cast<double>(i));
    EXPECT_NEAR(r.eigenvectors(9 - i, i), 1.0, 1e-14);  // sign convention: largest entry positive
  }
}

TEST(DenseEig, ReconstructsRandomSymmetric) {
  const MatrixXd a = random_symmetric(8, 3);
  const auto r = dense_symmetric_eig(a);
  const MatrixXd back = r.eigenvectors * r.eigenvalues.asDiagonal() * r.eigenvectors.transpose();
  EXPECT_LT((back - a).norm(), 1e-10);
  EXPECT_LT(r.residuals.maxCoeff(), 1e-12);
  for (Index c = 0; c < 8; ++c) {
    Index arg = 0;
    r.eigenvectors.col(c).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(r.eigenvectors(arg, c), 0.0);
  }
}

TEST(DenseEig, RejectsAsymmetric) {
  MatrixXd a = MatrixXd::Identity(3, 3);
  a(0, 1) = 1e-6;
  EXPECT_THROW(dense_symmetric_eig(a), ConfigError);
}

TEST(PsdSqrt, KnownCases) {
  EXPECT_TRUE(psd_sqrt(MatrixXd::Identity(4, 4)).isApprox(MatrixXd::Identity(4, 4)));
  const MatrixXd d = (VectorXd(2) << 4.0, 9.0).finished().asDiagonal();
  const MatrixXd s = psd_sqrt(d);
  EXPECT_NEAR(s(0, 0), 2.0, 1e-14);
  EXPECT_NEAR(s(1, 1), 3.0, 1e-14);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-14);
}

TEST(PsdSqrt, RandomReconstruction) {
  Engine eng(6);
  MatrixXd b(6, 3);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 3; ++j) b(i, j) = standard_normal(eng);
  const MatrixXd m = b * b.transpose();  // rank 3: exercises the clamp
  const MatrixXd s = psd_sqrt(m);
  EXPECT_LT((s * s - m).norm(), 1e-10);
}

TEST(PsdSqrt, RejectsNegativeEigenvalue) {
  const MatrixXd m = (VectorXd(2) << 1.0, -1e-3).finished().asDiagonal();
  EXPECT_THROW(psd_sqrt(m), NumericalError);
  const MatrixXd tiny = (VectorXd(2) << 1.0, -1e-12).finished().asDiagonal();
  EXPECT_NO_THROW(psd_sqrt(tiny));
}

TEST(Lanczos, DiagonalTopThree) {
  const MatrixXd a = VectorXd::LinSpaced(10, 1.0, 10.0).asDiagonal();
  LanczosOptions o;
  o.k = 3;
  o.max_iters = 10;
  const auto r = lanczos_topk(make_dense_oracle(a), o);
  ASSERT_EQ(r.eigenvalues.size(), 3);
  EXPECT_NEAR(r.eigenvalues(0), 10.0, 1e-8);
  EXPECT_NEAR(r.eigenvalues(1), 9.0, 1e-8);
  EXPECT_NEAR(r.eigenvalues(2), 8.0, 1e-8);
}

TEST(Lanczos, RandomSpd64Top20) {
  const MatrixXd a = random_spd(64, 64);
  LanczosOptions o;
  o.k = 20;
  o.max_iters = 64;
  const auto r = lanczos_topk(make_dense_oracle(a), o);
  const auto dense = dense_symmetric_eig(a);
  for (Index i = 0; i < 20; ++i) EXPECT_NEAR(r.eigenvalues(i), dense.eigenvalues(i), 1e-6);
}

TEST(Lanczos, MatchesDenseAcrossFiftyMatrices) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Index d = 12 + static_cast<Index>((s * 37) % 117);  // 12..128
    const MatrixXd a = random_spd(d, 1000 + s);
    LanczosOptions o;
    o.k = static_cast<int>(d / 3);
    o.max_iters = static_cast<int>(d);
    o.seed = s;
    LanczosDiagnostics diag;
    const auto r = lanczos_topk(make_dense_oracle(a), o, &diag);
    const auto dense = dense_symmetric_eig(a);
    for (Index i = 0; i < o.k; ++i)
      ASSERT_NEAR(r.eigenvalues(i), dense.eigenvalues(i), 1e-6) << "matrix " << s << " d=" << d;
    EXPECT_LT(diag.max_orthogonality_defect, 1e-8) << "matrix " << s;
  }
}

TEST(Lanczos, OrthogonalityAtFullDepth) {
  const MatrixXd a = random_spd(128, 5);
  LanczosOptions o;
  o.k = 20;
  o.max_iters = 128;
  LanczosDiagnostics diag;
  const auto r = lanczos_topk(make_dense_oracle(a), o, &diag);
  EXPECT_LT(diag.max_orthogonality_defect, 1e-8);
  EXPECT_LT(r.residuals.maxCoeff(), 1e-6);
}

TEST(Lanczos, NegativeRitzValuesReportedAsIs) {
  const MatrixXd a = (VectorXd(4) << -5.0, -3.0, -1.0, -0.5).finished().asDiagonal();
  LanczosOptions o;
  o.k = 2;
  o.max_iters = 4;
  const auto r = lanczos_topk(make_dense_oracle(a), o);
  EXPECT_NEAR(r.eigenvalues(0), -0.5, 1e-10);
  EXPECT_NEAR(r.eigenvalues(1), -1.0, 1e-10);
}

TEST(Lanczos, StochasticOracleWithinThreeSe) {
  QuadraticEnsembleSpec q;
  q.dim = 32;
  q.lambda = VectorXd::LinSpaced(32, 32.0, 1.0);
  q.eigenvectors = random_orthogonal(32, 3);
  q.gamma_fluct = MatrixXd::Zero(32, 32);
  q.gamma_fluct.diagonal().setConstant(0.01);
  q.grad_noise.d = VectorXd::Ones(32);
  q.center = VectorXd::Zero(32);
  const int averaging = 5;
  const HvpOracle oracle = make_minibatch_hessian_oracle(Landscape(q), averaging, 8);
  LanczosOptions o;
  o.k = 20;
  o.max_iters = 32;
  const auto r = lanczos_topk(oracle, o);
  const double se = std::sqrt(0.01 / averaging);
  for (Index i = 0; i < 20; ++i) EXPECT_LT(std::abs(r.eigenvalues(i) - q.lambda(i)), 3.0 * se) << i;
}

TEST(Oracle, DenseOracleSymmetryDefect) {
  const HvpOracle o = make_dense_oracle(random_spd(10, 1));
  EXPECT_LT(hvp_symmetry_defect(o, 5, 2), 1e-12);
  MatrixXd bad = random_spd(10, 1);
  bad(0, 3) += 0.5;
  EXPECT_THROW(make_dense_oracle(bad), ConfigError);
}
