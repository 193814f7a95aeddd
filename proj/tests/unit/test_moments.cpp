#include "sgdfluct/moments.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sgdfluct;

namespace {

struct RandomSpec {
  VectorXd lambda, d, mu0;
  MatrixXd gamma;
  double eta;
};

// Spectra up to 10, eta small enough that some specs are confined and some
// are not; Gamma symmetric non-negative.
RandomSpec random_spec(std::uint64_t seed) {
  Engine eng(seed);
  const Index dim = 1 + static_cast<Index>(uniform_index(eng, 8));
  RandomSpec s;
  s.lambda.resize(dim);
  s.d.resize(dim);
  s.mu0.resize(dim);
  s.gamma.resize(dim, dim);
  for (Index i = 0; i < dim; ++i) {
    s.lambda(i) = -1.0 + 11.0 * uniform01(eng);
    s.d(i) = uniform01(eng);
    s.mu0(i) = 2.0 * uniform01(eng) - 1.0;
    for (Index j = 0; j <= i; ++j) s.gamma(i, j) = s.gamma(j, i) = 2.0 * uniform01(eng);
  }
  s.eta = 0.01 + 0.09 * uniform01(eng);
  return s;
}

double max_rel(const VectorXd& a, const VectorXd& b) {
  return ((a - b).array().abs() / (1.0 + b.array().abs())).maxCoeff();
}

}  // namespace

TEST(Mean, ZeroStaysZero) {
  const VectorXd mu = mean_recursion_step(VectorXd::Zero(3), 0.1, VectorXd::Ones(3));
  EXPECT_TRUE(mu.isZero(0.0));
}

TEST(Mean, RepeatedStepsEqualClosedForm) {
  VectorXd mu = VectorXd::Ones(1);
  const VectorXd lambda = VectorXd::Ones(1);
  for (int n = 0; n < 10; ++n) mu = mean_recursion_step(mu, 0.1, lambda);
  EXPECT_NEAR(mu(0), 0.34868, 1e-5);
  EXPECT_NEAR(mu(0), mean_closed_form(VectorXd::Ones(1), 0.1, lambda, 10)(0), 1e-14);
}

TEST(Mean, MultiplierMinusOneFlipsSign) {
  VectorXd mu = VectorXd::Constant(1, 0.7);
  const VectorXd lambda = VectorXd::Constant(1, 20.0);
  for (int n = 0; n < 5; ++n) {
    const VectorXd next = mean_recursion_step(mu, 0.1, lambda);
    EXPECT_DOUBLE_EQ(next(0), -mu(0));
    mu = next;
  }
}

TEST(Covariance, ZeroStepSizeLeavesStateUnchanged) {
  MomentState<double> s{3, (VectorXd(2) << 1.0, -1.0).finished(),
                        (MatrixXd(2, 2) << 2.0, 0.3, 0.3, 1.0).finished()};
  const auto next = covariance_recursion_step(s, 0.0, VectorXd::Ones(2), MatrixXd::Ones(2, 2),
                                              VectorXd::Ones(2));
  EXPECT_TRUE(next.mean.isApprox(s.mean, 0.0));
  EXPECT_TRUE(next.cov.isApprox(s.cov, 0.0));
}

TEST(Covariance, ScalarReduction) {
  const double lambda = 1.3, gamma = 0.7, d = 0.4, eta = 0.05;
  auto s = MomentState<double>::start(VectorXd::Zero(1));
  double pi = 0.0;
  for (int n = 0; n < 30; ++n) {
    s = covariance_recursion_step(s, eta, VectorXd::Constant(1, lambda), MatrixXd::Constant(1, 1, gamma),
                                  VectorXd::Constant(1, d));
    pi = (1 - 2 * eta * lambda + eta * eta * (lambda * lambda + gamma)) * pi + eta * eta * d;
    EXPECT_NEAR(s.cov(0, 0), pi, 1e-15);
  }
}

TEST(Covariance, SingleStepHandValue) {
  auto s = MomentState<double>::start(VectorXd::Zero(2));
  s = covariance_recursion_step(s, 0.1, (VectorXd(2) << 1.0, 3.0).finished(), MatrixXd::Zero(2, 2),
                                (VectorXd(2) << 1.0, 2.0).finished());
  EXPECT_NEAR(s.cov(0, 0), 0.01, 1e-16);
  EXPECT_NEAR(s.cov(1, 1), 0.02, 1e-16);
  EXPECT_EQ(s.cov(0, 1), 0.0);
}

TEST(ClosedForm, OffDiagonalTrivialCases) {
  const VectorXd lambda = (VectorXd(2) << 1.0, 2.0).finished();
  for (std::int64_t n : {1, 5, 50}) {
    EXPECT_EQ(covariance_closed_form_offdiag(0, 1, n, 0.1, lambda, 3.0, VectorXd::Zero(2)), 0.0);
    EXPECT_EQ(covariance_closed_form_offdiag(0, 1, n, 0.1, lambda, 0.0, VectorXd::Ones(2)), 0.0);
  }
}

TEST(ClosedForm, OffDiagonalMatchesHandRecursion) {
  const double eta = 0.1, g = 3.0, l1 = 1.0, l2 = 2.0;
  const double a1 = 1 - eta * l1, a2 = 1 - eta * l2;
  double pi = 0.0;
  for (int n = 0; n < 5; ++n)
    pi = (a1 * a2 + eta * eta * g) * pi + eta * eta * std::pow(a1, n) * std::pow(a2, n) * g;
  const double closed = covariance_closed_form_offdiag(0, 1, 5, eta, (VectorXd(2) << l1, l2).finished(), g,
                                                       VectorXd::Ones(2));
  EXPECT_NEAR(closed, pi, 1e-12);
}

TEST(ClosedForm, DiagonalAtZeroSteps) {
  const auto r = covariance_closed_form_diag(0, 0.1, VectorXd::Ones(3), MatrixXd::Ones(3, 3),
                                             VectorXd::Ones(3), VectorXd::Ones(3));
  EXPECT_TRUE(r.values.isZero(0.0));
}

TEST(ClosedForm, DiagonalGeometricSeries) {
  const double eta = 0.1, lambda = 1.0, d = 1.0;
  const double a = (1 - eta * lambda) * (1 - eta * lambda);
  for (std::int64_t n : {1, 10, 100, 1000}) {
    const auto r = covariance_closed_form_diag(n, eta, VectorXd::Constant(1, lambda), MatrixXd::Zero(1, 1),
                                               VectorXd::Constant(1, d), VectorXd::Zero(1));
    EXPECT_NEAR(r.values(0), eta * eta * d * (1 - std::pow(a, n)) / (1 - a), 1e-14);
  }
  const auto far = covariance_closed_form_diag(100000, eta, VectorXd::Constant(1, lambda),
                                               MatrixXd::Zero(1, 1), VectorXd::Constant(1, d),
                                               VectorXd::Zero(1));
  EXPECT_NEAR(far.values(0), 0.1 / 1.9, 1e-12);
}

// Property: closed forms equal the iterated recursion for n <= 200 over 100
// random specs with d <= 8.
TEST(ClosedForm, MatchesRecursionOnRandomSpecs) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RandomSpec s = random_spec(seed);
    const Index dim = s.lambda.size();
    auto state = MomentState<double>::start(s.mu0);
    for (std::int64_t n = 1; n <= 200; ++n) {
      state = covariance_recursion_step(state, s.eta, s.lambda, s.gamma, s.d);
      if (n % 10 != 0 && n > 12) continue;
      const auto diag = covariance_closed_form_diag(n, s.eta, s.lambda, s.gamma, s.d, s.mu0);
      ASSERT_LT(max_rel(diag.values, state.cov.diagonal()), 1e-10) << "seed " << seed << " n " << n;
      for (Index i = 0; i < dim; ++i)
        for (Index j = i + 1; j < dim; ++j) {
          const double off = covariance_closed_form_offdiag(i, j, n, s.eta, s.lambda, s.gamma(i, j), s.mu0);
          ASSERT_NEAR(off, state.cov(i, j), 1e-10 * (1.0 + std::abs(state.cov(i, j))))
              << "seed " << seed << " n " << n << " (" << i << "," << j << ")";
        }
    }
  }
}

TEST(VarianceLaw, ToyPlateau) {
  const VectorXd lambda = VectorXd::Ones(1);
  const auto inf = predict_variance_profile(Horizon::infinity(), 0.1, lambda, VectorXd::Ones(1), 1.0, 0.0);
  EXPECT_NEAR(inf(0), 0.1 / 1.9, 1e-15);
  EXPECT_EQ(predict_variance_profile(Horizon(0), 0.1, lambda, VectorXd::Ones(1), 1.0, 0.0)(0), 0.0);
  const auto diag = covariance_closed_form_diag(100000, 0.1, lambda, MatrixXd::Zero(1, 1), VectorXd::Ones(1),
                                                VectorXd::Zero(1));
  EXPECT_NEAR(inf(0), diag.values(0), 1e-12);
}

TEST(VarianceLaw, LargeCurvaturePlateauNearHalfEtaGamma) {
  const double eta = 0.001, gamma = 1.81e-4, lambda = 50.0;
  const auto p = predict_variance_profile(Horizon::infinity(), eta, VectorXd::Constant(1, lambda),
                                          VectorXd::Constant(1, lambda * lambda), gamma, 0.0);
  const double half = 0.5 * eta * gamma;
  EXPECT_NEAR(half, 9.05e-8, 1e-12);
  const double correction = eta * lambda * lambda / (2 * lambda);  // eta E[H^2] / (2 lambda)
  EXPECT_NEAR(p(0) / half, 1.0 / (1.0 - correction), 1e-12);
  EXPECT_LT(std::abs(p(0) / half - 1.0), 1.1 * correction);
}

TEST(VarianceLaw, FlatDirectionGrowsLinearly) {
  const double eta = 0.01, gamma = 1.0, eps = 1e-3;
  for (std::int64_t n : {1, 10, 100, 1000}) {
    const auto p = predict_variance_profile(Horizon(n), eta, VectorXd::Zero(1), VectorXd::Zero(1), gamma, eps);
    EXPECT_NEAR(p(0), gamma * eta * eta * static_cast<double>(n) * eps, 1e-18);
  }
  // Small curvature with eta n |lambda| < 0.01: linear law within 1%.
  const double lambda = 0.05;
  const std::int64_t n = 10;
  const auto p = predict_variance_profile(Horizon(n), eta, VectorXd::Constant(1, lambda),
                                          VectorXd::Constant(1, lambda * lambda), gamma, eps);
  const double linear = gamma * eta * eta * static_cast<double>(n) * (lambda + eps);
  EXPECT_LT(std::abs(p(0) / linear - 1.0), 0.01);
}

// Property: the diagonal law is the closed form specialized to diagonal
// Gamma, mu0 = 0, d = gamma (lambda + eps), E[H^2] = lambda^2 + Gamma.
TEST(VarianceLaw, IsSpecializationOfClosedForm) {
  int checked = 0;
  for (double eta : {1e-3, 1e-2, 5e-2, 0.1})
    for (double lambda : {0.0, 0.1, 1.0, 5.0, 15.0})
      for (double gdiag : {0.0, 0.5, 4.0})
        for (double eps : {0.0, 1e-3, 0.2})
          for (std::int64_t n : {1, 7, 50, 200}) {
            for (double gamma : {1e-4, 1.0}) {
              const VectorXd l = VectorXd::Constant(1, lambda);
              const VectorXd eh2 = VectorXd::Constant(1, lambda * lambda + gdiag);
              const auto law = predict_variance_profile(Horizon(n), eta, l, eh2, gamma, eps);
              const auto cf = covariance_closed_form_diag(n, eta, l, MatrixXd::Constant(1, 1, gdiag),
                                                          VectorXd::Constant(1, gamma * (lambda + eps)),
                                                          VectorXd::Zero(1));
              ASSERT_NEAR(law(0), cf.values(0), 1e-10 * (1.0 + std::abs(cf.values(0))))
                  << eta << " " << lambda << " " << gdiag << " " << eps << " " << n;
              ++checked;
            }
          }
  EXPECT_GE(checked, 1000);
}

TEST(Langevin, ToyPlateau) {
  const auto p = predict_variance_langevin(0.1, VectorXd::Ones(1), VectorXd::Zero(1), VectorXd::Ones(1));
  EXPECT_NEAR(p(0), 0.05, 1e-15);
}

TEST(Langevin, UnderpredictsByQuarterAtLargeCurvature) {
  const double eta = 0.01, lambda = 50.0, gamma = 1.81e-4;
  const VectorXd l = VectorXd::Constant(1, lambda);
  const VectorXd d = VectorXd::Constant(1, gamma * lambda);
  const double lang = predict_variance_langevin(eta, l, VectorXd::Zero(1), d)(0);
  const double disc = predict_variance_discrete(eta, l, VectorXd::Constant(1, lambda * lambda), d)(0);
  EXPECT_NEAR(lang / disc, 0.75, 1e-12);
}

TEST(Langevin, MismatchPointFiniteWhileDiscreteDiverges) {
  const VectorXd l = VectorXd::Ones(1);
  const double lang = predict_variance_langevin(0.1, l, VectorXd::Constant(1, 19.5), VectorXd::Ones(1))(0);
  EXPECT_NEAR(lang, 2.0, 1e-12);
  const double disc = predict_variance_discrete(0.1, l, VectorXd::Constant(1, 20.5), VectorXd::Ones(1))(0);
  EXPECT_TRUE(std::isinf(disc));
  const auto rep = classify_regimes(0.1, l, VectorXd::Constant(1, 20.5), Horizon(2000));
  EXPECT_EQ(rep.directions[0].regime, Regime::Divergent);
}

// Property: discrete plateau >= Langevin plateau, gap closing as eta -> 0.
TEST(Langevin, PlateauMonotonicity) {
  for (double lambda : {0.5, 1.0, 10.0, 50.0})
    for (double gdiag : {0.0, 0.1, 2.0}) {
      double prev_ratio = 0.0;
      for (double eta : {1e-2, 1e-3, 1e-4}) {
        const VectorXd l = VectorXd::Constant(1, lambda);
        const double disc = predict_variance_discrete(eta, l, VectorXd::Constant(1, lambda * lambda + gdiag),
                                                      VectorXd::Ones(1))(0);
        const double lang = predict_variance_langevin(eta, l, VectorXd::Constant(1, gdiag), VectorXd::Ones(1))(0);
        ASSERT_TRUE(std::isfinite(disc));
        EXPECT_GT(disc, lang) << lambda << " " << gdiag << " " << eta;
        const double ratio = lang / disc;
        EXPECT_GT(ratio, prev_ratio);
        prev_ratio = ratio;
      }
      EXPECT_GT(prev_ratio, 0.99);
    }
}

// Property: |m| < 1 iff eta Gamma < lambda (2 - eta lambda) and 0 < eta lambda < 2.
TEST(Regimes, StationarityCriterionEquivalence) {
  int agree = 0;
  for (double eta = 0.01; eta <= 0.5; eta += 0.07)
    for (double lambda = -2.0; lambda <= 30.0; lambda += 0.37)
      for (double gdiag = 0.0; gdiag <= 40.0; gdiag += 1.3) {
        const VectorXd l = VectorXd::Constant(1, lambda);
        const double m = variance_multiplier(eta, l, VectorXd::Constant(1, lambda * lambda + gdiag))(0);
        const double margin = std::abs(eta * gdiag - lambda * (2 - eta * lambda));
        if (margin < 1e-9) continue;  // on the boundary itself
        const bool stable = std::abs(m) < 1.0;
        const bool criterion = eta * gdiag < lambda * (2 - eta * lambda) && eta * lambda > 0 && eta * lambda < 2;
        ASSERT_EQ(stable, criterion) << eta << " " << lambda << " " << gdiag;
        ++agree;
      }
  EXPECT_GT(agree, 10000);
}

TEST(Regimes, FlatIsDiffusive) {
  for (std::int64_t n : {1, 100, 1000000}) {
    const auto rep = classify_regimes(0.01, VectorXd::Zero(1), VectorXd::Zero(1), Horizon(n));
    EXPECT_EQ(rep.directions[0].regime, Regime::Diffusive);
  }
}

TEST(Regimes, LargeCurvatureConfinedTauTen) {
  const auto rep = classify_regimes(0.001, VectorXd::Constant(1, 50.0), VectorXd::Constant(1, 2500.0), Horizon(1000));
  const auto& d = rep.directions[0];
  EXPECT_NEAR(d.multiplier, 0.9025, 1e-14);
  EXPECT_EQ(d.regime, Regime::Confined);
  EXPECT_NEAR(d.tau, 10.0, 1e-12);
}

TEST(Regimes, MismatchMultiplier) {
  const auto rep = classify_regimes(0.1, VectorXd::Ones(1), VectorXd::Constant(1, 20.5), Horizon(10));
  EXPECT_NEAR(rep.directions[0].multiplier, 1.005, 1e-14);
  EXPECT_EQ(rep.directions[0].regime, Regime::Divergent);
}

TEST(Regimes, MarginalBoundaryIsDivergent) {
  // eta Gamma = lambda (2 - eta lambda): Gamma = 19 at lambda = 1, eta = 0.1.
  const auto rep = classify_regimes(0.1, VectorXd::Ones(1), VectorXd::Constant(1, 20.0), Horizon(1000));
  EXPECT_NEAR(rep.directions[0].multiplier, 1.0, 1e-15);
  EXPECT_EQ(rep.directions[0].regime, Regime::Divergent);
  const auto lin = predict_variance_profile(Horizon(1000), 0.1, VectorXd::Ones(1), VectorXd::Constant(1, 20.0), 1.0, 0.0);
  EXPECT_NEAR(lin(0), 0.01 * 1000, 1e-9);  // linear growth eta^2 d n
}

TEST(Regimes, ReportFillsPlateaus) {
  FluctuationMoments fm;
  fm.lambda = (VectorXd(3) << 50.0, 1.0, 0.0).finished();
  fm.gamma = MatrixXd::Zero(3, 3);
  fm.grad_noise = (VectorXd(3) << 1.0, 1.0, 1.0).finished();
  fm.basis = MatrixXd::Identity(3, 3);
  fm.center = VectorXd::Zero(3);
  const auto rep = regime_report(0.001, fm, Horizon(100), {});
  EXPECT_EQ(rep.directions[0].regime, Regime::Confined);
  EXPECT_EQ(rep.directions[2].regime, Regime::Diffusive);
  EXPECT_NEAR(rep.directions[0].plateau_discrete, 0.001 / (100.0 - 0.001 * 2500.0), 1e-15);
  EXPECT_NEAR(rep.directions[0].plateau_langevin, 0.001 / 100.0, 1e-15);
  EXPECT_NEAR(rep.directions[2].diffusion_coeff, 1e-6, 1e-18);
  EXPECT_EQ(rep.count(Regime::Confined) + rep.count(Regime::Diffusive) + rep.count(Regime::Intermediate) +
                rep.count(Regime::Divergent),
            3u);
}

TEST(GeometricSum, NearOne) {
  EXPECT_DOUBLE_EQ(geometric_sum(1.0, 7), 7.0);
  EXPECT_NEAR(geometric_sum(1.0 + 1e-10, 100), 100.0 + 4950e-10, 1e-9);
  EXPECT_NEAR(geometric_sum(0.5, 3), 1.75, 1e-15);
  EXPECT_NEAR(geometric_sum(-0.5, 3), 0.75, 1e-15);
}
