#include "sgdfluct/dynamics.hpp"
#include "sgdfluct/estimators.hpp"
#include "sgdfluct/moments.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sgdfluct;

namespace {

ScalarToySpec toy(double lambda, double gamma, double d) {
  ScalarToySpec t;
  t.lambda = lambda;
  t.gamma_fluct = gamma;
  t.grad_noise = d;
  return t;
}

EnsembleConfig toy_cfg(std::int64_t n, std::int64_t steps, double eta, std::int64_t stride,
                       std::uint64_t seed) {
  EnsembleConfig c;
  c.n_trajectories = n;
  c.n_steps = steps;
  c.learning_rate = eta;
  c.record_stride = stride;
  c.master_seed = seed;
  c.threads = 4;
  return c;
}

// Mean of the variance over records with step >= from.
double tail_variance(const EnsembleRecord& rec, std::int64_t from) {
  const auto vs = empirical_variance(rec).front();
  double sum = 0.0;
  int cnt = 0;
  for (std::size_t i = 0; i < vs.steps.size(); ++i)
    if (vs.steps[i] >= from) {
      sum += vs.variance[i];
      ++cnt;
    }
  return sum / cnt;
}

QuadraticEnsembleSpec small_ensemble(std::uint64_t seed) {
  QuadraticEnsembleSpec q;
  q.dim = 3;
  q.lambda = (VectorXd(3) << 4.0, 2.0, 1.0).finished();
  q.eigenvectors = random_orthogonal(3, seed);
  q.gamma_fluct = (MatrixXd(3, 3) << 1.0, 0.2, 0.1, 0.2, 0.5, 0.05, 0.1, 0.05, 0.3).finished();
  q.grad_noise.d = (VectorXd(3) << 0.5, 0.3, 0.2).finished();
  q.center = (VectorXd(3) << 1.0, -1.0, 0.5).finished();
  return q;
}

}  // namespace

TEST(SgdStep, CriticalPointIsFixed) {
  MinibatchSample s{VectorXd::Zero(2), (MatrixXd(2, 2) << 2.0, 0.5, 0.5, 1.0).finished()};
  const VectorXd v = (VectorXd(2) << 0.3, -0.7).finished();
  EXPECT_TRUE(sgd_step(v, s, 0.1, v).isApprox(v, 0.0));
}

TEST(SgdStep, ScalarContraction) {
  MinibatchSample s{VectorXd::Zero(1), MatrixXd::Constant(1, 1, 2.0)};
  EXPECT_NEAR(sgd_step(VectorXd::Ones(1), s, 0.1, VectorXd::Zero(1))(0), 0.8, 1e-15);
}

TEST(SgdStep, TwoDimensionalHandValue) {
  MinibatchSample s{(VectorXd(2) << 0.1, -0.2).finished(), (VectorXd(2) << 1.0, 3.0).finished().asDiagonal()};
  const VectorXd w = sgd_step(VectorXd::Ones(2), s, 0.1, VectorXd::Zero(2));
  EXPECT_NEAR(w(0), 0.89, 1e-15);
  EXPECT_NEAR(w(1), 0.72, 1e-15);
}

TEST(Steppers, NoNoiseAllCoincideWithGradientDescent) {
  QuadraticEnsembleSpec q = small_ensemble(1);
  q.gamma_fluct.setZero();
  q.grad_noise.d.setZero();
  const FluctuationMoments fm = fluctuation_moments(Landscape(q));
  const double eta = 0.05;
  VectorXd gd = (VectorXd(3) << 2.0, 0.0, -1.0).finished();
  VectorXd ws = gd, wm = gd, wd = gd;
  Engine eng(1);
  const MinibatchSample mean_sample{VectorXd::Zero(3), q.mean_hessian()};
  for (int n = 0; n < 20; ++n) {
    gd = gd - eta * q.mean_hessian() * (gd - q.center);
    wd = sgd_step(wd, sample(Landscape(q), eng), eta, q.center);
    ws = langevin_standard_step(ws, fm, eta, eng, LangevinScheme::Euler);
    wm = langevin_modified_step(wm, fm, eta, eng, LangevinScheme::Euler);
  }
  EXPECT_LT((wd - gd).norm(), 1e-12);
  EXPECT_LT((ws - gd).norm(), 1e-12);
  // The modified surrogate keeps eta grad L grad L^T as noise, which only
  // vanishes at the minimum.
  EXPECT_GT((wm - gd).norm(), 1e-6);
  VectorXd at_min = q.center;
  for (int n = 0; n < 20; ++n) at_min = langevin_modified_step(at_min, fm, eta, eng, LangevinScheme::Euler);
  EXPECT_LT((at_min - q.center).norm(), 1e-15);
  EXPECT_TRUE(sgd_step(gd, mean_sample, eta, q.center).isApprox(gd - eta * q.mean_hessian() * (gd - q.center)));
}

TEST(Steppers, ExponentialSchemeIntegratesMeanDriftExactly) {
  QuadraticEnsembleSpec q = small_ensemble(2);
  q.gamma_fluct.setZero();
  q.grad_noise.d.setZero();
  const FluctuationMoments fm = fluctuation_moments(Landscape(q));
  Engine eng(1);
  const VectorXd w0 = q.center + q.eigenvectors.col(0);
  const VectorXd w1 = langevin_standard_step(w0, fm, 0.1, eng);
  EXPECT_NEAR((w1 - q.center).norm(), std::exp(-0.1 * q.lambda(0)), 1e-12);
}

TEST(Steppers, ModifiedNoiseAtCenterIsEtaD) {
  const FluctuationMoments fm = fluctuation_moments(Landscape(toy(1.0, 5.0, 0.7)));
  const MatrixXd c = surrogate_noise_covariance(StepperKind::LangevinModified, fm, VectorXd::Zero(1), 0.1,
                                                LangevinScheme::Euler);
  EXPECT_NEAR(c(0, 0), 0.1 * 0.1 * 0.7, 1e-15);  // eta^2 D with D = d at theta = 0
}

TEST(Steppers, StationaryPlateausOfToy) {
  const FluctuationMoments fm = fluctuation_moments(Landscape(toy(1.0, 0.0, 1.0)));
  const auto disc = stepper_stationary(StepperKind::DiscreteSGD, fm, 0.1, LangevinScheme::Exponential);
  const auto lang = stepper_stationary(StepperKind::LangevinStandard, fm, 0.1, LangevinScheme::Exponential);
  EXPECT_NEAR(disc.plateau(0), 0.1 / 1.9, 1e-15);
  EXPECT_NEAR(lang.plateau(0), 0.05, 1e-15);
}

TEST(Steppers, StabilityBoundaryIsMarginal) {
  const FluctuationMoments fm = fluctuation_moments(Landscape(toy(1.0, 19.0, 1.0)));
  const auto st = stepper_stationary(StepperKind::DiscreteSGD, fm, 0.1, LangevinScheme::Exponential);
  EXPECT_NEAR(st.multiplier(0), 1.0, 1e-15);
  EXPECT_TRUE(std::isinf(st.plateau(0)));
  MatrixXd s = MatrixXd::Zero(1, 1);
  for (int n = 0; n < 500; ++n) s = propagate_second_moment(StepperKind::DiscreteSGD, fm, 0.1, LangevinScheme::Exponential, s);
  EXPECT_NEAR(s(0, 0), 500 * 0.01, 1e-9);  // linear growth
}

TEST(Ensemble, StandardSurrogateToyPlateau) {
  const auto rec = run_ensemble(Landscape(toy(1.0, 0.0, 1.0)), StepperKind::LangevinStandard,
                                toy_cfg(20000, 600, 0.1, 10, 5));
  EXPECT_NEAR(tail_variance(rec, 200), 0.05, 0.03 * 0.05);
}

TEST(Ensemble, ModifiedSurrogateMatchesDiscreteCriterion) {
  const ScalarToySpec t = toy(1.0, 5.0, 1.0);
  const double target = 0.1 / 1.4;
  const FluctuationMoments fm = fluctuation_moments(Landscape(t));
  EXPECT_NEAR(stepper_stationary(StepperKind::LangevinModified, fm, 0.1, LangevinScheme::Exponential).plateau(0),
              target, 1e-12);
  const auto rec = run_ensemble(Landscape(t), StepperKind::LangevinModified, toy_cfg(20000, 800, 0.1, 10, 6));
  EXPECT_NEAR(tail_variance(rec, 300), target, 0.04 * target);
  const auto disc = run_ensemble(Landscape(t), StepperKind::DiscreteSGD, toy_cfg(20000, 800, 0.1, 10, 7));
  EXPECT_NEAR(tail_variance(disc, 300), target, 0.04 * target);
}

TEST(Ensemble, MismatchStandardSaturatesDiscreteGrows) {
  const ScalarToySpec t = toy(1.0, 19.5, 1.0);
  const FluctuationMoments fm = fluctuation_moments(Landscape(t));
  const auto lang = stepper_stationary(StepperKind::LangevinStandard, fm, 0.1, LangevinScheme::Exponential);
  EXPECT_NEAR(lang.plateau(0), 2.0, 1e-12);
  EXPECT_GT(stepper_stationary(StepperKind::DiscreteSGD, fm, 0.1, LangevinScheme::Exponential).multiplier(0), 1.0);
  EXPECT_GT(stepper_stationary(StepperKind::LangevinModified, fm, 0.1, LangevinScheme::Exponential).multiplier(0), 1.0);
  // Exact second-moment maps from the same start; sample variances do not
  // concentrate here because the multiplicative noise makes the law heavy tailed.
  MatrixXd sd = MatrixXd::Constant(1, 1, 0.05), ss = sd;
  double after_burn_in = 0.0;
  for (int n = 1; n <= 2000; ++n) {
    sd = propagate_second_moment(StepperKind::DiscreteSGD, fm, 0.1, LangevinScheme::Exponential, sd);
    ss = propagate_second_moment(StepperKind::LangevinStandard, fm, 0.1, LangevinScheme::Exponential, ss);
    if (n == 10) after_burn_in = sd(0, 0);
  }
  EXPECT_GT(sd(0, 0) / after_burn_in, 10.0);
  EXPECT_NEAR(ss(0, 0), 2.0, 0.2 * 2.0);
}

TEST(Ensemble, ZeroStepSizeFreezesProjections) {
  EnsembleConfig c = toy_cfg(50, 100, 0.0, 10, 1);
  c.initial_std = 0.5;
  const auto rec = run_ensemble(Landscape(toy(1.0, 2.0, 1.0)), StepperKind::DiscreteSGD, c);
  for (Index j = 0; j < rec.n_trajectories; ++j)
    for (Index r = 1; r < rec.n_recorded(); ++r) EXPECT_EQ(rec.at(j, r, 0), rec.at(j, 0, 0));
}

TEST(Ensemble, ForcedSeedGivesIdenticalTrajectories) {
  EnsembleConfig c = toy_cfg(2, 50, 0.1, 1, 1);
  c.forced_trajectory_seed = 1234;
  c.initial_std = 1.0;
  const auto rec = run_ensemble(Landscape(toy(1.0, 0.5, 1.0)), StepperKind::DiscreteSGD, c);
  for (Index r = 0; r < rec.n_recorded(); ++r) EXPECT_EQ(rec.at(0, r, 0), rec.at(1, r, 0));
}

TEST(Ensemble, ThreadCountInvariance) {
  const Landscape land(small_ensemble(3));
  for (StepperKind k : {StepperKind::DiscreteSGD, StepperKind::LangevinStandard, StepperKind::LangevinModified}) {
    EnsembleConfig c = toy_cfg(37, 40, 0.05, 3, 99);
    c.initial_std = 0.2;
    c.threads = 1;
    const auto one = run_ensemble(land, k, c);
    c.threads = 5;
    const auto five = run_ensemble(land, k, c);
    EXPECT_EQ(one.projections, five.projections) << to_string(k);
  }
  EnsembleConfig c = toy_cfg(33, 60, 0.1, 2, 4);
  c.sampling = SamplingMode::without_replacement(7);
  c.threads = 1;
  const auto one = run_ensemble(Landscape(toy(1.0, 0.5, 1.0)), StepperKind::DiscreteSGD, c);
  c.threads = 3;
  const auto three = run_ensemble(Landscape(toy(1.0, 0.5, 1.0)), StepperKind::DiscreteSGD, c);
  EXPECT_EQ(one.projections, three.projections);
}

// Property: toy ensemble variance tracks the exact recursion within 4 SE at
// every recorded step.
TEST(Ensemble, ToyVarianceTracksRecursion) {
  const double eta = 0.1, lambda = 1.0, d = 1.0;
  const auto rec = run_ensemble(Landscape(toy(lambda, 0.0, d)), StepperKind::DiscreteSGD,
                                toy_cfg(20000, 200, eta, 5, 10));
  const auto vs = empirical_variance(rec).front();
  double pi = 0.0;
  std::int64_t n = 0;
  const double nn = static_cast<double>(rec.n_trajectories);
  for (std::size_t i = 0; i < vs.steps.size(); ++i) {
    while (n < vs.steps[i]) {
      pi = (1 - eta * lambda) * (1 - eta * lambda) * pi + eta * eta * d;
      ++n;
    }
    const double se = pi * std::sqrt(2.0 / (nn - 1.0));  // Gaussian ensemble
    EXPECT_LE(std::abs(vs.variance[i] - pi), 4.0 * se + 1e-300) << "step " << vs.steps[i];
  }
}

TEST(Ensemble, SmallEnsembleTracksExactMomentMap) {
  const QuadraticEnsembleSpec q = small_ensemble(4);
  const FluctuationMoments fm = fluctuation_moments(Landscape(q));
  const double eta = 0.05;
  EnsembleConfig c = toy_cfg(20000, 60, eta, 10, 12);
  c.initial_point = q.center + fm.basis * VectorXd::Constant(3, 0.5);
  const auto rec = run_ensemble(Landscape(q), StepperKind::DiscreteSGD, c);
  const auto series = empirical_variance(rec);
  VectorXd mean = VectorXd::Constant(3, 0.5);
  MatrixXd s = mean * mean.transpose();
  std::int64_t n = 0;
  for (Index r = 0; r < rec.n_recorded(); ++r) {
    while (n < rec.steps[static_cast<std::size_t>(r)]) {
      s = propagate_second_moment(StepperKind::DiscreteSGD, fm, eta, LangevinScheme::Exponential, s);
      mean = propagate_mean(StepperKind::DiscreteSGD, fm, eta, LangevinScheme::Exponential, mean);
      ++n;
    }
    if (n == 0) continue;
    for (Index k = 0; k < 3; ++k) {
      const double var = s(k, k) - mean(k) * mean(k);
      // SE from the sample itself; the marginal need not be Gaussian.
      const VectorXd x = rec.cross_section(r, k);
      const VectorXd dev = (x.array() - x.mean()).matrix();
      const double m4 = dev.array().pow(4).mean();
      const double se = std::sqrt((m4 - var * var) / static_cast<double>(x.size()));
      EXPECT_LE(std::abs(series[static_cast<std::size_t>(k)].variance[static_cast<std::size_t>(r)] - var), 4.0 * se)
          << "dir " << k << " step " << n;
    }
  }
}

TEST(Ensemble, DivergentTrajectoriesAreFlagged) {
  EnsembleConfig c = toy_cfg(20, 3000, 0.1, 100, 3);
  c.divergence_threshold = 1e6;
  // eta*sqrt(Gamma) = 2: E log|1 - eta H| > 0, so typical paths blow up.
  const auto rec = run_ensemble(Landscape(toy(1.0, 400.0, 1.0)), StepperKind::DiscreteSGD, c);
  EXPECT_GT(rec.n_divergent(), 0);
  for (Index j = 0; j < rec.n_trajectories; ++j) {
    const auto at = rec.divergent_step[static_cast<std::size_t>(j)];
    if (at < 0) continue;
    EXPECT_TRUE(std::isnan(rec.at(j, rec.n_recorded() - 1, 0)));
  }
}

TEST(Ensemble, SingleMinibatchPoolIsDeterministic) {
  EnsembleConfig c = toy_cfg(100, 200, 0.1, 10, 2);
  c.initial_point = VectorXd::Constant(1, 1.0);
  c.sampling = SamplingMode::without_replacement(1);
  const auto rec = run_ensemble(Landscape(toy(1.0, 0.5, 1.0)), StepperKind::DiscreteSGD, c);
  const auto series = empirical_variance(rec);
  for (const double v : series.front().variance) EXPECT_EQ(v, 0.0);
}

TEST(Ensemble, WithoutReplacementNotNoisier) {
  const Landscape land(toy(1.0, 0.5, 1.0));
  EnsembleConfig c = toy_cfg(2000, 400, 0.1, 5, 21);
  c.sampling = SamplingMode::with_replacement(20);
  const auto with = run_ensemble(land, StepperKind::DiscreteSGD, c);
  c.sampling = SamplingMode::without_replacement(20);
  const auto without = run_ensemble(land, StepperKind::DiscreteSGD, c);
  EXPECT_LT(tail_variance(without, 200), tail_variance(with, 200));
}

TEST(Ensemble, ConfigValidation) {
  EnsembleConfig c = toy_cfg(0, 10, 0.1, 1, 1);
  EXPECT_THROW(c.validate(1), ConfigError);
  c = toy_cfg(10, 10, 0.1, 1, 1);
  c.sampling = SamplingMode::without_replacement(0);
  EXPECT_THROW(c.validate(1), ConfigError);
  c = toy_cfg(10, 10, 0.1, 1, 1);
  c.initial_point = VectorXd::Zero(2);
  EXPECT_THROW(c.validate(1), ConfigError);
  EXPECT_EQ(parse_stepper("langevin_modified"), StepperKind::LangevinModified);
  EXPECT_THROW(parse_stepper("heun"), ConfigError);
}
