#pragma once

// Exact mean/covariance recursions of SGD on the fluctuating quadratic
// landscape, their closed-form solutions, the diagonal variance law and the
// regime classifier. Everything is expressed in the mean-Hessian eigenbasis:
// lambda are the mean-Hessian eigenvalues, gamma the matrix Gamma_ik of
// Hessian-fluctuation variances and d the gradient-noise variances.

#include "sgdfluct/landscape.hpp"
#include "sgdfluct/types.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

namespace sgdfluct {

template <typename Scalar>
struct MomentState {
  std::int64_t step = 0;
  Vector<Scalar> mean;  // rotated basis
  Matrix<Scalar> cov;   // rotated basis

  static MomentState start(const Vector<Scalar>& mu0) {
    return {0, mu0, Matrix<Scalar>::Zero(mu0.size(), mu0.size())};
  }
};

/// Number of steps, or the n -> infinity limit.
struct Horizon {
  std::int64_t steps = 0;
  bool infinite = false;

  Horizon(std::int64_t n) : steps(n) {}  // NOLINT(google-explicit-constructor)
  static Horizon infinity() {
    Horizon h(0);
    h.infinite = true;
    return h;
  }
};

/// sum_{k=0}^{n-1} a^k, accurate near a = 1.
template <typename Scalar>
Scalar geometric_sum(Scalar a, std::int64_t n) {
  using std::abs;
  const Scalar nn = static_cast<Scalar>(n);
  const Scalar delta = a - Scalar(1);
  if (delta == Scalar(0)) return nn;
  if (abs(delta) < Scalar(1e-8)) {
    // n + C(n,2) delta + C(n,3) delta^2
    return nn + nn * (nn - 1) / 2 * delta + nn * (nn - 1) * (nn - 2) / 6 * delta * delta;
  }
  if (a > Scalar(0)) return std::expm1(nn * std::log1p(delta)) / delta;
  return (Scalar(1) - std::pow(a, nn)) / (Scalar(1) - a);
}

// ---------------------------------------------------------------------------
// Mean

template <typename DerivedM, typename DerivedL>
Vector<typename DerivedM::Scalar> mean_recursion_step(const Eigen::MatrixBase<DerivedM>& mu,
                                                      typename DerivedM::Scalar eta,
                                                      const Eigen::MatrixBase<DerivedL>& lambda) {
  return (1 - eta * lambda.array()).matrix().cwiseProduct(mu);
}

template <typename DerivedM, typename DerivedL>
Vector<typename DerivedM::Scalar> mean_closed_form(const Eigen::MatrixBase<DerivedM>& mu0,
                                                   typename DerivedM::Scalar eta,
                                                   const Eigen::MatrixBase<DerivedL>& lambda,
                                                   std::int64_t n) {
  using Scalar = typename DerivedM::Scalar;
  Vector<Scalar> out(mu0.size());
  for (Index i = 0; i < mu0.size(); ++i)
    out(i) = std::pow(1 - eta * lambda(i), static_cast<Scalar>(n)) * mu0(i);
  return out;
}

// ---------------------------------------------------------------------------
// Covariance

/// One exact step of the coupled mean/covariance recursion:
///   Pi' = (1 - eta lambda_i)(1 - eta lambda_j) Pi_ij + eta^2 F(Pi) + eta^2 Lambda,
///   Lambda = diag(d) + F(mu mu^T),
/// where F is the Hessian-fluctuation contraction.
template <typename Scalar, typename DerivedL, typename DerivedG, typename DerivedD>
MomentState<Scalar> covariance_recursion_step(const MomentState<Scalar>& state, Scalar eta,
                                              const Eigen::MatrixBase<DerivedL>& lambda,
                                              const Eigen::MatrixBase<DerivedG>& gamma,
                                              const Eigen::MatrixBase<DerivedD>& d) {
  const Vector<Scalar> contraction = (1 - eta * lambda.array()).matrix();
  MomentState<Scalar> next;
  next.step = state.step + 1;
  next.mean = contraction.cwiseProduct(state.mean);
  const Matrix<Scalar> source = hessian_fluct_contract(gamma, state.mean * state.mean.transpose());
  next.cov = contraction.asDiagonal() * state.cov * contraction.asDiagonal();
  next.cov += eta * eta * (hessian_fluct_contract(gamma, state.cov) + source);
  next.cov.diagonal() += eta * eta * d;
  return next;
}

inline MomentState<double> covariance_recursion_step(const MomentState<double>& state, double eta,
                                                     const FluctuationMoments& m) {
  return covariance_recursion_step(state, eta, m.lambda, m.gamma, m.grad_noise);
}

/// Off-diagonal covariance (i != j) after n steps from a point mass at mu0:
///   (((1-eta l_i)(1-eta l_j) + eta^2 G_ij)^n - (1-eta l_i)^n (1-eta l_j)^n) mu0_i mu0_j.
template <typename DerivedL, typename DerivedM>
typename DerivedL::Scalar covariance_closed_form_offdiag(Index i, Index j, std::int64_t n,
                                                         typename DerivedL::Scalar eta,
                                                         const Eigen::MatrixBase<DerivedL>& lambda,
                                                         typename DerivedL::Scalar gamma_ij,
                                                         const Eigen::MatrixBase<DerivedM>& mu0) {
  using Scalar = typename DerivedL::Scalar;
  const Scalar ai = 1 - eta * lambda(i);
  const Scalar aj = 1 - eta * lambda(j);
  const Scalar nn = static_cast<Scalar>(n);
  return (std::pow(ai * aj + eta * eta * gamma_ij, nn) - std::pow(ai * aj, nn)) * mu0(i) * mu0(j);
}

template <typename Scalar>
struct DiagonalClosedForm {
  Vector<Scalar> values;
  /// Set when I - L - eta^2 Gamma is singular and the n-term sum was used.
  bool fallback_used = false;
};

/// Diagonal covariance after n steps from a point mass at mu0:
///   [(A^n - L^n) mu0^2]_i + eta^2 [(I - A^n)(I - A)^{-1} d]_i,  A = L + eta^2 Gamma,
/// with L = diag((1 - eta lambda)^2). A is symmetric, so both matrix functions
/// are evaluated on its eigendecomposition; (I - A^n)(I - A)^{-1} becomes the
/// geometric sum sum_{k<n} A^k, which stays finite when I - A is singular.
template <typename DerivedL, typename DerivedG, typename DerivedD, typename DerivedM>
DiagonalClosedForm<typename DerivedL::Scalar> covariance_closed_form_diag(
    std::int64_t n, typename DerivedL::Scalar eta, const Eigen::MatrixBase<DerivedL>& lambda,
    const Eigen::MatrixBase<DerivedG>& gamma, const Eigen::MatrixBase<DerivedD>& d,
    const Eigen::MatrixBase<DerivedM>& mu0) {
  using Scalar = typename DerivedL::Scalar;
  const Index dim = lambda.size();
  DiagonalClosedForm<Scalar> out;
  out.values = Vector<Scalar>::Zero(dim);
  if (n == 0) return out;

  const Vector<Scalar> l_diag = (1 - eta * lambda.array()).square().matrix();
  Matrix<Scalar> a = eta * eta * gamma;
  a.diagonal() += l_diag;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(a);
  const Matrix<Scalar>& u = es.eigenvectors();
  const Vector<Scalar>& ev = es.eigenvalues();

  Vector<Scalar> pow_n(dim), sum_n(dim);
  const Scalar nn = static_cast<Scalar>(n);
  for (Index k = 0; k < dim; ++k) {
    pow_n(k) = std::pow(ev(k), nn);
    sum_n(k) = geometric_sum(ev(k), n);
    if (std::abs(1 - ev(k)) < Scalar(1e-12)) out.fallback_used = true;
  }
  const Vector<Scalar> m2 = mu0.array().square().matrix();
  Vector<Scalar> l_pow(dim);
  for (Index k = 0; k < dim; ++k) l_pow(k) = std::pow(l_diag(k), nn);

  out.values = u * pow_n.asDiagonal() * (u.transpose() * m2) - l_pow.cwiseProduct(m2);
  out.values += eta * eta * (u * sum_n.asDiagonal() * (u.transpose() * d));
  return out;
}

// ---------------------------------------------------------------------------
// Diagonal variance law and Langevin plateau

/// Per-step multiplier of the diagonal variance, 1 - 2 eta lambda + eta^2 E[H~^2].
template <typename DerivedL, typename DerivedH>
Vector<typename DerivedL::Scalar> variance_multiplier(typename DerivedL::Scalar eta,
                                                      const Eigen::MatrixBase<DerivedL>& lambda,
                                                      const Eigen::MatrixBase<DerivedH>& eh2) {
  return (1 - 2 * eta * lambda.array() + eta * eta * eh2.array()).matrix();
}

/// Diagonal variance profile
///   eta gamma (lambda + eps) (1 - m^n) / (2 lambda - eta E[H~^2]),
/// evaluated as eta^2 gamma (lambda + eps) sum_{k<n} m^k so that a zero
/// denominator is handled. For an infinite horizon the plateau is returned
/// where |m| < 1 and +infinity marks a divergent direction.
template <typename DerivedL, typename DerivedH>
Vector<typename DerivedL::Scalar> predict_variance_profile(
    Horizon n, typename DerivedL::Scalar eta, const Eigen::MatrixBase<DerivedL>& lambda,
    const Eigen::MatrixBase<DerivedH>& eh2, typename DerivedL::Scalar gamma,
    typename DerivedL::Scalar epsilon) {
  using Scalar = typename DerivedL::Scalar;
  const Vector<Scalar> m = variance_multiplier(eta, lambda, eh2);
  Vector<Scalar> out(lambda.size());
  for (Index i = 0; i < lambda.size(); ++i) {
    const Scalar source = eta * eta * gamma * (lambda(i) + epsilon);
    if (n.infinite) {
      out(i) = std::abs(m(i)) < 1 ? source / (1 - m(i)) : std::numeric_limits<Scalar>::infinity();
    } else {
      out(i) = source * geometric_sum(m(i), n.steps);
    }
  }
  return out;
}

/// Stationary variance of the standard Langevin approximation,
/// eta d / (2 lambda - eta Gamma_ii); +infinity where the denominator is <= 0.
template <typename DerivedL, typename DerivedG, typename DerivedD>
Vector<typename DerivedL::Scalar> predict_variance_langevin(
    typename DerivedL::Scalar eta, const Eigen::MatrixBase<DerivedL>& lambda,
    const Eigen::MatrixBase<DerivedG>& gamma_diag, const Eigen::MatrixBase<DerivedD>& d) {
  using Scalar = typename DerivedL::Scalar;
  Vector<Scalar> out(lambda.size());
  for (Index i = 0; i < lambda.size(); ++i) {
    const Scalar denom = 2 * lambda(i) - eta * gamma_diag(i);
    out(i) = denom > 0 ? eta * d(i) / denom : std::numeric_limits<Scalar>::infinity();
  }
  return out;
}

/// Stationary diagonal variance of discrete SGD with explicit d_i (diagonal
/// Gamma), eta d / (2 lambda - eta E[H~^2]); +infinity where |m| >= 1.
template <typename DerivedL, typename DerivedH, typename DerivedD>
Vector<typename DerivedL::Scalar> predict_variance_discrete(
    typename DerivedL::Scalar eta, const Eigen::MatrixBase<DerivedL>& lambda,
    const Eigen::MatrixBase<DerivedH>& eh2, const Eigen::MatrixBase<DerivedD>& d) {
  using Scalar = typename DerivedL::Scalar;
  const Vector<Scalar> m = variance_multiplier(eta, lambda, eh2);
  Vector<Scalar> out(lambda.size());
  for (Index i = 0; i < lambda.size(); ++i) {
    out(i) = std::abs(m(i)) < 1 ? eta * eta * d(i) / (1 - m(i))
                                : std::numeric_limits<Scalar>::infinity();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regimes

enum class Regime { Confined, Diffusive, Intermediate, Divergent };

std::string_view to_string(Regime r);

struct RegimeThresholds {
  /// Diffusive when eta * n * |lambda| is below this.
  double diffusive = 0.1;
  /// m >= 1 - marginal counts as Divergent, so the exact stability boundary
  /// (linear growth) is not reported as stable.
  double marginal = 1e-12;
};

struct DirectionRegime {
  double lambda = 0.0;
  double multiplier = 0.0;
  Regime regime = Regime::Intermediate;
  double plateau_discrete = std::numeric_limits<double>::quiet_NaN();
  double plateau_langevin = std::numeric_limits<double>::quiet_NaN();
  double tau = std::numeric_limits<double>::quiet_NaN();             // 1 / (2 eta lambda)
  double diffusion_coeff = std::numeric_limits<double>::quiet_NaN();  // variance growth per step
  double horizon_value = std::numeric_limits<double>::quiet_NaN();    // full profile at the horizon
};

struct RegimeReport {
  double eta = 0.0;
  Horizon horizon{0};
  std::vector<DirectionRegime> directions;

  std::size_t count(Regime r) const;
};

/// Classification from (eta, lambda, E[H~^2], horizon) alone; plateau fields
/// are left empty.
RegimeReport classify_regimes(double eta, const VectorXd& lambda, const VectorXd& eh2,
                              Horizon horizon, const RegimeThresholds& th = {});

/// Classification plus predicted discrete/Langevin plateaus, diffusion
/// coefficients and the full variance value at the horizon (from the exact
/// diagonal closed form with mu0 = 0).
RegimeReport regime_report(double eta, const FluctuationMoments& m, Horizon horizon,
                           const RegimeThresholds& th = {});

}  // namespace sgdfluct
