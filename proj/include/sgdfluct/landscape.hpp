#pragma once

// Stochastic quadratic loss landscapes. Each minibatch realization is a pair
// (G, H): the loss around the center v is L(w) = L0 + G.(w-v) + (w-v)^T H (w-v)/2,
// so the minibatch gradient at w is G + H (w - v).

#include "sgdfluct/rng.hpp"
#include "sgdfluct/spectral.hpp"
#include "sgdfluct/types.hpp"

#include <cstdint>
#include <variant>

namespace sgdfluct {

/// 1D toy model: G ~ N(0, grad_noise), H ~ N(lambda, gamma_fluct), independent.
struct ScalarToySpec {
  double grad_noise = 0.0;   // E[G^2]
  double lambda = 0.0;       // E[H]
  double gamma_fluct = 0.0;  // Var[H]
  double center = 0.0;

  void validate() const;
};

struct GradNoiseLaw {
  enum class Mode { Explicit, Proportional };
  Mode mode = Mode::Explicit;
  VectorXd d;            // Explicit: E[G~_i^2]
  double gamma = 0.0;    // Proportional: d_i = gamma (lambda_i + epsilon)
  double epsilon = 0.0;
};

/// d-dimensional Gaussian quadratic ensemble, specified in the mean-Hessian
/// eigenbasis. `eigenvectors` holds the basis as columns, so the mean Hessian
/// is V diag(lambda) V^T and rotated quantities are X~ = V^T X V.
struct QuadraticEnsembleSpec {
  Index dim = 0;
  VectorXd lambda;
  MatrixXd eigenvectors;
  MatrixXd gamma_fluct;  // Var[H~_ij], symmetric, >= 0
  GradNoiseLaw grad_noise;
  VectorXd center;

  void validate() const;
  /// d_i in the rotated basis after applying the noise law.
  VectorXd grad_noise_diag() const;
  MatrixXd mean_hessian() const;
};

/// Single-index factor model: L = (1/N_B) sum_k Phi(b_k . (w - v)),
/// b_k ~ N(0, b_covariance), expanded to second order.
struct FactorModelSpec {
  Index dim = 0;
  int batch_size = 1;
  double phi_prime = 0.0;
  double phi_double_prime = 1.0;
  MatrixXd b_covariance;
  VectorXd center;

  void validate() const;
  /// (Phi')^2 / (N_B Phi''): the constant linking E[G G^T] to E[H].
  double implied_gamma() const;
  MatrixXd mean_hessian() const;
};

using Landscape = std::variant<ScalarToySpec, QuadraticEnsembleSpec, FactorModelSpec>;

struct MinibatchSample {
  VectorXd grad;     // G, gradient at the center
  MatrixXd hessian;  // H, symmetric by construction
};

MinibatchSample sample_scalar_toy(const ScalarToySpec& spec, Engine& eng);
MinibatchSample sample_scalar_toy(const ScalarToySpec& spec, std::uint64_t seed);

/// Sample in the rotated basis: G~ and H~ = diag(lambda) + zeta.
MinibatchSample sample_quadratic_ensemble_rotated(const QuadraticEnsembleSpec& spec,
                                                  Engine& eng);
MinibatchSample sample_quadratic_ensemble(const QuadraticEnsembleSpec& spec, Engine& eng);
MinibatchSample sample_quadratic_ensemble(const QuadraticEnsembleSpec& spec, std::uint64_t seed);

MinibatchSample sample_factor_model(const FactorModelSpec& spec, Engine& eng);
MinibatchSample sample_factor_model(const FactorModelSpec& spec, std::uint64_t seed);

/// Ambient-basis sample from any landscape.
MinibatchSample sample(const Landscape& landscape, Engine& eng);

Index dimension(const Landscape& landscape);
VectorXd center(const Landscape& landscape);
void validate(const Landscape& landscape);

/// Second-order statistics of a landscape in the mean-Hessian eigenbasis:
/// E[G~ G~^T] = diag(grad_noise), E[H~] = diag(lambda), and
/// E[zeta_ik zeta_jl] = Gamma_ik (d_ij d_kl + d_il d_jk - d_ij d_ik d_jl).
/// The factor model fits this form exactly with
/// Gamma_ik = lambda_i lambda_k (1 + d_ik) / N_B.
struct FluctuationMoments {
  VectorXd lambda;
  MatrixXd gamma;
  VectorXd grad_noise;
  MatrixXd basis;  // eigenvectors as columns, ambient coordinates
  VectorXd center;

  Index dim() const { return lambda.size(); }
  /// E[H~_ii^2] = lambda_i^2 + Gamma_ii.
  VectorXd hessian_second_moment() const;
};

FluctuationMoments fluctuation_moments(const Landscape& landscape);

/// The Hessian-fluctuation contraction sum_kl E[zeta_ik zeta_jl] X_kl:
/// diagonal entries sum_k Gamma_ik X_kk, off-diagonal entries Gamma_ij X_ij.
template <typename DerivedG, typename DerivedX>
Matrix<typename DerivedX::Scalar> hessian_fluct_contract(const Eigen::MatrixBase<DerivedG>& gamma,
                                                         const Eigen::MatrixBase<DerivedX>& x) {
  Matrix<typename DerivedX::Scalar> out = gamma.cwiseProduct(x);
  out.diagonal() = gamma * x.diagonal();
  return out;
}

/// Rotated gradient-noise covariance D~(x~) = E[g g^T] - E[g] E[g]^T at rotated
/// displacement x~, where g = G~ + H~ x~.
MatrixXd gradient_noise_covariance(const FluctuationMoments& m, const VectorXd& x_rot);

/// Haar-random orthogonal matrix.
MatrixXd random_orthogonal(Index dim, std::uint64_t seed);

/// Stochastic Hessian-vector products: each call averages H v over
/// `averaging_count` fresh minibatch samples drawn from one engine, so a
/// sequence of calls is reproducible from the seed.
HvpOracle make_minibatch_hessian_oracle(const Landscape& landscape, int averaging_count,
                                        std::uint64_t seed);

namespace detail {
/// Symmetric square root of b_covariance, reused across factor-model draws.
MatrixXd factor_sqrt(const FactorModelSpec& spec);
MinibatchSample sample_factor_model(const FactorModelSpec& spec, const MatrixXd& b_sqrt,
                                    Engine& eng);
}  // namespace detail

}  // namespace sgdfluct
