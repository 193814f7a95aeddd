#pragma once

// Dense symmetric eigendecomposition, PSD square roots, and stochastic
// Lanczos driven by Hessian-vector-product callbacks.

#include "sgdfluct/rng.hpp"
#include "sgdfluct/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>

namespace sgdfluct {

/// Eigenpairs sorted by descending eigenvalue. Each eigenvector is normalized
/// and signed so that its largest-magnitude component is positive.
template <typename Scalar>
struct SpectralResult {
  Vector<Scalar> eigenvalues;
  Matrix<Scalar> eigenvectors;
  Vector<Scalar> residuals;  // ||A v - lambda v|| per pair
  int iterations_used = 0;
  int restarts = 0;
};

namespace detail {

template <typename Scalar>
void canonicalize_signs(Matrix<Scalar>& vecs) {
  for (Index c = 0; c < vecs.cols(); ++c) {
    Index arg = 0;
    vecs.col(c).cwiseAbs().maxCoeff(&arg);
    if (vecs(arg, c) < Scalar(0)) vecs.col(c) = -vecs.col(c);
  }
}

template <typename Derived>
typename Derived::Scalar asymmetry(const Eigen::MatrixBase<Derived>& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Full eigendecomposition of a symmetric matrix. Throws ConfigError when
/// |M - M^T| exceeds `tol` entrywise.
template <typename Derived>
SpectralResult<typename Derived::Scalar> dense_symmetric_eig(
    const Eigen::MatrixBase<Derived>& m, typename Derived::Scalar tol = 1e-10) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) throw ConfigError("dense_symmetric_eig: matrix is not square");
  if (m.size() > 0 && detail::asymmetry(m) > tol) {
    std::ostringstream os;
    os << "dense_symmetric_eig: matrix asymmetric by " << detail::asymmetry(m);
    throw ConfigError(os.str());
  }
  const Index d = m.rows();
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(m.derived());
  if (es.info() != Eigen::Success) throw NumericalError("dense_symmetric_eig: solver failed");

  SpectralResult<Scalar> out;
  out.eigenvalues = es.eigenvalues().reverse();
  out.eigenvectors = es.eigenvectors().rowwise().reverse();
  detail::canonicalize_signs(out.eigenvectors);
  out.residuals.resize(d);
  for (Index i = 0; i < d; ++i) {
    out.residuals(i) =
        (m * out.eigenvectors.col(i) - out.eigenvalues(i) * out.eigenvectors.col(i)).norm();
  }
  return out;
}

/// Symmetric square root S of a PSD matrix, S*S = M. Eigenvalues in
/// [-tol, 0] are clamped to zero; anything below -tol is an error.
/// The tolerance scales with max(1, ||M||_max).
template <typename Derived>
Matrix<typename Derived::Scalar> psd_sqrt(const Eigen::MatrixBase<Derived>& m,
                                          typename Derived::Scalar tol = 1e-10) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) throw ConfigError("psd_sqrt: matrix is not square");
  if (m.size() == 0) return Matrix<Scalar>(0, 0);
  const Scalar scale = std::max<Scalar>(Scalar(1), m.cwiseAbs().maxCoeff());
  if (detail::asymmetry(m) > tol * scale) throw ConfigError("psd_sqrt: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(m.derived());
  Vector<Scalar> ev = es.eigenvalues();
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol * scale) {
      std::ostringstream os;
      os << "psd_sqrt: matrix not PSD, eigenvalue " << ev(i);
      throw NumericalError(os.str());
    }
    ev(i) = std::sqrt(std::max<Scalar>(ev(i), Scalar(0)));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Hessian-vector-product oracle. Stochastic oracles return a fresh minibatch
/// average on every call.
struct HvpOracle {
  std::function<VectorXd(const VectorXd&)> apply;
  Index dim = 0;
  bool is_stochastic = false;
  int averaging_count = 1;

  VectorXd operator()(const VectorXd& v) const { return apply(v); }
};

/// Max |<u, A v> - <A u, v>| over `probes` random pairs. Only meaningful for
/// deterministic oracles.
double hvp_symmetry_defect(const HvpOracle& oracle, int probes, std::uint64_t seed);

/// Builds an exact oracle for a dense matrix, checking symmetry to 1e-6
/// on random probes.
HvpOracle make_dense_oracle(const MatrixXd& a);

struct LanczosOptions {
  int k = 20;
  int max_iters = 200;
  int reorth_every = 1;  // 1: every iteration
  int max_restarts = 3;
  std::uint64_t seed = 0;
  /// Relative threshold on beta (against the running ||T|| estimate) for breakdown.
  double breakdown_tol = 1e-12;
};

struct LanczosDiagnostics {
  /// Largest |<q_i, q_j>|, i != j, over the final Lanczos basis.
  double max_orthogonality_defect = 0.0;
  int basis_size = 0;
};

/// Top-k Ritz pairs of the oracle's operator. Full reorthogonalization
/// against every stored Lanczos vector runs every `reorth_every` iterations
/// and is applied to both the current and the next basis vector.
/// Residuals are true ||A y - theta y|| (one extra oracle call per pair).
/// Breakdown (beta ~ 0 before max_iters) restarts from a fresh random vector
/// orthogonal to the basis; more than max_restarts throws NumericalError.
SpectralResult<double> lanczos_topk(const HvpOracle& oracle, const LanczosOptions& opts,
                                    LanczosDiagnostics* diagnostics = nullptr);

}  // namespace sgdfluct
