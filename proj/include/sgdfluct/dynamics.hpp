#pragma once

// Trajectory steppers (discrete SGD and the two Langevin surrogates) and the
// seeded ensemble runner.

#include "sgdfluct/landscape.hpp"
#include "sgdfluct/rng.hpp"
#include "sgdfluct/types.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sgdfluct {

enum class StepperKind { DiscreteSGD, LangevinStandard, LangevinModified };

std::string_view to_string(StepperKind k);
StepperKind parse_stepper(std::string_view name);

/// Time discretization of the Langevin surrogates.
///  Exponential: the linear drift is integrated exactly over a time interval
///    eta with the diffusion frozen at the start of the step,
///    x' = e^{-Lambda eta} x + N(0, Q),  Q_ij = eta D_ij (1 - e^{-(l_i+l_j) eta}) / (l_i + l_j).
///    Its stationary variance and stability boundary are those of the
///    continuous-time surrogate.
///  Euler: the one-step form x' = x - eta grad L(x) + eta C xi with C C = D.
enum class LangevinScheme { Exponential, Euler };

std::string_view to_string(LangevinScheme s);
LangevinScheme parse_scheme(std::string_view name);

struct SamplingMode {
  enum class Kind { WithReplacement, WithoutReplacement };
  Kind kind = Kind::WithReplacement;
  /// Size of the pre-drawn minibatch pool shared by all trajectories. Required
  /// for WithoutReplacement. Under WithReplacement, 0 means fresh draws from
  /// the landscape at every step and > 0 means uniform draws from the pool.
  std::int64_t pool_size = 0;

  static SamplingMode with_replacement(std::int64_t pool = 0) {
    return {Kind::WithReplacement, pool};
  }
  static SamplingMode without_replacement(std::int64_t pool) {
    return {Kind::WithoutReplacement, pool};
  }
};

struct EnsembleConfig {
  std::int64_t n_trajectories = 1;
  std::int64_t n_steps = 1;
  double learning_rate = 0.0;
  /// Ambient starting point; empty means the landscape center.
  VectorXd initial_point;
  /// Isotropic Gaussian spread added to the starting point per trajectory.
  double initial_std = 0.0;
  SamplingMode sampling;
  std::int64_t record_stride = 1;
  std::uint64_t master_seed = 0;
  LangevinScheme scheme = LangevinScheme::Exponential;
  int threads = 1;
  bool keep_endpoints = false;
  double divergence_threshold = 1e12;
  /// Test hook: every trajectory uses this seed instead of its derived one.
  std::optional<std::uint64_t> forced_trajectory_seed;

  void validate(Index dim) const;
  std::int64_t n_recorded() const { return n_steps / record_stride + 1; }
};

struct EnsembleRecord {
  std::vector<std::int64_t> steps;
  Index n_trajectories = 0;
  Index n_directions = 0;
  /// Row-major [trajectory][record][direction]; NaN after divergence.
  std::vector<double> projections;
  /// First step at which the trajectory was flagged divergent, -1 if never.
  std::vector<std::int64_t> divergent_step;
  /// N x d ambient endpoints (w_n) when requested.
  std::optional<MatrixXd> raw_endpoints;

  Index n_recorded() const { return static_cast<Index>(steps.size()); }
  double at(Index traj, Index rec, Index dir) const {
    return projections[static_cast<std::size_t>((traj * n_recorded() + rec) * n_directions + dir)];
  }
  double& at(Index traj, Index rec, Index dir) {
    return projections[static_cast<std::size_t>((traj * n_recorded() + rec) * n_directions + dir)];
  }
  /// Values of one (record, direction) cell across all trajectories.
  VectorXd cross_section(Index rec, Index dir) const;
  std::int64_t n_divergent() const;
};

/// w - eta (G + H (w - v)).
VectorXd sgd_step(const VectorXd& w, const MinibatchSample& sample, double eta,
                  const VectorXd& center);

/// One surrogate step in ambient coordinates. Standard: noise covariance
/// built from D(w) = E[grad grad^T] - grad_mean grad_mean^T. Modified: the
/// full second moment D(w) + grad_mean grad_mean^T.
VectorXd langevin_standard_step(const VectorXd& w, const FluctuationMoments& m, double eta,
                                Engine& eng, LangevinScheme scheme = LangevinScheme::Exponential);
VectorXd langevin_modified_step(const VectorXd& w, const FluctuationMoments& m, double eta,
                                Engine& eng, LangevinScheme scheme = LangevinScheme::Exponential);

/// Surrogate noise covariance for a step from rotated displacement x.
MatrixXd surrogate_noise_covariance(StepperKind kind, const FluctuationMoments& m,
                                    const VectorXd& x_rot, double eta, LangevinScheme scheme);

/// Exact transition maps of a stepper's first and second moments in the
/// rotated basis: E[x'] = A E[x] and S' = E[x' x'^T] as a function of
/// S = E[x x^T]. These are exact for every stepper on the quadratic ensemble
/// and let stationary variances be evaluated without Monte Carlo.
VectorXd propagate_mean(StepperKind kind, const FluctuationMoments& m, double eta,
                        LangevinScheme scheme, const VectorXd& mean);
MatrixXd propagate_second_moment(StepperKind kind, const FluctuationMoments& m, double eta,
                                 LangevinScheme scheme, const MatrixXd& s);

/// Per-direction diagonal second-moment multiplier of a stepper and the
/// stationary variance it implies (diagonal Gamma, zero mean):
///   Pi' = multiplier * Pi + source,  plateau = source / (1 - multiplier),
/// with +infinity where multiplier >= 1.
struct StepperStationary {
  VectorXd multiplier;
  VectorXd source;
  VectorXd plateau;
};
StepperStationary stepper_stationary(StepperKind kind, const FluctuationMoments& m, double eta,
                                     LangevinScheme scheme);

/// Runs the ensemble and records <w_n - v, direction_i> for each row of
/// `directions` (k x d, orthonormal rows). An empty `directions` selects the
/// mean-Hessian eigenvectors, in descending eigenvalue order for the factor
/// model and spec order otherwise.
EnsembleRecord run_ensemble(const Landscape& landscape, StepperKind stepper,
                            const EnsembleConfig& cfg, const MatrixXd& directions = MatrixXd());

}  // namespace sgdfluct
