#pragma once

// One-dimensional density evolution for the scalar toy model: the truncated
// discrete Kramers-Moyal recursion and the continuous Langevin Fokker-Planck
// equation, on a uniform node grid.

#include "sgdfluct/landscape.hpp"
#include "sgdfluct/types.hpp"

#include <cstdint>
#include <vector>

namespace sgdfluct {

/// Node grid theta_i = theta_min + i * dx, dx = (theta_max - theta_min) / (n - 1).
/// The density is taken to vanish outside the domain.
struct DensityGrid {
  double theta_min = -1.0;
  double theta_max = 1.0;
  VectorXd values;
  std::int64_t step = 0;
  double time = 0.0;  // continuous time, for the Fokker-Planck solver

  static DensityGrid zeros(double lo, double hi, Index n_cells);
  /// Gaussian sampled on the nodes and rescaled to unit mass.
  static DensityGrid gaussian(double lo, double hi, Index n_cells, double mean, double var);

  Index size() const { return values.size(); }
  double dx() const { return (theta_max - theta_min) / static_cast<double>(values.size() - 1); }
  double theta(Index i) const { return theta_min + static_cast<double>(i) * dx(); }
  VectorXd nodes() const;
  /// sum p dx
  double mass() const { return values.sum() * dx(); }
};

/// E[(G + H theta)^m] for the toy model, m = 0..order, at each node.
/// G + H theta is Gaussian with mean lambda theta and variance d + Gamma theta^2.
MatrixXd toy_gradient_moments(const ScalarToySpec& toy, const VectorXd& theta, int order);

/// Central-difference m-th derivative (m = 1..6), second-order accurate,
/// with zero values beyond the grid.
VectorXd central_derivative(const VectorXd& f, double dx, int m);

struct KmOptions {
  int order = 2;  // 2..6
  /// Drop the (grad mean loss)^2 part of the second moment, leaving the
  /// diffusion D(theta) = d + Gamma theta^2: the small-eta Langevin recursion.
  bool langevin_second_moment = false;
  double max_mass_drift = 1e-6;
};

struct KmDiagnostics {
  double mass_before = 0.0;
  double mass_after = 0.0;
  /// L1 norm of the highest-order term kept, as a truncation indicator.
  double last_term_l1 = 0.0;
  double min_value = 0.0;
  /// max over the support of 2 eta^2 E[(grad L)^2] / dx^2; the high-frequency
  /// grid modes are amplified when this exceeds 2.
  double stability_number = 0.0;
};

/// One step p_{n+1} = sum_{m<=order} eta^m / m! d^m(E[(grad L)^m] p_n).
/// Derivatives act on the products E[(grad L)^m] p in conservation form, so
/// mass changes only when the density reaches the domain edges.
/// Throws NumericalError when the mass changes by more than max_mass_drift.
DensityGrid km_step(const DensityGrid& grid, const ScalarToySpec& toy, double eta,
                    const KmOptions& opts = {}, KmDiagnostics* diag = nullptr);

/// Largest stable explicit time step for the Fokker-Planck solver:
/// min(0.4 dx^2 / (eta max D), 0.4 dx / max |lambda theta|).
double fp_max_dt(const DensityGrid& grid, const ScalarToySpec& toy, double eta);

/// One explicit Euler step of dp/dt = d(lambda theta p)/dtheta + (eta/2) d^2(D p)/dtheta^2,
/// D = d + Gamma theta^2, in flux form with zero flux through the edges.
/// Throws NumericalError if dt exceeds fp_max_dt.
DensityGrid langevin_fp_step(const DensityGrid& grid, const ScalarToySpec& toy, double eta,
                             double dt);

/// Advances to time grid.time + n_steps * eta with equal sub-steps no larger
/// than dt_max (default fp_max_dt); grid.step advances by n_steps.
DensityGrid evolve_fp(const DensityGrid& grid, const ScalarToySpec& toy, double eta,
                      std::int64_t n_steps, double dt_max = 0.0);

/// Raw moments sum_i theta_i^j p_i dx, j = 0..k.
VectorXd density_moments(const DensityGrid& grid, int k);

/// Kolmogorov-Smirnov distance between the grid density (piecewise-linear
/// CDF from the trapezoidal rule) and an empirical sample.
double ks_distance(const DensityGrid& grid, std::vector<double> samples);

/// Histogram of samples on the grid nodes (bins centred on nodes), unit mass.
VectorXd histogram_density(const DensityGrid& grid, const std::vector<double>& samples);

/// Domain centre +- half_width_sigmas * sigma, where sigma is the larger of the
/// initial spread and the predicted discrete-SGD spread after n_steps.
std::pair<double, double> default_domain(const ScalarToySpec& toy, double eta, double mu0,
                                         double var0, std::int64_t n_steps,
                                         double half_width_sigmas = 12.0);

/// Largest node count whose spacing satisfies dx >= eta sqrt(max M_2) over
/// [lo, hi], the stability bound of the explicit truncated step (at least 3).
Index km_stable_nodes(const ScalarToySpec& toy, double eta, double lo, double hi);

}  // namespace sgdfluct
