#pragma once

// Statistics of trajectory ensembles: per-direction variance series with
// trajectory bootstrap, plateau extraction, the two gamma estimators, and
// landscape measurements (gradient-noise and Hessian moments).

#include "sgdfluct/dynamics.hpp"
#include "sgdfluct/landscape.hpp"
#include "sgdfluct/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sgdfluct {

struct VarianceSeries {
  Index direction = 0;
  std::vector<std::int64_t> steps;
  /// Unbiased variance across non-divergent trajectories; NaN where fewer than
  /// two trajectories remain.
  std::vector<double> variance;
  std::vector<std::int64_t> n_valid;
  /// 5/95 percentile bootstrap interval per step, when requested.
  std::optional<std::vector<std::pair<double, double>>> bootstrap_ci;
  /// Bootstrap standard deviation per step, when requested.
  std::optional<std::vector<double>> bootstrap_se;
  std::int64_t n_excluded = 0;  // divergent trajectories at the last step
};

struct BootstrapOptions {
  int resamples = 0;  // 0 disables
  double lo_percentile = 5.0;
  double hi_percentile = 95.0;
  std::uint64_t seed = 0;
};

double sample_variance(const VectorXd& x);

std::vector<VarianceSeries> empirical_variance(const EnsembleRecord& rec,
                                               const BootstrapOptions& boot = {});

struct PlateauOptions {
  std::int64_t window_steps = 200;  // absolute tail window in steps
  /// Used instead of window_steps when > 0.
  double tail_fraction = 0.0;
  double significance = 0.05;  // two-sided slope test level
};

struct PlateauResult {
  double value = 0.0;
  double slope = 0.0;          // per step
  double slope_p_value = 1.0;
  bool trend_warning = false;
  std::int64_t points = 0;
};

/// Mean of the tail window, plus an OLS trend test on it. Needs >= 10 points.
PlateauResult extract_plateau(const std::vector<std::int64_t>& steps,
                              const std::vector<double>& values, const PlateauOptions& opts = {});
PlateauResult extract_plateau(const VarianceSeries& series, const PlateauOptions& opts = {});

struct GammaEstimate {
  enum class Method { Saturation, WLS };
  double gamma_hat = 0.0;
  Method method = Method::Saturation;
  double cv = 0.0;
  std::int64_t n_directions = 0;
  std::vector<std::string> warnings;
};

std::string_view to_string(GammaEstimate::Method m);

/// gamma = 2 mean(plateaus) / eta; cv = std/mean across directions. When
/// `lambda` and `eh2` are given, directions whose correction eta E[H^2]/(2 lambda)
/// exceeds `correction_threshold` add a warning.
GammaEstimate estimate_gamma_saturation(const VectorXd& plateaus, double eta,
                                        const VectorXd& lambda = VectorXd(),
                                        const VectorXd& eh2 = VectorXd(),
                                        double correction_threshold = 1e-3);

/// Through-origin weighted least squares d ~ gamma lambda. Default weights are
/// 1 / lambda^2, which makes each ratio d_i / lambda_i count equally.
/// cv is that of the ratios d_i / lambda_i.
GammaEstimate estimate_gamma_wls(const VectorXd& d, const VectorXd& lambda,
                                 const VectorXd& weights = VectorXd());

/// sum_i M_ii^2 / sum_ij M_ij^2; 1 for the zero matrix.
double diagonal_dominance(const MatrixXd& m);

/// Empirical rotated gradient-noise variances E[G~_i^2] from n_samples
/// minibatches, with the basis of `m`.
VectorXd measure_gradient_noise(const Landscape& landscape, const FluctuationMoments& m,
                                std::int64_t n_samples, std::uint64_t seed);

/// Empirical E[H~] and E[H~_ii^2] in the basis of `m`.
struct HessianMeasurement {
  MatrixXd mean;
  VectorXd second_moment_diag;
};
HessianMeasurement measure_hessian(const Landscape& landscape, const FluctuationMoments& m,
                                   std::int64_t n_samples, std::uint64_t seed);

/// Empirical covariance of the ensemble endpoints in the basis of `m`.
MatrixXd endpoint_covariance(const EnsembleRecord& rec, const FluctuationMoments& m);

/// Coefficient of determination of y against the fit yhat.
double r_squared(const VectorXd& y, const VectorXd& yhat);

/// Lag autocorrelation of each trajectory's series (records >= first_record),
/// averaged over non-divergent trajectories; one value per direction.
VectorXd lag_autocorrelation(const EnsembleRecord& rec, Index lag, Index first_record = 0);

}  // namespace sgdfluct
