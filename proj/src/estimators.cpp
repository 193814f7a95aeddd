#include "sgdfluct/estimators.hpp"

#include "sgdfluct/rng.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sgdfluct {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Linear-interpolation percentile of sorted data (q in [0, 100]).
double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return kNaN;
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Unbiased variance over the listed trajectories, skipping NaN entries.
double variance_over(const EnsembleRecord& rec, const std::vector<Index>& trajs, Index r, Index k,
                     std::int64_t* n_valid = nullptr) {
  double mean = 0.0, m2 = 0.0;
  std::int64_t n = 0;
  for (Index t : trajs) {
    const double v = rec.at(t, r, k);
    if (std::isnan(v)) continue;
    ++n;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }
  if (n_valid) *n_valid = n;
  return n < 2 ? kNaN : std::max(0.0, m2 / static_cast<double>(n - 1));
}

}  // namespace

double sample_variance(const VectorXd& x) {
  if (x.size() < 2) return kNaN;
  const double mean = x.mean();
  return (x.array() - mean).square().sum() / static_cast<double>(x.size() - 1);
}

std::vector<VarianceSeries> empirical_variance(const EnsembleRecord& rec,
                                               const BootstrapOptions& boot) {
  if (rec.n_trajectories < 2) throw ConfigError("empirical_variance: need at least 2 trajectories");
  std::vector<Index> all(static_cast<std::size_t>(rec.n_trajectories));
  for (Index t = 0; t < rec.n_trajectories; ++t) all[static_cast<std::size_t>(t)] = t;

  std::vector<VarianceSeries> out(static_cast<std::size_t>(rec.n_directions));
  for (Index k = 0; k < rec.n_directions; ++k) {
    VarianceSeries& s = out[static_cast<std::size_t>(k)];
    s.direction = k;
    s.steps = rec.steps;
    s.n_excluded = rec.n_divergent();
    for (Index r = 0; r < rec.n_recorded(); ++r) {
      std::int64_t n = 0;
      s.variance.push_back(variance_over(rec, all, r, k, &n));
      s.n_valid.push_back(n);
    }
  }
  if (boot.resamples <= 0) return out;

  // Resample whole trajectories; the same draw serves every step and direction.
  Engine eng(derive_seed(boot.seed, stream::kBootstrap));
  const auto n_rec = static_cast<std::size_t>(rec.n_recorded());
  const auto n_dir = static_cast<std::size_t>(rec.n_directions);
  std::vector<std::vector<double>> draws(n_rec * n_dir);
  std::vector<Index> idx(all.size());
  for (int b = 0; b < boot.resamples; ++b) {
    for (auto& i : idx)
      i = static_cast<Index>(uniform_index(eng, static_cast<std::uint64_t>(rec.n_trajectories)));
    for (std::size_t r = 0; r < n_rec; ++r)
      for (std::size_t k = 0; k < n_dir; ++k) {
        const double v = variance_over(rec, idx, static_cast<Index>(r), static_cast<Index>(k));
        if (!std::isnan(v)) draws[r * n_dir + k].push_back(v);
      }
  }
  for (std::size_t k = 0; k < n_dir; ++k) {
    VarianceSeries& s = out[k];
    std::vector<std::pair<double, double>> ci(n_rec);
    std::vector<double> se(n_rec);
    for (std::size_t r = 0; r < n_rec; ++r) {
      auto& d = draws[r * n_dir + k];
      const double point = s.variance[r];
      if (d.size() < 2 || std::isnan(point)) {
        ci[r] = {kNaN, kNaN};
        se[r] = kNaN;
        continue;
      }
      std::sort(d.begin(), d.end());
      // Percentile intervals need not bracket the point estimate; widen to it.
      ci[r] = {std::min(point, percentile_sorted(d, boot.lo_percentile)),
               std::max(point, percentile_sorted(d, boot.hi_percentile))};
      se[r] = std::sqrt(sample_variance(Eigen::Map<const VectorXd>(d.data(), static_cast<Index>(d.size()))));
    }
    s.bootstrap_ci = std::move(ci);
    s.bootstrap_se = std::move(se);
  }
  return out;
}

PlateauResult extract_plateau(const std::vector<std::int64_t>& steps,
                              const std::vector<double>& values, const PlateauOptions& opts) {
  if (steps.size() != values.size() || steps.empty())
    throw ConfigError("extract_plateau: steps and values must be non-empty and equal length");
  std::size_t first = 0;
  if (opts.tail_fraction > 0.0) {
    const auto keep = static_cast<std::size_t>(
        std::ceil(opts.tail_fraction * static_cast<double>(values.size())));
    first = values.size() - std::min(keep, values.size());
  } else {
    const std::int64_t cut = steps.back() - opts.window_steps;
    while (first < steps.size() && steps[first] <= cut) ++first;
  }
  const std::size_t n = values.size() - first;
  if (n < 10) {
    std::ostringstream os;
    os << "extract_plateau: tail window has " << n << " points (need >= 10)";
    throw ConfigError(os.str());
  }

  PlateauResult res;
  res.points = static_cast<std::int64_t>(n);
  VectorXd x(static_cast<Index>(n)), y(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    x(static_cast<Index>(i)) = static_cast<double>(steps[first + i]);
    y(static_cast<Index>(i)) = values[first + i];
  }
  res.value = y.mean();
  if (!std::isfinite(res.value)) {
    res.trend_warning = true;
    return res;
  }
  const VectorXd xc = x.array() - x.mean();
  const VectorXd yc = y.array() - res.value;
  const double sxx = xc.squaredNorm();
  res.slope = xc.dot(yc) / sxx;
  const double sse = (yc - res.slope * xc).squaredNorm();
  const double dof = static_cast<double>(n) - 2.0;
  const double se = std::sqrt(sse / dof / sxx);
  const double scale = std::max(std::abs(res.value), std::numeric_limits<double>::min());
  if (se <= 1e-14 * scale / std::max(1.0, std::sqrt(sxx))) {
    // Residuals vanish: any resolvable slope is a deterministic trend.
    const bool flat = std::abs(res.slope) * std::sqrt(sxx) <= 1e-12 * scale;
    res.slope_p_value = flat ? 1.0 : 0.0;
  } else {
    const boost::math::students_t dist(dof);
    const double t = std::abs(res.slope / se);
    res.slope_p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
  }
  res.trend_warning = res.slope_p_value < opts.significance;
  return res;
}

PlateauResult extract_plateau(const VarianceSeries& series, const PlateauOptions& opts) {
  return extract_plateau(series.steps, series.variance, opts);
}

std::string_view to_string(GammaEstimate::Method m) {
  return m == GammaEstimate::Method::Saturation ? "saturation" : "wls";
}

namespace {

double cv_of(const VectorXd& v) {
  const double mean = v.mean();
  if (mean == 0.0) return 0.0;
  const double sd = std::sqrt((v.array() - mean).square().mean());
  return sd / std::abs(mean);
}

}  // namespace

GammaEstimate estimate_gamma_saturation(const VectorXd& plateaus, double eta,
                                        const VectorXd& lambda, const VectorXd& eh2,
                                        double correction_threshold) {
  if (plateaus.size() == 0) throw ConfigError("estimate_gamma_saturation: no plateaus");
  if (!(eta > 0.0)) throw ConfigError("estimate_gamma_saturation: eta must be > 0");
  GammaEstimate g;
  g.method = GammaEstimate::Method::Saturation;
  g.n_directions = plateaus.size();
  g.gamma_hat = 2.0 * plateaus.mean() / eta;
  g.cv = cv_of(plateaus);
  if (lambda.size() == plateaus.size() && eh2.size() == plateaus.size()) {
    const double worst = (eta * eh2.array() / (2.0 * lambda.array())).maxCoeff();
    if (worst > correction_threshold) {
      std::ostringstream os;
      os << "finite-step correction eta E[H^2]/(2 lambda) up to " << worst << " exceeds "
         << correction_threshold;
      g.warnings.push_back(os.str());
    }
  }
  if (!std::isfinite(g.gamma_hat) || g.gamma_hat <= 0.0)
    g.warnings.push_back("gamma_hat is not finite and positive");
  return g;
}

GammaEstimate estimate_gamma_wls(const VectorXd& d, const VectorXd& lambda,
                                 const VectorXd& weights) {
  if (d.size() != lambda.size()) throw ConfigError("estimate_gamma_wls: size mismatch");
  if (d.size() < 2) throw ConfigError("estimate_gamma_wls: need at least 2 directions");
  if (lambda.minCoeff() <= 0.0) throw ConfigError("estimate_gamma_wls: lambda must be > 0");
  VectorXd w = weights.size() == 0 ? VectorXd(lambda.array().square().inverse()) : weights;
  if (w.size() != d.size()) throw ConfigError("estimate_gamma_wls: weights size mismatch");
  if (w.minCoeff() < 0.0) throw ConfigError("estimate_gamma_wls: weights must be >= 0");
  GammaEstimate g;
  g.method = GammaEstimate::Method::WLS;
  g.n_directions = d.size();
  const VectorXd wl = w.cwiseProduct(lambda);
  g.gamma_hat = wl.dot(d) / wl.dot(lambda);
  g.cv = cv_of(d.cwiseQuotient(lambda));
  return g;
}

double diagonal_dominance(const MatrixXd& m) {
  if (m.rows() != m.cols()) throw ConfigError("diagonal_dominance: matrix is not square");
  const double total = m.squaredNorm();
  if (total == 0.0) return 1.0;
  return m.diagonal().squaredNorm() / total;
}

VectorXd measure_gradient_noise(const Landscape& landscape, const FluctuationMoments& m,
                                std::int64_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("measure_gradient_noise: n_samples must be >= 1");
  Engine eng(derive_seed(seed, stream::kMeasurement));
  VectorXd acc = VectorXd::Zero(m.dim());
  for (std::int64_t s = 0; s < n_samples; ++s) {
    const VectorXd g = m.basis.transpose() * sample(landscape, eng).grad;
    acc += g.cwiseAbs2();
  }
  return acc / static_cast<double>(n_samples);
}

HessianMeasurement measure_hessian(const Landscape& landscape, const FluctuationMoments& m,
                                   std::int64_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("measure_hessian: n_samples must be >= 1");
  Engine eng(derive_seed(seed, stream::kMeasurement, 1));
  HessianMeasurement out;
  out.mean = MatrixXd::Zero(m.dim(), m.dim());
  out.second_moment_diag = VectorXd::Zero(m.dim());
  for (std::int64_t s = 0; s < n_samples; ++s) {
    const MatrixXd h = m.basis.transpose() * sample(landscape, eng).hessian * m.basis;
    out.mean += h;
    out.second_moment_diag += h.diagonal().cwiseAbs2();
  }
  out.mean /= static_cast<double>(n_samples);
  out.second_moment_diag /= static_cast<double>(n_samples);
  return out;
}

MatrixXd endpoint_covariance(const EnsembleRecord& rec, const FluctuationMoments& m) {
  if (!rec.raw_endpoints) throw ConfigError("endpoint_covariance: record has no endpoints");
  const MatrixXd& e = *rec.raw_endpoints;
  std::vector<Index> rows;
  for (Index i = 0; i < e.rows(); ++i)
    if (e.row(i).allFinite()) rows.push_back(i);
  if (rows.size() < 2) throw ConfigError("endpoint_covariance: fewer than 2 finite endpoints");
  MatrixXd x(static_cast<Index>(rows.size()), e.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    x.row(static_cast<Index>(i)) = (e.row(rows[i]).transpose() - m.center).transpose() * m.basis;
  const MatrixXd c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

double r_squared(const VectorXd& y, const VectorXd& yhat) {
  if (y.size() != yhat.size() || y.size() < 2) throw ConfigError("r_squared: size mismatch");
  const double ss_tot = (y.array() - y.mean()).square().sum();
  const double ss_res = (y - yhat).squaredNorm();
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - ss_res / ss_tot;
}

VectorXd lag_autocorrelation(const EnsembleRecord& rec, Index lag, Index first_record) {
  if (lag < 1) throw ConfigError("lag_autocorrelation: lag must be >= 1");
  VectorXd out = VectorXd::Constant(rec.n_directions, kNaN);
  const Index len = rec.n_recorded() - first_record;
  if (len <= lag) return out;
  for (Index k = 0; k < rec.n_directions; ++k) {
    double acc = 0.0;
    int used = 0;
    for (Index t = 0; t < rec.n_trajectories; ++t) {
      if (rec.divergent_step[static_cast<std::size_t>(t)] >= 0) continue;
      VectorXd y(len);
      for (Index r = 0; r < len; ++r) y(r) = rec.at(t, first_record + r, k);
      y.array() -= y.mean();
      const double denom = y.squaredNorm();
      if (denom == 0.0) continue;
      acc += y.head(len - lag).dot(y.tail(len - lag)) / denom;
      ++used;
    }
    if (used > 0) out(k) = acc / used;
  }
  return out;
}

}  // namespace sgdfluct
