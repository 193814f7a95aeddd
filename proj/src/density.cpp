#include "sgdfluct/density.hpp"

#include "sgdfluct/moments.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sgdfluct {

DensityGrid DensityGrid::zeros(double lo, double hi, Index n_cells) {
  if (!(hi > lo)) throw ConfigError("density grid: need theta_max > theta_min");
  if (n_cells < 3) throw ConfigError("density grid: need at least 3 nodes");
  DensityGrid g;
  g.theta_min = lo;
  g.theta_max = hi;
  g.values = VectorXd::Zero(n_cells);
  return g;
}

DensityGrid DensityGrid::gaussian(double lo, double hi, Index n_cells, double mean, double var) {
  if (!(var > 0.0)) throw ConfigError("density grid: initial variance must be > 0");
  DensityGrid g = zeros(lo, hi, n_cells);
  for (Index i = 0; i < n_cells; ++i) {
    const double z = g.theta(i) - mean;
    g.values(i) = std::exp(-0.5 * z * z / var);
  }
  const double m = g.mass();
  if (!(m > 0.0)) throw ConfigError("density grid: initial Gaussian has no mass on the domain");
  g.values /= m;
  return g;
}

VectorXd DensityGrid::nodes() const {
  VectorXd t(size());
  for (Index i = 0; i < size(); ++i) t(i) = theta(i);
  return t;
}

MatrixXd toy_gradient_moments(const ScalarToySpec& toy, const VectorXd& theta, int order) {
  if (order < 0 || order > 6) throw ConfigError("toy_gradient_moments: order must be in 0..6");
  MatrixXd out(theta.size(), order + 1);
  for (Index i = 0; i < theta.size(); ++i) {
    const double mu = toy.lambda * theta(i);
    const double s = toy.grad_noise + toy.gamma_fluct * theta(i) * theta(i);
    const double mu2 = mu * mu;
    const double mom[7] = {1.0,
                           mu,
                           mu2 + s,
                           mu * (mu2 + 3.0 * s),
                           mu2 * mu2 + 6.0 * mu2 * s + 3.0 * s * s,
                           mu * (mu2 * mu2 + 10.0 * mu2 * s + 15.0 * s * s),
                           mu2 * mu2 * mu2 + 15.0 * mu2 * mu2 * s + 45.0 * mu2 * s * s +
                               15.0 * s * s * s};
    for (int m = 0; m <= order; ++m) out(i, m) = mom[m];
  }
  return out;
}

VectorXd central_derivative(const VectorXd& f, double dx, int m) {
  // Second-order central stencils, offsets -3..3.
  static const double kStencil[7][7] = {
      {0, 0, 0, 1, 0, 0, 0},
      {0, 0, -0.5, 0, 0.5, 0, 0},
      {0, 0, 1, -2, 1, 0, 0},
      {0, -0.5, 1, 0, -1, 0.5, 0},
      {0, 1, -4, 6, -4, 1, 0},
      {-0.5, 2, -2.5, 0, 2.5, -2, 0.5},
      {1, -6, 15, -20, 15, -6, 1},
  };
  if (m < 0 || m > 6) throw ConfigError("central_derivative: order must be in 0..6");
  const Index n = f.size();
  const double scale = std::pow(dx, -m);
  VectorXd out = VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int o = -3; o <= 3; ++o) {
      const double c = kStencil[m][o + 3];
      const Index j = i + o;
      if (c != 0.0 && j >= 0 && j < n) acc += c * f(j);
    }
    out(i) = acc * scale;
  }
  return out;
}

DensityGrid km_step(const DensityGrid& grid, const ScalarToySpec& toy, double eta,
                    const KmOptions& opts, KmDiagnostics* diag) {
  if (opts.order < 2 || opts.order > 6) throw ConfigError("km_step: order must be in 2..6");
  toy.validate();
  const VectorXd theta = grid.nodes();
  MatrixXd mom = toy_gradient_moments(toy, theta, opts.order);
  if (opts.langevin_second_moment) {
    mom.col(2) = (toy.grad_noise + toy.gamma_fluct * theta.array().square()).matrix();
  }

  const double dx = grid.dx();
  DensityGrid next = grid;
  next.step = grid.step + 1;
  next.time = grid.time + eta;
  double coeff = 1.0;
  VectorXd last;
  for (int m = 1; m <= opts.order; ++m) {
    coeff *= eta / m;
    const VectorXd f = mom.col(m).cwiseProduct(grid.values);
    last = coeff * central_derivative(f, dx, m);
    next.values += last;
  }

  const double before = grid.mass();
  const double after = next.mass();
  if (diag != nullptr) {
    diag->mass_before = before;
    diag->mass_after = after;
    diag->last_term_l1 = last.cwiseAbs().sum() * dx;
    diag->min_value = next.values.minCoeff();
    const double peak = grid.values.cwiseAbs().maxCoeff();
    double worst = 0.0;
    for (Index i = 0; i < grid.size(); ++i)
      if (std::abs(grid.values(i)) > 1e-12 * peak)
        worst = std::max(worst, 2.0 * eta * eta * mom(i, 2) / (dx * dx));
    diag->stability_number = worst;
  }
  if (!(std::abs(after - before) <= opts.max_mass_drift)) {
    std::ostringstream os;
    os.precision(10);
    os << "km_step: mass drift " << after - before << " at step " << next.step
       << " (mass " << before << " -> " << after << "); the density reaches the domain edges or "
       << "the truncation is unstable on this grid (dx=" << dx << ", eta=" << eta << ")";
    throw NumericalError(os.str());
  }
  return next;
}

double fp_max_dt(const DensityGrid& grid, const ScalarToySpec& toy, double eta) {
  const double dx = grid.dx();
  const double edge = std::max(std::abs(grid.theta_min), std::abs(grid.theta_max));
  const double max_d = toy.grad_noise + toy.gamma_fluct * edge * edge;
  const double max_u = std::abs(toy.lambda) * edge;
  double dt = std::numeric_limits<double>::infinity();
  if (eta * max_d > 0.0) dt = std::min(dt, 0.4 * dx * dx / (eta * max_d));
  if (max_u > 0.0) dt = std::min(dt, 0.4 * dx / max_u);
  return dt;
}

DensityGrid langevin_fp_step(const DensityGrid& grid, const ScalarToySpec& toy, double eta,
                             double dt) {
  const double limit = fp_max_dt(grid, toy, eta);
  if (!(dt > 0.0) || dt > limit * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "langevin_fp_step: dt=" << dt << " violates the explicit stability bound " << limit;
    throw NumericalError(os.str());
  }
  const Index n = grid.size();
  const double dx = grid.dx();
  const VectorXd& p = grid.values;
  VectorXd g(n);
  for (Index i = 0; i < n; ++i) {
    const double t = grid.theta(i);
    g(i) = (toy.grad_noise + toy.gamma_fluct * t * t) * p(i);
  }
  // J_{i+1/2} = u p - (eta/2) d(D p)/dtheta with drift velocity u = -lambda theta.
  VectorXd flux = VectorXd::Zero(n + 1);
  for (Index i = 0; i + 1 < n; ++i) {
    const double t_mid = grid.theta_min + (static_cast<double>(i) + 0.5) * dx;
    const double u = -toy.lambda * t_mid;
    flux(i + 1) = u * 0.5 * (p(i) + p(i + 1)) - 0.5 * eta * (g(i + 1) - g(i)) / dx;
  }
  DensityGrid next = grid;
  for (Index i = 0; i < n; ++i) next.values(i) -= dt * (flux(i + 1) - flux(i)) / dx;
  next.time = grid.time + dt;
  return next;
}

DensityGrid evolve_fp(const DensityGrid& grid, const ScalarToySpec& toy, double eta,
                      std::int64_t n_steps, double dt_max) {
  if (n_steps < 0) throw ConfigError("evolve_fp: n_steps must be >= 0");
  DensityGrid cur = grid;
  if (n_steps == 0) return cur;
  const double limit = fp_max_dt(grid, toy, eta);
  const double cap = dt_max > 0.0 ? std::min(dt_max, limit) : limit;
  const double span = static_cast<double>(n_steps) * eta;
  const double start = grid.time;
  if (span == 0.0) {
    cur.step += n_steps;
    return cur;
  }
  const auto sub = static_cast<std::int64_t>(std::ceil(span / cap));
  const double dt = span / static_cast<double>(sub);
  for (std::int64_t k = 0; k < sub; ++k) cur = langevin_fp_step(cur, toy, eta, dt);
  cur.time = start + span;
  cur.step = grid.step + n_steps;
  return cur;
}

VectorXd density_moments(const DensityGrid& grid, int k) {
  if (k < 0) throw ConfigError("density_moments: k must be >= 0");
  VectorXd out = VectorXd::Zero(k + 1);
  const double dx = grid.dx();
  // Node sums, the same rule as mass(), so the truncated step's exact moment
  // identities hold on the grid.
  for (Index i = 0; i < grid.size(); ++i) {
    const double w = dx;
    const double t = grid.theta(i);
    double tp = 1.0;
    for (int j = 0; j <= k; ++j) {
      out(j) += w * tp * grid.values(i);
      tp *= t;
    }
  }
  return out;
}

double ks_distance(const DensityGrid& grid, std::vector<double> samples) {
  if (samples.empty()) throw ConfigError("ks_distance: no samples");
  std::sort(samples.begin(), samples.end());
  const Index n = grid.size();
  const double dx = grid.dx();
  VectorXd cdf(n);
  cdf(0) = 0.0;
  for (Index i = 1; i < n; ++i)
    cdf(i) = cdf(i - 1) + 0.5 * dx * (std::max(grid.values(i - 1), 0.0) + std::max(grid.values(i), 0.0));
  if (cdf(n - 1) > 0.0) cdf /= cdf(n - 1);
  auto model_cdf = [&](double x) {
    if (x <= grid.theta_min) return 0.0;
    if (x >= grid.theta_max) return 1.0;
    const double pos = (x - grid.theta_min) / dx;
    const auto i = std::min<Index>(static_cast<Index>(pos), n - 2);
    const double frac = pos - static_cast<double>(i);
    return cdf(i) + frac * (cdf(i + 1) - cdf(i));
  };
  const double m = static_cast<double>(samples.size());
  double worst = 0.0;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    const double f = model_cdf(samples[j]);
    worst = std::max({worst, std::abs(f - static_cast<double>(j) / m),
                      std::abs(f - static_cast<double>(j + 1) / m)});
  }
  return worst;
}

VectorXd histogram_density(const DensityGrid& grid, const std::vector<double>& samples) {
  const double dx = grid.dx();
  VectorXd h = VectorXd::Zero(grid.size());
  for (double s : samples) {
    const double pos = (s - grid.theta_min) / dx;
    const auto i = static_cast<Index>(std::floor(pos + 0.5));
    if (i >= 0 && i < grid.size()) h(i) += 1.0;
  }
  if (!samples.empty()) h /= static_cast<double>(samples.size()) * dx;
  return h;
}

std::pair<double, double> default_domain(const ScalarToySpec& toy, double eta, double mu0,
                                         double var0, std::int64_t n_steps,
                                         double half_width_sigmas) {
  // Variance from a point start plus the contracted initial spread.
  const double m = 1.0 - 2.0 * eta * toy.lambda +
                   eta * eta * (toy.lambda * toy.lambda + toy.gamma_fluct);
  const double grown = eta * eta * toy.grad_noise * geometric_sum(m, n_steps) +
                       var0 * std::pow(m, static_cast<double>(n_steps));
  const double sigma = std::sqrt(std::max({var0, grown, 0.0}));
  if (!std::isfinite(sigma) || sigma == 0.0)
    throw ConfigError("default_domain: cannot size the domain (zero or infinite spread)");
  return {mu0 - half_width_sigmas * sigma, mu0 + half_width_sigmas * sigma};
}

Index km_stable_nodes(const ScalarToySpec& toy, double eta, double lo, double hi) {
  if (!(hi > lo)) throw ConfigError("km_stable_nodes: need hi > lo");
  const double edge = std::max(std::abs(lo), std::abs(hi));
  const double m2 = (toy.lambda * toy.lambda + toy.gamma_fluct) * edge * edge + toy.grad_noise;
  const double min_dx = eta * std::sqrt(m2);
  if (!(min_dx > 0.0)) return 401;
  const double cells = std::floor((hi - lo) / min_dx);
  return std::max<Index>(3, static_cast<Index>(std::min(cells, 1e6)) + 1);
}

}  // namespace sgdfluct
