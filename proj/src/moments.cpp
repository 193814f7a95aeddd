#include "sgdfluct/moments.hpp"

#include <algorithm>
#include <cmath>

namespace sgdfluct {

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::Confined: return "Confined";
    case Regime::Diffusive: return "Diffusive";
    case Regime::Intermediate: return "Intermediate";
    case Regime::Divergent: return "Divergent";
  }
  return "?";
}

std::size_t RegimeReport::count(Regime r) const {
  return static_cast<std::size_t>(std::count_if(
      directions.begin(), directions.end(), [r](const DirectionRegime& d) { return d.regime == r; }));
}

RegimeReport classify_regimes(double eta, const VectorXd& lambda, const VectorXd& eh2,
                              Horizon horizon, const RegimeThresholds& th) {
  if (eh2.size() != lambda.size()) throw ConfigError("classify_regimes: size mismatch");
  RegimeReport report;
  report.eta = eta;
  report.horizon = horizon;
  const VectorXd m = variance_multiplier(eta, lambda, eh2);
  for (Index i = 0; i < lambda.size(); ++i) {
    DirectionRegime dr;
    dr.lambda = lambda(i);
    dr.multiplier = m(i);
    const double span = horizon.infinite ? std::numeric_limits<double>::infinity()
                                         : eta * static_cast<double>(horizon.steps) *
                                               std::abs(lambda(i));
    if (span < th.diffusive || (horizon.infinite && lambda(i) == 0.0 && m(i) <= 1.0)) {
      dr.regime = Regime::Diffusive;
    } else if (m(i) >= 1.0 - th.marginal) {
      dr.regime = Regime::Divergent;
    } else if (std::abs(m(i)) < 1.0) {
      dr.regime = Regime::Confined;
    } else {
      dr.regime = Regime::Intermediate;
    }
    if (lambda(i) > 0.0 && eta > 0.0) dr.tau = 1.0 / (2.0 * eta * lambda(i));
    report.directions.push_back(dr);
  }
  return report;
}

RegimeReport regime_report(double eta, const FluctuationMoments& m, Horizon horizon,
                           const RegimeThresholds& th) {
  const VectorXd eh2 = m.hessian_second_moment();
  RegimeReport report = classify_regimes(eta, m.lambda, eh2, horizon, th);
  const VectorXd gamma_diag = m.gamma.diagonal();
  const VectorXd discrete = predict_variance_discrete(eta, m.lambda, eh2, m.grad_noise);
  const VectorXd langevin = predict_variance_langevin(eta, m.lambda, gamma_diag, m.grad_noise);
  VectorXd at_horizon;
  if (!horizon.infinite) {
    // Exact diagonal variance from a point start, with the full Gamma coupling.
    at_horizon = covariance_closed_form_diag(horizon.steps, eta, m.lambda, m.gamma, m.grad_noise,
                                             VectorXd::Zero(m.dim()))
                     .values;
  }
  for (Index i = 0; i < m.dim(); ++i) {
    DirectionRegime& dr = report.directions[static_cast<std::size_t>(i)];
    dr.plateau_discrete = discrete(i);
    dr.plateau_langevin = langevin(i);
    dr.diffusion_coeff = eta * eta * m.grad_noise(i);
    if (!horizon.infinite) dr.horizon_value = at_horizon(i);
  }
  return report;
}

}  // namespace sgdfluct
