#include "sgdfluct/landscape.hpp"

#include "sgdfluct/spectral.hpp"

#include <cmath>
#include <memory>
#include <sstream>

namespace sgdfluct {

namespace {

[[noreturn]] void reject(const std::string& what) { throw ConfigError(what); }

void require_size(const char* name, Index got, Index want) {
  if (got != want) {
    std::ostringstream os;
    os << name << ": expected " << want << " entries, got " << got;
    reject(os.str());
  }
}

}  // namespace

void ScalarToySpec::validate() const {
  if (!(grad_noise >= 0.0)) reject("toy: grad_noise d must be >= 0");
  if (!(gamma_fluct >= 0.0)) reject("toy: gamma_fluct must be >= 0");
  if (!std::isfinite(lambda) || !std::isfinite(center)) reject("toy: lambda and center must be finite");
}

void QuadraticEnsembleSpec::validate() const {
  if (dim < 1) reject("quadratic: dim must be positive");
  require_size("lambda", lambda.size(), dim);
  require_size("center", center.size(), dim);
  if (eigenvectors.rows() != dim || eigenvectors.cols() != dim) reject("eigenbasis: must be dim x dim");
  const double orth = (eigenvectors.transpose() * eigenvectors - MatrixXd::Identity(dim, dim))
                          .cwiseAbs()
                          .maxCoeff();
  if (orth > 1e-10) {
    std::ostringstream os;
    os << "eigenbasis: not orthogonal (max |O^T O - I| = " << orth << ")";
    reject(os.str());
  }
  if (gamma_fluct.rows() != dim || gamma_fluct.cols() != dim) reject("gamma_fluct: must be dim x dim");
  if ((gamma_fluct - gamma_fluct.transpose()).cwiseAbs().maxCoeff() > 0.0)
    reject("gamma_fluct: must be symmetric");
  if (gamma_fluct.minCoeff() < 0.0) reject("gamma_fluct: entries must be >= 0");
  switch (grad_noise.mode) {
    case GradNoiseLaw::Mode::Explicit:
      require_size("grad_noise.d", grad_noise.d.size(), dim);
      if (grad_noise.d.minCoeff() < 0.0) reject("grad_noise.d: entries must be >= 0");
      break;
    case GradNoiseLaw::Mode::Proportional:
      if (!(grad_noise.gamma > 0.0)) reject("grad_noise.gamma: must be > 0");
      if (!(grad_noise.epsilon >= 0.0)) reject("grad_noise.epsilon: must be >= 0");
      for (Index i = 0; i < dim; ++i) {
        if (lambda(i) + grad_noise.epsilon < 0.0) {
          std::ostringstream os;
          os << "grad_noise: proportional law gives negative d_" << i << " = gamma*("
             << lambda(i) << " + " << grad_noise.epsilon << ")";
          reject(os.str());
        }
      }
      break;
  }
}

VectorXd QuadraticEnsembleSpec::grad_noise_diag() const {
  if (grad_noise.mode == GradNoiseLaw::Mode::Explicit) return grad_noise.d;
  return grad_noise.gamma * (lambda.array() + grad_noise.epsilon).matrix();
}

MatrixXd QuadraticEnsembleSpec::mean_hessian() const {
  MatrixXd h = eigenvectors * lambda.asDiagonal() * eigenvectors.transpose();
  h.triangularView<Eigen::StrictlyLower>() = h.transpose().triangularView<Eigen::StrictlyLower>();
  return h;
}

void FactorModelSpec::validate() const {
  if (dim < 1) reject("factor: dim must be positive");
  if (batch_size < 1) reject("batch_size: must be >= 1");
  if (phi_double_prime == 0.0) reject("phi_double_prime: must be nonzero");
  require_size("center", center.size(), dim);
  if (b_covariance.rows() != dim || b_covariance.cols() != dim)
    reject("b_covariance: must be dim x dim");
  if ((b_covariance - b_covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    reject("b_covariance: must be symmetric");
  const double min_ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(b_covariance).eigenvalues().minCoeff();
  if (min_ev < -1e-10) {
    std::ostringstream os;
    os << "b_covariance: not PSD (eigenvalue " << min_ev << ")";
    reject(os.str());
  }
}

double FactorModelSpec::implied_gamma() const {
  return phi_prime * phi_prime / (batch_size * phi_double_prime);
}

MatrixXd FactorModelSpec::mean_hessian() const { return phi_double_prime * b_covariance; }

MinibatchSample sample_scalar_toy(const ScalarToySpec& spec, Engine& eng) {
  MinibatchSample s;
  s.grad.resize(1);
  s.hessian.resize(1, 1);
  s.grad(0) = std::sqrt(spec.grad_noise) * standard_normal(eng);
  s.hessian(0, 0) = spec.lambda + std::sqrt(spec.gamma_fluct) * standard_normal(eng);
  return s;
}

MinibatchSample sample_scalar_toy(const ScalarToySpec& spec, std::uint64_t seed) {
  Engine eng(seed);
  return sample_scalar_toy(spec, eng);
}

MinibatchSample sample_quadratic_ensemble_rotated(const QuadraticEnsembleSpec& spec, Engine& eng) {
  const Index d = spec.dim;
  const VectorXd noise = spec.grad_noise_diag();
  MinibatchSample s;
  s.grad = VectorXd::Zero(d);
  for (Index i = 0; i < d; ++i) {
    if (noise(i) > 0.0) s.grad(i) = std::sqrt(noise(i)) * standard_normal(eng);
  }
  s.hessian = spec.lambda.asDiagonal();
  for (Index i = 0; i < d; ++i) {
    for (Index j = i; j < d; ++j) {
      const double var = spec.gamma_fluct(i, j);
      if (var <= 0.0) continue;
      const double z = std::sqrt(var) * standard_normal(eng);
      s.hessian(i, j) += z;
      if (j != i) s.hessian(j, i) += z;
    }
  }
  return s;
}

MinibatchSample sample_quadratic_ensemble(const QuadraticEnsembleSpec& spec, Engine& eng) {
  MinibatchSample rot = sample_quadratic_ensemble_rotated(spec, eng);
  const MatrixXd& v = spec.eigenvectors;
  MinibatchSample s;
  s.grad = v * rot.grad;
  s.hessian = v * rot.hessian * v.transpose();
  // Mirror the upper triangle so H is exactly symmetric.
  s.hessian.triangularView<Eigen::StrictlyLower>() =
      s.hessian.transpose().triangularView<Eigen::StrictlyLower>();
  return s;
}

MinibatchSample sample_quadratic_ensemble(const QuadraticEnsembleSpec& spec, std::uint64_t seed) {
  Engine eng(seed);
  return sample_quadratic_ensemble(spec, eng);
}

namespace detail {

MatrixXd factor_sqrt(const FactorModelSpec& spec) { return psd_sqrt(spec.b_covariance); }

MinibatchSample sample_factor_model(const FactorModelSpec& spec, const MatrixXd& b_sqrt,
                                    Engine& eng) {
  const Index d = spec.dim;
  MinibatchSample s;
  s.grad = VectorXd::Zero(d);
  s.hessian = MatrixXd::Zero(d, d);
  VectorXd z(d);
  for (int k = 0; k < spec.batch_size; ++k) {
    for (Index i = 0; i < d; ++i) z(i) = standard_normal(eng);
    const VectorXd b = b_sqrt * z;
    s.grad += b;
    s.hessian.noalias() += b * b.transpose();
  }
  s.grad *= spec.phi_prime / spec.batch_size;
  s.hessian *= spec.phi_double_prime / spec.batch_size;
  return s;
}

}  // namespace detail

MinibatchSample sample_factor_model(const FactorModelSpec& spec, Engine& eng) {
  return detail::sample_factor_model(spec, detail::factor_sqrt(spec), eng);
}

MinibatchSample sample_factor_model(const FactorModelSpec& spec, std::uint64_t seed) {
  Engine eng(seed);
  return sample_factor_model(spec, eng);
}

MinibatchSample sample(const Landscape& landscape, Engine& eng) {
  return std::visit(
      [&](const auto& spec) -> MinibatchSample {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, ScalarToySpec>) return sample_scalar_toy(spec, eng);
        else if constexpr (std::is_same_v<T, QuadraticEnsembleSpec>)
          return sample_quadratic_ensemble(spec, eng);
        else return sample_factor_model(spec, eng);
      },
      landscape);
}

Index dimension(const Landscape& landscape) {
  return std::visit(
      [](const auto& spec) -> Index {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, ScalarToySpec>) return 1;
        else return spec.dim;
      },
      landscape);
}

VectorXd center(const Landscape& landscape) {
  return std::visit(
      [](const auto& spec) -> VectorXd {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, ScalarToySpec>) return VectorXd::Constant(1, spec.center);
        else return spec.center;
      },
      landscape);
}

void validate(const Landscape& landscape) {
  std::visit([](const auto& spec) { spec.validate(); }, landscape);
}

VectorXd FluctuationMoments::hessian_second_moment() const {
  return (lambda.array().square() + gamma.diagonal().array()).matrix();
}

FluctuationMoments fluctuation_moments(const Landscape& landscape) {
  FluctuationMoments m;
  std::visit(
      [&](const auto& spec) {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, ScalarToySpec>) {
          m.lambda = VectorXd::Constant(1, spec.lambda);
          m.gamma = MatrixXd::Constant(1, 1, spec.gamma_fluct);
          m.grad_noise = VectorXd::Constant(1, spec.grad_noise);
          m.basis = MatrixXd::Identity(1, 1);
          m.center = VectorXd::Constant(1, spec.center);
        } else if constexpr (std::is_same_v<T, QuadraticEnsembleSpec>) {
          m.lambda = spec.lambda;
          m.gamma = spec.gamma_fluct;
          m.grad_noise = spec.grad_noise_diag();
          m.basis = spec.eigenvectors;
          m.center = spec.center;
        } else {
          const auto eig = dense_symmetric_eig(spec.mean_hessian(), 1e-8);
          m.lambda = eig.eigenvalues;
          m.basis = eig.eigenvectors;
          m.center = spec.center;
          const double nb = spec.batch_size;
          m.gamma = (m.lambda * m.lambda.transpose()) / nb;
          m.gamma.diagonal() *= 2.0;
          m.grad_noise = (spec.phi_prime * spec.phi_prime / (nb * spec.phi_double_prime)) * m.lambda;
        }
      },
      landscape);
  return m;
}

MatrixXd gradient_noise_covariance(const FluctuationMoments& m, const VectorXd& x_rot) {
  MatrixXd out = hessian_fluct_contract(m.gamma, x_rot * x_rot.transpose());
  out.diagonal() += m.grad_noise;
  return out;
}

MatrixXd random_orthogonal(Index dim, std::uint64_t seed) {
  Engine eng(seed);
  MatrixXd g(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i) g(i, j) = standard_normal(eng);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(dim, dim);
  const VectorXd r_diag = qr.matrixQR().diagonal();
  for (Index j = 0; j < dim; ++j) {
    if (r_diag(j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

HvpOracle make_minibatch_hessian_oracle(const Landscape& landscape, int averaging_count,
                                        std::uint64_t seed) {
  validate(landscape);
  if (averaging_count < 1) throw ConfigError("hessian oracle: averaging_count must be >= 1");
  HvpOracle oracle;
  oracle.dim = dimension(landscape);
  oracle.is_stochastic = true;
  oracle.averaging_count = averaging_count;
  auto eng = std::make_shared<Engine>(seed);
  oracle.apply = [landscape, averaging_count, eng](const VectorXd& v) -> VectorXd {
    VectorXd acc = VectorXd::Zero(v.size());
    for (int b = 0; b < averaging_count; ++b) acc.noalias() += sample(landscape, *eng).hessian * v;
    return acc / static_cast<double>(averaging_count);
  };
  return oracle;
}

}  // namespace sgdfluct
