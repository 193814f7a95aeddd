#include "sgdfluct/dynamics.hpp"

#include "sgdfluct/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

namespace sgdfluct {

std::string_view to_string(StepperKind k) {
  switch (k) {
    case StepperKind::DiscreteSGD: return "discrete";
    case StepperKind::LangevinStandard: return "langevin_standard";
    case StepperKind::LangevinModified: return "langevin_modified";
  }
  return "?";
}

StepperKind parse_stepper(std::string_view name) {
  if (name == "discrete" || name == "sgd") return StepperKind::DiscreteSGD;
  if (name == "langevin_standard") return StepperKind::LangevinStandard;
  if (name == "langevin_modified") return StepperKind::LangevinModified;
  throw ConfigError("unknown stepper '" + std::string(name) +
                    "' (expected discrete, langevin_standard or langevin_modified)");
}

std::string_view to_string(LangevinScheme s) {
  return s == LangevinScheme::Exponential ? "exponential" : "euler";
}

LangevinScheme parse_scheme(std::string_view name) {
  if (name == "exponential") return LangevinScheme::Exponential;
  if (name == "euler") return LangevinScheme::Euler;
  throw ConfigError("unknown scheme '" + std::string(name) + "' (expected exponential or euler)");
}

void EnsembleConfig::validate(Index dim) const {
  if (n_trajectories < 1) throw ConfigError("n_trajectories: must be >= 1");
  if (n_steps < 1) throw ConfigError("n_steps: must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate: must be finite and >= 0");
  if (record_stride < 1) throw ConfigError("record_stride: must be >= 1");
  if (threads < 1) throw ConfigError("threads: must be >= 1");
  if (!(initial_std >= 0.0)) throw ConfigError("initial_std: must be >= 0");
  if (initial_point.size() != 0 && initial_point.size() != dim)
    throw ConfigError("initial_point: dimension mismatch");
  if (sampling.pool_size < 0) throw ConfigError("sampling.pool_size: must be >= 0");
  if (sampling.kind == SamplingMode::Kind::WithoutReplacement && sampling.pool_size < 1)
    throw ConfigError("sampling.pool_size: required (>= 1) without replacement");
}

VectorXd EnsembleRecord::cross_section(Index rec, Index dir) const {
  VectorXd out(n_trajectories);
  for (Index t = 0; t < n_trajectories; ++t) out(t) = at(t, rec, dir);
  return out;
}

std::int64_t EnsembleRecord::n_divergent() const {
  return std::count_if(divergent_step.begin(), divergent_step.end(),
                       [](std::int64_t s) { return s >= 0; });
}

VectorXd sgd_step(const VectorXd& w, const MinibatchSample& sample, double eta,
                  const VectorXd& center) {
  const Index d = w.size();
  if (center.size() != d || sample.grad.size() != d || sample.hessian.rows() != d ||
      sample.hessian.cols() != d)
    throw ConfigError("sgd_step: dimension mismatch");
  return w - eta * (sample.grad + sample.hessian * (w - center));
}

namespace {

// Per-landscape constants of a surrogate step in the rotated basis:
// x' = a .* x + noise, noise covariance c .* D(x).
struct SurrogateKernel {
  VectorXd a;
  MatrixXd c;
  bool diagonal_noise = false;  // Gamma diagonal and no rank-one term

  SurrogateKernel(StepperKind kind, const FluctuationMoments& m, double eta, LangevinScheme scheme) {
    const Index d = m.dim();
    a.resize(d);
    c.resize(d, d);
    for (Index i = 0; i < d; ++i) {
      a(i) = scheme == LangevinScheme::Exponential ? std::exp(-m.lambda(i) * eta)
                                                   : 1.0 - eta * m.lambda(i);
      for (Index j = 0; j < d; ++j) {
        if (scheme == LangevinScheme::Euler) {
          c(i, j) = eta * eta;
          continue;
        }
        const double s = m.lambda(i) + m.lambda(j);
        c(i, j) = std::abs(s * eta) < 1e-300 ? eta * eta : eta * -std::expm1(-s * eta) / s;
      }
    }
    MatrixXd off = m.gamma;
    off.diagonal().setZero();
    diagonal_noise = kind == StepperKind::LangevinStandard && off.cwiseAbs().maxCoeff() == 0.0;
    if (d == 1) diagonal_noise = true;
  }
};

MatrixXd surrogate_diffusion(StepperKind kind, const FluctuationMoments& m, const VectorXd& x) {
  MatrixXd dm = gradient_noise_covariance(m, x);
  if (kind == StepperKind::LangevinModified) {
    const VectorXd g = m.lambda.cwiseProduct(x);
    dm.noalias() += g * g.transpose();
  }
  return dm;
}

VectorXd surrogate_step_rotated(StepperKind kind, const FluctuationMoments& m,
                                const SurrogateKernel& k, const VectorXd& x, Engine& eng) {
  const Index d = x.size();
  VectorXd out = k.a.cwiseProduct(x);
  VectorXd xi(d);
  for (Index i = 0; i < d; ++i) xi(i) = standard_normal(eng);
  if (k.diagonal_noise) {
    for (Index i = 0; i < d; ++i) {
      double var = m.grad_noise(i) + m.gamma(i, i) * x(i) * x(i);
      if (kind == StepperKind::LangevinModified) var += m.lambda(i) * m.lambda(i) * x(i) * x(i);
      out(i) += std::sqrt(k.c(i, i) * var) * xi(i);
    }
    return out;
  }
  const MatrixXd q = k.c.cwiseProduct(surrogate_diffusion(kind, m, x));
  out.noalias() += psd_sqrt(q) * xi;
  return out;
}

VectorXd langevin_ambient(StepperKind kind, const VectorXd& w, const FluctuationMoments& m,
                          double eta, Engine& eng, LangevinScheme scheme) {
  if (w.size() != m.dim()) throw ConfigError("langevin step: dimension mismatch");
  const SurrogateKernel k(kind, m, eta, scheme);
  const VectorXd x = m.basis.transpose() * (w - m.center);
  return m.center + m.basis * surrogate_step_rotated(kind, m, k, x, eng);
}

}  // namespace

VectorXd langevin_standard_step(const VectorXd& w, const FluctuationMoments& m, double eta,
                                Engine& eng, LangevinScheme scheme) {
  return langevin_ambient(StepperKind::LangevinStandard, w, m, eta, eng, scheme);
}

VectorXd langevin_modified_step(const VectorXd& w, const FluctuationMoments& m, double eta,
                                Engine& eng, LangevinScheme scheme) {
  return langevin_ambient(StepperKind::LangevinModified, w, m, eta, eng, scheme);
}

MatrixXd surrogate_noise_covariance(StepperKind kind, const FluctuationMoments& m,
                                    const VectorXd& x_rot, double eta, LangevinScheme scheme) {
  if (kind == StepperKind::DiscreteSGD)
    throw ConfigError("surrogate_noise_covariance: not a surrogate stepper");
  const SurrogateKernel k(kind, m, eta, scheme);
  return k.c.cwiseProduct(surrogate_diffusion(kind, m, x_rot));
}

VectorXd propagate_mean(StepperKind kind, const FluctuationMoments& m, double eta,
                        LangevinScheme scheme, const VectorXd& mean) {
  if (kind == StepperKind::DiscreteSGD)
    return (1.0 - eta * m.lambda.array()).matrix().cwiseProduct(mean);
  return SurrogateKernel(kind, m, eta, scheme).a.cwiseProduct(mean);
}

MatrixXd propagate_second_moment(StepperKind kind, const FluctuationMoments& m, double eta,
                                 LangevinScheme scheme, const MatrixXd& s) {
  if (kind == StepperKind::DiscreteSGD) {
    const VectorXd a = (1.0 - eta * m.lambda.array()).matrix();
    MatrixXd out = a.asDiagonal() * s * a.asDiagonal();
    out += eta * eta * hessian_fluct_contract(m.gamma, s);
    out.diagonal() += eta * eta * m.grad_noise;
    return out;
  }
  const SurrogateKernel k(kind, m, eta, scheme);
  MatrixXd dm = hessian_fluct_contract(m.gamma, s);
  dm.diagonal() += m.grad_noise;
  if (kind == StepperKind::LangevinModified) dm += m.lambda.asDiagonal() * s * m.lambda.asDiagonal();
  return k.a.asDiagonal() * s * k.a.asDiagonal() + k.c.cwiseProduct(dm);
}

StepperStationary stepper_stationary(StepperKind kind, const FluctuationMoments& m, double eta,
                                     LangevinScheme scheme) {
  const Index d = m.dim();
  StepperStationary out;
  out.multiplier.resize(d);
  out.source.resize(d);
  out.plateau.resize(d);
  VectorXd a(d), c(d);
  if (kind == StepperKind::DiscreteSGD) {
    a = (1.0 - eta * m.lambda.array()).matrix();
    c.setConstant(eta * eta);
  } else {
    const SurrogateKernel k(kind, m, eta, scheme);
    a = k.a;
    c = k.c.diagonal();
  }
  for (Index i = 0; i < d; ++i) {
    double g = m.gamma(i, i);
    if (kind == StepperKind::LangevinModified) g += m.lambda(i) * m.lambda(i);
    out.multiplier(i) = a(i) * a(i) + c(i) * g;
    out.source(i) = c(i) * m.grad_noise(i);
    out.plateau(i) = out.multiplier(i) < 1.0 ? out.source(i) / (1.0 - out.multiplier(i))
                                             : std::numeric_limits<double>::infinity();
  }
  return out;
}

namespace {

struct Plan {
  StepperKind stepper;
  EnsembleConfig cfg;
  FluctuationMoments fm;
  bool toy = false;
  bool rotated = true;   // working coordinates are mean-Hessian rotated
  MatrixXd basis;        // working -> ambient displacement
  MatrixXd proj;         // k x working dim
  VectorXd x0;           // working coordinates
  VectorXd ambient_center;
  std::vector<MinibatchSample> pool;  // working coordinates
  std::vector<double> pool_g, pool_h;  // toy
  MatrixXd factor_sqrt;
  const Landscape* landscape = nullptr;
};

MinibatchSample draw_working(const Plan& p, Engine& eng) {
  return std::visit(
      [&](const auto& spec) -> MinibatchSample {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, ScalarToySpec>) return sample_scalar_toy(spec, eng);
        else if constexpr (std::is_same_v<T, QuadraticEnsembleSpec>)
          return sample_quadratic_ensemble_rotated(spec, eng);
        else return detail::sample_factor_model(spec, p.factor_sqrt, eng);
      },
      *p.landscape);
}

// Cycles through the shared pool: uniform picks with replacement, or a fresh
// permutation per epoch without.
class PoolCursor {
 public:
  PoolCursor(const SamplingMode& mode, Engine& eng) : mode_(mode), eng_(eng) {
    if (mode_.kind == SamplingMode::Kind::WithoutReplacement) {
      perm_.resize(static_cast<std::size_t>(mode_.pool_size));
      std::iota(perm_.begin(), perm_.end(), std::int64_t{0});
      pos_ = perm_.size();
    }
  }
  std::size_t next() {
    if (mode_.kind == SamplingMode::Kind::WithReplacement)
      return static_cast<std::size_t>(uniform_index(eng_, static_cast<std::uint64_t>(mode_.pool_size)));
    if (pos_ == perm_.size()) {
      portable_shuffle(perm_.begin(), perm_.end(), eng_);
      pos_ = 0;
    }
    return static_cast<std::size_t>(perm_[pos_++]);
  }

 private:
  SamplingMode mode_;
  Engine& eng_;
  std::vector<std::int64_t> perm_;
  std::size_t pos_ = 0;
};

bool uses_pool(const Plan& p) {
  return p.stepper == StepperKind::DiscreteSGD && p.cfg.sampling.pool_size > 0;
}

void record_row(const Plan& p, EnsembleRecord& rec, Index traj, Index row, const VectorXd& x) {
  const VectorXd v = p.proj * x;
  for (Index k = 0; k < rec.n_directions; ++k) rec.at(traj, row, k) = v(k);
}

void mark_divergent(EnsembleRecord& rec, Index traj, Index from_row, std::int64_t step) {
  rec.divergent_step[static_cast<std::size_t>(traj)] = step;
  for (Index r = from_row; r < rec.n_recorded(); ++r)
    for (Index k = 0; k < rec.n_directions; ++k)
      rec.at(traj, r, k) = std::numeric_limits<double>::quiet_NaN();
}

std::uint64_t trajectory_seed(const EnsembleConfig& cfg, Index j) {
  if (cfg.forced_trajectory_seed) return *cfg.forced_trajectory_seed;
  return derive_seed(cfg.master_seed, stream::kTrajectory, static_cast<std::uint64_t>(j));
}

// Scalar toy loop; the dominant cost of the large 1D ensembles.
void run_toy_trajectory(const Plan& p, EnsembleRecord& rec, Index j, VectorXd* endpoint) {
  const auto& spec = std::get<ScalarToySpec>(*p.landscape);
  Engine eng(trajectory_seed(p.cfg, j));
  const double eta = p.cfg.learning_rate;
  const double sd_g = std::sqrt(spec.grad_noise);
  const double sd_h = std::sqrt(spec.gamma_fluct);
  const double lam = spec.lambda;
  const std::int64_t stride = p.cfg.record_stride;
  const double limit = p.cfg.divergence_threshold;

  double a = 0.0, c = 0.0, gam = spec.gamma_fluct;
  if (p.stepper != StepperKind::DiscreteSGD) {
    const SurrogateKernel k(p.stepper, p.fm, eta, p.cfg.scheme);
    a = k.a(0);
    c = k.c(0, 0);
    if (p.stepper == StepperKind::LangevinModified) gam += lam * lam;
  }
  std::optional<PoolCursor> cursor;
  if (uses_pool(p)) cursor.emplace(p.cfg.sampling, eng);

  double x = p.x0(0);
  if (p.cfg.initial_std > 0.0) x += p.cfg.initial_std * standard_normal(eng);
  rec.at(j, 0, 0) = x;
  Index row = 1;
  for (std::int64_t n = 1; n <= p.cfg.n_steps; ++n) {
    if (p.stepper == StepperKind::DiscreteSGD) {
      double g, h;
      if (cursor) {
        const std::size_t idx = cursor->next();
        g = p.pool_g[idx];
        h = p.pool_h[idx];
      } else {
        g = sd_g * standard_normal(eng);
        h = lam + sd_h * standard_normal(eng);
      }
      x -= eta * (g + h * x);
    } else {
      const double z = standard_normal(eng);
      x = a * x + std::sqrt(c * (spec.grad_noise + gam * x * x)) * z;
    }
    if (!(std::abs(x) <= limit)) {
      mark_divergent(rec, j, (n + stride - 1) / stride, n);
      if (endpoint) (*endpoint)(0) = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    if (n % stride == 0) rec.at(j, row++, 0) = x;
  }
  if (endpoint) (*endpoint)(0) = p.ambient_center(0) + x;
}

void run_trajectory(const Plan& p, EnsembleRecord& rec, Index j, VectorXd* endpoint) {
  if (p.toy) {
    run_toy_trajectory(p, rec, j, endpoint);
    return;
  }
  Engine eng(trajectory_seed(p.cfg, j));
  const double eta = p.cfg.learning_rate;
  const std::int64_t stride = p.cfg.record_stride;
  std::optional<PoolCursor> cursor;
  if (uses_pool(p)) cursor.emplace(p.cfg.sampling, eng);
  std::optional<SurrogateKernel> kernel;
  if (p.stepper != StepperKind::DiscreteSGD) kernel.emplace(p.stepper, p.fm, eta, p.cfg.scheme);

  VectorXd x = p.x0;
  if (p.cfg.initial_std > 0.0)
    for (Index i = 0; i < x.size(); ++i) x(i) += p.cfg.initial_std * standard_normal(eng);
  record_row(p, rec, j, 0, x);
  Index row = 1;
  for (std::int64_t n = 1; n <= p.cfg.n_steps; ++n) {
    if (p.stepper == StepperKind::DiscreteSGD) {
      if (cursor) {
        const MinibatchSample& s = p.pool[cursor->next()];
        x -= eta * (s.grad + s.hessian * x);
      } else {
        const MinibatchSample s = draw_working(p, eng);
        x -= eta * (s.grad + s.hessian * x);
      }
    } else {
      x = surrogate_step_rotated(p.stepper, p.fm, *kernel, x, eng);
    }
    const double nrm = x.norm();
    if (!(nrm <= p.cfg.divergence_threshold)) {
      mark_divergent(rec, j, (n + stride - 1) / stride, n);
      if (endpoint) endpoint->setConstant(std::numeric_limits<double>::quiet_NaN());
      return;
    }
    if (n % stride == 0) record_row(p, rec, j, row++, x);
  }
  if (endpoint) *endpoint = p.ambient_center + p.basis * x;
}

}  // namespace

EnsembleRecord run_ensemble(const Landscape& landscape, StepperKind stepper,
                            const EnsembleConfig& cfg, const MatrixXd& directions) {
  validate(landscape);
  const Index dim = dimension(landscape);
  cfg.validate(dim);

  Plan p;
  p.stepper = stepper;
  p.cfg = cfg;
  p.landscape = &landscape;
  p.fm = fluctuation_moments(landscape);
  p.toy = std::holds_alternative<ScalarToySpec>(landscape);
  p.ambient_center = center(landscape);
  const bool factor = std::holds_alternative<FactorModelSpec>(landscape);
  p.rotated = !(factor && stepper == StepperKind::DiscreteSGD);
  p.basis = p.rotated ? p.fm.basis : MatrixXd::Identity(dim, dim);
  if (factor) p.factor_sqrt = detail::factor_sqrt(std::get<FactorModelSpec>(landscape));

  MatrixXd dirs = directions;
  if (dirs.size() == 0) dirs = p.fm.basis.transpose();
  if (dirs.cols() != dim) throw ConfigError("directions: column count must equal the dimension");
  const MatrixXd gram = dirs * dirs.transpose();
  if ((gram - MatrixXd::Identity(dirs.rows(), dirs.rows())).cwiseAbs().maxCoeff() > 1e-8)
    throw ConfigError("directions: rows must be orthonormal (tolerance 1e-8)");
  p.proj = dirs * p.basis;

  const VectorXd w0 = cfg.initial_point.size() == 0 ? p.ambient_center : cfg.initial_point;
  p.x0 = p.basis.transpose() * (w0 - p.ambient_center);

  if (uses_pool(p)) {
    Engine pool_eng(derive_seed(cfg.master_seed, stream::kPool));
    const auto n = static_cast<std::size_t>(cfg.sampling.pool_size);
    if (p.toy) {
      p.pool_g.resize(n);
      p.pool_h.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const MinibatchSample s = draw_working(p, pool_eng);
        p.pool_g[i] = s.grad(0);
        p.pool_h[i] = s.hessian(0, 0);
      }
    } else {
      p.pool.reserve(n);
      for (std::size_t i = 0; i < n; ++i) p.pool.push_back(draw_working(p, pool_eng));
    }
  }

  EnsembleRecord rec;
  rec.n_trajectories = cfg.n_trajectories;
  rec.n_directions = dirs.rows();
  for (std::int64_t r = 0; r < cfg.n_recorded(); ++r) rec.steps.push_back(r * cfg.record_stride);
  rec.projections.assign(
      static_cast<std::size_t>(rec.n_trajectories * rec.n_recorded() * rec.n_directions), 0.0);
  rec.divergent_step.assign(static_cast<std::size_t>(cfg.n_trajectories), -1);
  if (cfg.keep_endpoints) rec.raw_endpoints = MatrixXd::Zero(cfg.n_trajectories, dim);

  const Index n_threads = std::min<Index>(cfg.threads, cfg.n_trajectories);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max<Index>(n_threads, 1)));
  auto work = [&](Index slot, Index begin, Index end) {
    try {
      VectorXd endpoint(dim);
      for (Index j = begin; j < end; ++j) {
        run_trajectory(p, rec, j, cfg.keep_endpoints ? &endpoint : nullptr);
        if (cfg.keep_endpoints) rec.raw_endpoints->row(j) = endpoint.transpose();
      }
    } catch (...) {
      errors[static_cast<std::size_t>(slot)] = std::current_exception();
    }
  };

  if (n_threads <= 1) {
    work(0, 0, cfg.n_trajectories);
  } else {
    std::vector<std::thread> pool;
    const Index chunk = (cfg.n_trajectories + n_threads - 1) / n_threads;
    for (Index t = 0; t < n_threads; ++t) {
      const Index b = t * chunk;
      const Index e = std::min<Index>(cfg.n_trajectories, b + chunk);
      if (b < e) pool.emplace_back(work, t, b, e);
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  return rec;
}

}  // namespace sgdfluct
