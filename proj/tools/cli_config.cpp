#include "cli.hpp"

#include "sgdfluct/rng.hpp"

#include <cmath>

namespace sgdfluct::cli {

using io::ConfigReader;

std::vector<double> expand_sequence(const json& spec, const std::string& path) {
  auto bad = [&](const std::string& what) -> void {
    throw ConfigError("config key '" + path + "': " + what);
  };
  std::vector<double> out;
  auto expand_one = [&](const json& e) {
    if (e.is_number()) {
      out.push_back(e.get<double>());
      return;
    }
    if (!e.is_object() || e.size() != 1) bad("expected numbers or {\"linspace\"|\"logspace\": [lo, hi, count]}");
    const auto it = e.begin();
    const json& a = it.value();
    if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() ||
        !a[2].is_number_integer() || a[2].get<std::int64_t>() < 1)
      bad("'" + it.key() + "' takes [lo, hi, count]");
    const double lo = a[0].get<double>(), hi = a[1].get<double>();
    const auto n = a[2].get<std::int64_t>();
    if (it.key() != "linspace" && it.key() != "logspace") bad("unknown generator '" + it.key() + "'");
    const bool log = it.key() == "logspace";
    if (log && !(lo > 0.0 && hi > 0.0)) bad("logspace bounds must be positive");
    for (std::int64_t k = 0; k < n; ++k) {
      const double t = n == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n - 1);
      out.push_back(log ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))
                        : lo + t * (hi - lo));
    }
  };
  if (spec.is_array()) {
    for (const auto& e : spec) expand_one(e);
  } else {
    expand_one(spec);
  }
  return out;
}

namespace {

VectorXd sequence_vector(ConfigReader& r, const std::string& key, Index dim) {
  const json& v = r.raw(key);
  if (v.is_number()) return VectorXd::Constant(dim, v.get<double>());
  const auto seq = expand_sequence(v, r.path_of(key));
  if (static_cast<Index>(seq.size()) != dim)
    r.fail(key, "expected " + std::to_string(dim) + " values, got " + std::to_string(seq.size()));
  return Eigen::Map<const VectorXd>(seq.data(), dim);
}

MatrixXd parse_basis(ConfigReader& r, const std::string& key, Index dim, std::uint64_t seed,
                     std::uint64_t index) {
  if (!r.has(key)) {
    r.raw(key);  // reports the missing key
  }
  const json& v = r.raw(key);
  if (v.is_string()) {
    const std::string name = v.get<std::string>();
    if (name == "identity") return MatrixXd::Identity(dim, dim);
    if (name == "random") return random_orthogonal(dim, derive_seed(seed, stream::kLandscape, index));
    r.fail(key, "expected \"identity\", \"random\" or a matrix");
  }
  const MatrixXd m = r.matrix(key);
  if (m.rows() != dim || m.cols() != dim) r.fail(key, "matrix must be dim x dim");
  return m;
}

MatrixXd parse_gamma(ConfigReader& r, Index dim) {
  const json& v = r.raw("gamma_fluct");
  if (v.is_array()) {
    const MatrixXd m = r.matrix("gamma_fluct");
    if (m.rows() != dim || m.cols() != dim) r.fail("gamma_fluct", "matrix must be dim x dim");
    return m;
  }
  if (v.is_number()) return v.get<double>() * MatrixXd::Identity(dim, dim);
  ConfigReader g = r.child("gamma_fluct");
  MatrixXd m = MatrixXd::Constant(dim, dim, g.number("offdiag", 0.0));
  m.diagonal() = sequence_vector(g, "diag", dim);
  return m;
}

VectorXd parse_center(ConfigReader& r, Index dim) {
  if (!r.has("center")) {
    r.number("center", 0.0);
    return VectorXd::Zero(dim);
  }
  return sequence_vector(r, "center", dim);
}

}  // namespace

ScalarToySpec parse_toy(ConfigReader r) {
  ScalarToySpec t;
  t.lambda = r.number("lambda");
  t.gamma_fluct = r.number("gamma_fluct");
  t.grad_noise = r.number("grad_noise");
  t.center = r.number("center", 0.0);
  t.validate();
  return t;
}

Landscape parse_landscape(ConfigReader r, std::uint64_t seed) {
  const std::string kind = r.string("kind");
  if (kind == "toy") return parse_toy(r);
  if (kind == "quadratic") {
    QuadraticEnsembleSpec q;
    q.dim = r.integer("dim");
    if (q.dim < 1) r.fail("dim", "must be positive");
    q.lambda = sequence_vector(r, "lambda", q.dim);
    q.eigenvectors = parse_basis(r, "eigenbasis", q.dim, seed, 0);
    q.gamma_fluct = parse_gamma(r, q.dim);
    ConfigReader g = r.child("grad_noise");
    const std::string mode = g.string("mode");
    if (mode == "explicit") {
      q.grad_noise.mode = GradNoiseLaw::Mode::Explicit;
      q.grad_noise.d = sequence_vector(g, "d", q.dim);
    } else if (mode == "proportional") {
      q.grad_noise.mode = GradNoiseLaw::Mode::Proportional;
      q.grad_noise.gamma = g.number("gamma");
      q.grad_noise.epsilon = g.number("epsilon");  // required, no default
    } else {
      g.fail("mode", "expected \"explicit\" or \"proportional\"");
    }
    q.center = parse_center(r, q.dim);
    q.validate();
    return q;
  }
  if (kind == "factor") {
    FactorModelSpec f;
    f.dim = r.integer("dim");
    if (f.dim < 1) r.fail("dim", "must be positive");
    f.batch_size = static_cast<int>(r.integer("batch_size"));
    f.phi_prime = r.number("phi_prime");
    f.phi_double_prime = r.number("phi_double_prime");
    const json& b = r.raw("b_covariance");
    if (b.is_array()) {
      f.b_covariance = r.matrix("b_covariance");
    } else {
      ConfigReader bc = r.child("b_covariance");
      const VectorXd ev = sequence_vector(bc, "eigenvalues", f.dim);
      const MatrixXd v = parse_basis(bc, "eigenbasis", f.dim, seed, 1);
      f.b_covariance = v * ev.asDiagonal() * v.transpose();
      f.b_covariance = 0.5 * (f.b_covariance + f.b_covariance.transpose()).eval();
    }
    f.center = parse_center(r, f.dim);
    f.validate();
    return f;
  }
  r.fail("kind", "expected \"toy\", \"quadratic\" or \"factor\"");
}

EnsembleConfig parse_ensemble(ConfigReader r, Index dim, std::uint64_t seed, int threads) {
  EnsembleConfig c;
  c.n_trajectories = r.integer("n_trajectories");
  c.n_steps = r.integer("n_steps");
  c.record_stride = r.integer("record_stride", 1);
  c.master_seed = seed;
  c.threads = threads;
  if (r.has("initial_point")) c.initial_point = sequence_vector(r, "initial_point", dim);
  else r.number("initial_point", 0.0);
  c.initial_std = r.number("initial_std", 0.0);
  c.scheme = parse_scheme(r.string("scheme", "exponential"));
  c.divergence_threshold = r.number("divergence_threshold", 1e12);
  if (r.has("sampling")) {
    ConfigReader s = r.child("sampling");
    const std::string mode = s.string("mode", "with_replacement");
    c.sampling.pool_size = s.integer("pool_size", 0);
    if (mode == "with_replacement") c.sampling.kind = SamplingMode::Kind::WithReplacement;
    else if (mode == "without_replacement") c.sampling.kind = SamplingMode::Kind::WithoutReplacement;
    else s.fail("mode", "expected \"with_replacement\" or \"without_replacement\"");
  }
  c.validate(dim);
  return c;
}

}  // namespace sgdfluct::cli
