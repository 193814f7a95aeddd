#include "sgdfluct/spectral.hpp"

#include <cmath>
#include <sstream>

namespace sgdfluct {

namespace {

VectorXd random_unit(Index d, Engine& eng) {
  VectorXd v(d);
  for (Index i = 0; i < d; ++i) v(i) = standard_normal(eng);
  return v / v.norm();
}

// Two passes of classical Gram-Schmidt against the first `cols` columns.
void orthogonalize(VectorXd& w, const MatrixXd& q, Index cols) {
  if (cols == 0) return;
  for (int pass = 0; pass < 2; ++pass) {
    const auto basis = q.leftCols(cols);
    w.noalias() -= basis * (basis.transpose() * w);
  }
}

}  // namespace

double hvp_symmetry_defect(const HvpOracle& oracle, int probes, std::uint64_t seed) {
  Engine eng(seed);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    const VectorXd u = random_unit(oracle.dim, eng);
    const VectorXd v = random_unit(oracle.dim, eng);
    const VectorXd av = oracle(v);
    const VectorXd au = oracle(u);
    const double scale = std::max({1.0, av.norm(), au.norm()});
    worst = std::max(worst, std::abs(u.dot(av) - au.dot(v)) / scale);
  }
  return worst;
}

HvpOracle make_dense_oracle(const MatrixXd& a) {
  if (a.rows() != a.cols()) throw ConfigError("make_dense_oracle: matrix is not square");
  HvpOracle oracle;
  oracle.dim = a.rows();
  oracle.apply = [a](const VectorXd& v) -> VectorXd { return a * v; };
  const double defect = hvp_symmetry_defect(oracle, 3, 0x5eed);
  if (defect > 1e-6) {
    std::ostringstream os;
    os << "make_dense_oracle: operator not symmetric (defect " << defect << ")";
    throw ConfigError(os.str());
  }
  return oracle;
}

SpectralResult<double> lanczos_topk(const HvpOracle& oracle, const LanczosOptions& opts,
                                    LanczosDiagnostics* diagnostics) {
  const Index d = oracle.dim;
  const int m = opts.max_iters;
  if (opts.k < 1 || opts.k > m || m > d) {
    std::ostringstream os;
    os << "lanczos_topk: need 1 <= k <= max_iters <= d (k=" << opts.k << ", max_iters=" << m
       << ", d=" << d << ")";
    throw ConfigError(os.str());
  }
  if (opts.reorth_every < 1) throw ConfigError("lanczos_topk: reorth_every must be >= 1");

  Engine eng(derive_seed(opts.seed, stream::kLanczos));
  MatrixXd q(d, m);
  VectorXd alpha = VectorXd::Zero(m);
  VectorXd beta = VectorXd::Zero(m);
  q.col(0) = random_unit(d, eng);

  int restarts = 0;
  bool reorth_next = false;
  double tnorm = 0.0;
  int built = m;
  for (int j = 0; j < m; ++j) {
    VectorXd w = oracle(q.col(j));
    if (j > 0) w.noalias() -= beta(j - 1) * q.col(j - 1);
    alpha(j) = q.col(j).dot(w);
    w.noalias() -= alpha(j) * q.col(j);

    const bool periodic = (j + 1) % opts.reorth_every == 0;
    if (periodic || reorth_next) orthogonalize(w, q, j + 1);
    reorth_next = periodic;

    beta(j) = w.norm();
    tnorm = std::max(tnorm, std::abs(alpha(j)) + beta(j) + (j > 0 ? beta(j - 1) : 0.0));
    if (j + 1 == m) break;

    if (beta(j) <= opts.breakdown_tol * std::max(tnorm, 1.0)) {
      if (++restarts > opts.max_restarts) {
        std::ostringstream os;
        os << "lanczos_topk: breakdown at iteration " << j + 1 << " after " << opts.max_restarts
           << " restarts";
        throw NumericalError(os.str());
      }
      VectorXd fresh = random_unit(d, eng);
      orthogonalize(fresh, q, j + 1);
      const double nrm = fresh.norm();
      if (nrm < 1e-8) {
        built = j + 1;
        break;
      }
      beta(j) = 0.0;
      q.col(j + 1) = fresh / nrm;
    } else {
      q.col(j + 1) = w / beta(j);
    }
  }

  const int size = built;
  Eigen::SelfAdjointEigenSolver<MatrixXd> tri;
  tri.computeFromTridiagonal(alpha.head(size), beta.head(std::max(size - 1, 0)),
                             Eigen::ComputeEigenvectors);
  if (tri.info() != Eigen::Success) throw NumericalError("lanczos_topk: tridiagonal solver failed");

  const int k = std::min<int>(opts.k, size);
  SpectralResult<double> out;
  out.eigenvalues.resize(k);
  out.eigenvectors.resize(d, k);
  out.residuals.resize(k);
  for (int i = 0; i < k; ++i) {
    const Index src = size - 1 - i;
    out.eigenvalues(i) = tri.eigenvalues()(src);
    VectorXd y = q.leftCols(size) * tri.eigenvectors().col(src);
    out.eigenvectors.col(i) = y / y.norm();
  }
  detail::canonicalize_signs(out.eigenvectors);
  for (int i = 0; i < k; ++i) {
    const VectorXd y = out.eigenvectors.col(i);
    out.residuals(i) = (oracle(y) - out.eigenvalues(i) * y).norm();
  }
  out.iterations_used = size;
  out.restarts = restarts;

  if (diagnostics != nullptr) {
    const auto basis = q.leftCols(size);
    MatrixXd gram = basis.transpose() * basis;
    gram.diagonal().setZero();
    diagnostics->max_orthogonality_defect = size > 1 ? gram.cwiseAbs().maxCoeff() : 0.0;
    diagnostics->basis_size = size;
  }
  return out;
}

}  // namespace sgdfluct
