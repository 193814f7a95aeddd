#include "cli.hpp"

#include "sgdfluct/density.hpp"
#include "sgdfluct/estimators.hpp"
#include "sgdfluct/moments.hpp"
#include "sgdfluct/rng.hpp"
#include "sgdfluct/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <tuple>

namespace sgdfluct::cli {

using io::ConfigReader;
using io::CsvWriter;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Context {
  RunDir& dir;
  const RunOptions& opts;
  std::uint64_t seed;
  json summary = json::object();
  std::vector<std::string> verdicts;

  void say(const std::string& line) const {
    if (!opts.quiet) std::cout << line << '\n';
  }
};

// ---------------------------------------------------------------------------
// Shared pieces

std::vector<StepperKind> parse_steppers(ConfigReader& r, const std::vector<StepperKind>& fallback) {
  if (!r.has("steppers")) {
    r.number("steppers", 0.0);
    return fallback;
  }
  const json& v = r.raw("steppers");
  if (!v.is_array() || v.empty()) r.fail("steppers", "expected a non-empty array of stepper names");
  std::vector<StepperKind> out;
  for (const auto& e : v) {
    if (!e.is_string()) r.fail("steppers", "expected stepper names");
    try {
      out.push_back(parse_stepper(e.get<std::string>()));
    } catch (const ConfigError& err) {
      r.fail("steppers", err.what());
    }
  }
  return out;
}

std::vector<double> parse_etas(ConfigReader& r) {
  const auto etas = expand_sequence(r.raw("eta"), r.path_of("eta"));
  if (etas.empty()) r.fail("eta", "needs at least one value");
  for (double e : etas)
    if (!(e >= 0.0) || !std::isfinite(e)) r.fail("eta", "learning rates must be finite and >= 0");
  return etas;
}

PlateauOptions parse_plateau(ConfigReader& r) {
  PlateauOptions o;
  if (!r.has("plateau")) {
    r.number("plateau", 0.0);
    return o;
  }
  ConfigReader p = r.child("plateau");
  o.window_steps = p.integer("window_steps", o.window_steps);
  o.significance = p.number("significance", o.significance);
  if (o.window_steps < 1) p.fail("window_steps", "must be positive");
  return o;
}

BootstrapOptions parse_bootstrap(ConfigReader& r, std::uint64_t seed) {
  BootstrapOptions b;
  b.seed = seed;
  if (!r.has("bootstrap")) {
    r.number("bootstrap", 0.0);
    return b;
  }
  ConfigReader c = r.child("bootstrap");
  b.resamples = static_cast<int>(c.integer("resamples", 0));
  b.lo_percentile = c.number("lo_percentile", b.lo_percentile);
  b.hi_percentile = c.number("hi_percentile", b.hi_percentile);
  if (b.resamples < 0) c.fail("resamples", "must be >= 0");
  return b;
}

struct OutputOptions {
  bool projections = true;
  Index projection_trajectories = 32;
};

OutputOptions parse_output(ConfigReader& r) {
  OutputOptions o;
  if (!r.has("output")) {
    r.number("output", 0.0);
    return o;
  }
  ConfigReader c = r.child("output");
  o.projections = c.boolean("projections", o.projections);
  o.projection_trajectories = c.integer("projection_trajectories", o.projection_trajectories);
  return o;
}

// The diagonal of each stepper's second moment obeys a closed linear map
// s' = T s + s0 in the rotated basis; the mean obeys m' = a m. Iterating it
// gives exact variance profiles from any start.
struct DiagMomentMap {
  MatrixXd t;
  VectorXd s0;
  VectorXd a;
};

DiagMomentMap diag_moment_map(StepperKind kind, const FluctuationMoments& fm, double eta,
                              LangevinScheme scheme) {
  const Index d = fm.dim();
  DiagMomentMap out;
  out.s0 = propagate_second_moment(kind, fm, eta, scheme, MatrixXd::Zero(d, d)).diagonal();
  out.t.resize(d, d);
  for (Index k = 0; k < d; ++k) {
    MatrixXd e = MatrixXd::Zero(d, d);
    e(k, k) = 1.0;
    out.t.col(k) = propagate_second_moment(kind, fm, eta, scheme, e).diagonal() - out.s0;
  }
  out.a = propagate_mean(kind, fm, eta, scheme, VectorXd::Ones(d));
  return out;
}

// Rows: recorded steps; columns: rotated directions.
MatrixXd exact_variance_profile(const DiagMomentMap& map, const VectorXd& x0, double var0,
                                const std::vector<std::int64_t>& steps) {
  const Index d = x0.size();
  MatrixXd out(static_cast<Index>(steps.size()), d);
  VectorXd mean = x0;
  VectorXd s = x0.cwiseAbs2().array() + var0;
  std::int64_t n = 0;
  for (std::size_t r = 0; r < steps.size(); ++r) {
    while (n < steps[r]) {
      s = map.t * s + map.s0;
      mean = map.a.cwiseProduct(mean);
      ++n;
    }
    out.row(static_cast<Index>(r)) = (s - mean.cwiseAbs2()).transpose();
  }
  return out;
}

std::string verdict_word(double eta, double multiplier, double lambda, double plateau) {
  if (eta == 0.0) return "FROZEN";
  if (multiplier < 1.0 - 1e-12) return "CONFINED(" + short_number(plateau) + ")";
  if (multiplier <= 1.0 + 1e-12 && lambda == 0.0) return "DIFFUSIVE";
  return "DIVERGENT";
}

// Plateau over the tail window, or nothing when the window holds too few
// finite records.
std::optional<PlateauResult> try_plateau(const std::vector<std::int64_t>& steps,
                                         const std::vector<double>& values,
                                         const PlateauOptions& opts) {
  if (steps.empty()) return std::nullopt;
  const std::int64_t last = steps.back();
  std::int64_t points = 0;
  for (std::size_t i = 0; i < steps.size(); ++i)
    if (steps[i] > last - opts.window_steps && std::isfinite(values[i])) ++points;
  if (points < 10) return std::nullopt;
  return extract_plateau(steps, values, opts);
}

std::string four_significant(double v) {
  if (!std::isfinite(v)) return short_number(v);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%#.4g", v);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string eta_tag(double eta) { return "eta=" + io::format_number(eta); }

std::string run_subdir(const std::string& stepper, double eta) {
  return stepper + "_eta" + io::format_number(eta);
}

void check_unexpected_divergence(const EnsembleRecord& rec, bool expected_confined,
                                 const std::string& what) {
  if (expected_confined && rec.n_divergent() > 0)
    throw NumericalError(what + ": " + std::to_string(rec.n_divergent()) +
                         " trajectories diverged although every direction is predicted confined");
}

// ---------------------------------------------------------------------------
// toy

void cmd_toy(Context& ctx, ConfigReader& r) {
  const ScalarToySpec toy = parse_toy(r.child("toy"));
  const Landscape land = toy;
  const FluctuationMoments fm = fluctuation_moments(land);
  const auto etas = parse_etas(r);
  const auto steppers = parse_steppers(
      r, {StepperKind::DiscreteSGD, StepperKind::LangevinStandard, StepperKind::LangevinModified});
  const PlateauOptions popts = parse_plateau(r);
  const BootstrapOptions boot = parse_bootstrap(r, ctx.seed);
  const OutputOptions out = parse_output(r);
  EnsembleConfig base = parse_ensemble(r.child("ensemble"), 1, ctx.seed, ctx.opts.threads);
  r.finish();

  const VectorXd x0 = base.initial_point.size() == 0
                          ? VectorXd::Zero(1)
                          : VectorXd(base.initial_point.array() - toy.center);
  const double var0 = base.initial_std * base.initial_std;

  CsvWriter var_csv(ctx.dir.file("variance.csv"),
                    {"eta", "stepper", "step", "variance", "n_valid", "theory", "ci_lo", "ci_hi"});
  CsvWriter reg_csv(ctx.dir.file("stepper_regimes.csv"),
                    {"eta", "stepper", "multiplier", "source", "plateau_theory", "verdict"});
  CsvWriter pl_csv(ctx.dir.file("plateaus.csv"),
                   {"eta", "stepper", "plateau_measured", "slope", "slope_p_value",
                    "trend_warning", "plateau_theory", "relative_error", "n_divergent"});

  json runs = json::array();
  for (double eta : etas) {
    EnsembleConfig cfg = base;
    cfg.learning_rate = eta;
    json run = json::object();
    run["eta"] = eta;
    json per = json::object();
    std::string line;
    for (StepperKind kind : steppers) {
      const std::string name(to_string(kind));
      const StepperStationary st = stepper_stationary(kind, fm, eta, cfg.scheme);
      const std::string verdict = verdict_word(eta, st.multiplier(0), toy.lambda, st.plateau(0));
      line += (line.empty() ? "" : ", ") + name + ": " + verdict;
      reg_csv << eta << name << st.multiplier(0) << st.source(0) << st.plateau(0) << verdict;
      reg_csv.end_row();

      const EnsembleRecord rec = run_ensemble(land, kind, cfg);
      ctx.dir.stage_done("ensemble " + eta_tag(eta) + " " + name);
      const bool confined = verdict.rfind("CONFINED", 0) == 0 || verdict == "FROZEN";
      check_unexpected_divergence(rec, confined, name + " at " + eta_tag(eta));

      const VarianceSeries vs = empirical_variance(rec, boot).front();
      const MatrixXd theory =
          exact_variance_profile(diag_moment_map(kind, fm, eta, cfg.scheme), x0, var0, rec.steps);
      for (std::size_t i = 0; i < vs.steps.size(); ++i) {
        var_csv << eta << name << vs.steps[i] << vs.variance[i] << vs.n_valid[i]
                << theory(static_cast<Index>(i), 0)
                << (vs.bootstrap_ci ? (*vs.bootstrap_ci)[i].first : kNaN)
                << (vs.bootstrap_ci ? (*vs.bootstrap_ci)[i].second : kNaN);
        var_csv.end_row();
      }
      if (out.projections)
        write_projections(ctx.dir.file(run_subdir(name, eta) + "/projections.csv"), rec,
                          out.projection_trajectories);

      const auto pl = try_plateau(vs.steps, vs.variance, popts);
      const double measured = pl ? pl->value : kNaN;
      const double rel = (std::isfinite(st.plateau(0)) && st.plateau(0) != 0.0)
                             ? (measured - st.plateau(0)) / st.plateau(0)
                             : kNaN;
      pl_csv << eta << name << measured << (pl ? pl->slope : kNaN)
             << (pl ? pl->slope_p_value : kNaN) << std::int64_t{pl && pl->trend_warning ? 1 : 0}
             << st.plateau(0) << rel << rec.n_divergent();
      pl_csv.end_row();

      const double final_var = vs.variance.back();
      double first_var = kNaN;
      for (std::size_t i = 0; i < vs.steps.size(); ++i)
        if (vs.steps[i] > 0) {
          first_var = vs.variance[i];
          break;
        }
      per[name] = {{"verdict", verdict},
                   {"multiplier", st.multiplier(0)},
                   {"plateau_theory", number_or_null(st.plateau(0))},
                   {"plateau_theory_4sig", four_significant(st.plateau(0))},
                   {"plateau_measured", number_or_null(measured)},
                   {"trend_warning", pl ? pl->trend_warning : false},
                   {"final_variance", number_or_null(final_var)},
                   {"final_variance_theory", number_or_null(theory(theory.rows() - 1, 0))},
                   {"growth_ratio", number_or_null(final_var / first_var)},
                   {"n_divergent", rec.n_divergent()}};
    }
    run["steppers"] = per;
    run["verdict"] = line;
    runs.push_back(run);
    ctx.verdicts.push_back(line);
    ctx.say(eta_tag(eta) + "  " + line);
  }
  ctx.summary["toy"] = {{"lambda", toy.lambda},
                        {"gamma_fluct", toy.gamma_fluct},
                        {"grad_noise", toy.grad_noise},
                        {"center", toy.center}};
  ctx.summary["runs"] = runs;
}

// ---------------------------------------------------------------------------
// ensemble

std::vector<Index> top_directions(const VectorXd& lambda, Index k) {
  std::vector<Index> idx(static_cast<std::size_t>(lambda.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return lambda(a) > lambda(b); });
  if (k > 0 && k < lambda.size()) idx.resize(static_cast<std::size_t>(k));
  return idx;
}

void cmd_ensemble(Context& ctx, ConfigReader& r) {
  const Landscape land = parse_landscape(r.child("landscape"), ctx.seed);
  const Index dim = dimension(land);
  const FluctuationMoments fm = fluctuation_moments(land);
  const auto etas = parse_etas(r);
  const auto steppers = parse_steppers(r, {StepperKind::DiscreteSGD});
  const PlateauOptions popts = parse_plateau(r);
  const BootstrapOptions boot = parse_bootstrap(r, ctx.seed);
  const OutputOptions out = parse_output(r);
  const Index top_k = r.integer("top_k", 0);
  RegimeThresholds th;
  th.diffusive = r.number("diffusive_threshold", th.diffusive);
  std::int64_t noise_samples = 0;
  double fit_eta = *std::min_element(etas.begin(), etas.end());
  if (r.has("gamma")) {
    ConfigReader g = r.child("gamma");
    noise_samples = g.integer("measure_samples", 0);
    fit_eta = g.number("fit_eta", fit_eta);
  } else {
    r.number("gamma", 0.0);
  }
  EnsembleConfig base = parse_ensemble(r.child("ensemble"), dim, ctx.seed, ctx.opts.threads);
  r.finish();
  if (std::find(etas.begin(), etas.end(), fit_eta) == etas.end())
    throw ConfigError("config key 'gamma.fit_eta': must be one of the listed learning rates");

  const auto sel = top_directions(fm.lambda, top_k);
  const auto n_sel = static_cast<Index>(sel.size());
  MatrixXd dirs(n_sel, dim);
  VectorXd lam_sel(n_sel), eh2_sel(n_sel), d_sel(n_sel);
  const VectorXd eh2 = fm.hessian_second_moment();
  for (Index k = 0; k < n_sel; ++k) {
    const Index i = sel[static_cast<std::size_t>(k)];
    dirs.row(k) = fm.basis.col(i).transpose();
    lam_sel(k) = fm.lambda(i);
    eh2_sel(k) = eh2(i);
    d_sel(k) = fm.grad_noise(i);
  }
  const VectorXd w0 = base.initial_point.size() == 0 ? fm.center : base.initial_point;
  const VectorXd x0 = fm.basis.transpose() * (w0 - fm.center);
  const double var0 = base.initial_std * base.initial_std;
  base.keep_endpoints = dim <= 256;

  CsvWriter var_csv(ctx.dir.file("variance.csv"),
                    {"eta", "stepper", "direction", "lambda", "step", "variance", "n_valid",
                     "theory", "ci_lo", "ci_hi"});
  CsvWriter reg_csv(ctx.dir.file("regimes.csv"),
                    {"eta", "direction", "lambda", "m", "class", "plateau_discrete",
                     "plateau_langevin", "tau", "diffusion_coeff", "horizon_value"});
  CsvWriter pl_csv(ctx.dir.file("plateaus.csv"),
                   {"eta", "stepper", "direction", "lambda", "regime", "plateau_measured",
                    "bootstrap_se", "slope", "slope_p_value", "trend_warning", "plateau_theory",
                    "plateau_langevin", "half_gamma_eta"});
  std::vector<std::int64_t> dir_labels(sel.begin(), sel.end());

  const bool proportional = std::holds_alternative<QuadraticEnsembleSpec>(land) &&
                            std::get<QuadraticEnsembleSpec>(land).grad_noise.mode ==
                                GradNoiseLaw::Mode::Proportional;
  double gamma_nominal = kNaN;
  if (proportional) gamma_nominal = std::get<QuadraticEnsembleSpec>(land).grad_noise.gamma;
  if (std::holds_alternative<FactorModelSpec>(land))
    gamma_nominal = std::get<FactorModelSpec>(land).implied_gamma();

  json runs = json::array();
  std::map<double, VectorXd> discrete_plateaus;
  std::map<double, std::vector<Regime>> regimes_by_eta;
  for (double eta : etas) {
    EnsembleConfig cfg = base;
    cfg.learning_rate = eta;
    const RegimeReport rep = regime_report(eta, fm, Horizon(cfg.n_steps), th);
    std::vector<Regime> reg_sel;
    for (Index k = 0; k < n_sel; ++k) {
      const Index i = sel[static_cast<std::size_t>(k)];
      const DirectionRegime& dr = rep.directions[static_cast<std::size_t>(i)];
      reg_sel.push_back(dr.regime);
      reg_csv << eta << static_cast<std::int64_t>(i) << dr.lambda << dr.multiplier
              << std::string(to_string(dr.regime)) << dr.plateau_discrete << dr.plateau_langevin
              << dr.tau << dr.diffusion_coeff << dr.horizon_value;
      reg_csv.end_row();
    }
    regimes_by_eta[eta] = reg_sel;

    json run = json::object();
    run["eta"] = eta;
    json counts = json::object();
    for (Regime g : {Regime::Confined, Regime::Diffusive, Regime::Intermediate, Regime::Divergent})
      counts[std::string(to_string(g))] = rep.count(g);
    run["regime_counts"] = counts;
    json per = json::object();
    for (StepperKind kind : steppers) {
      const std::string name(to_string(kind));
      const EnsembleRecord rec = run_ensemble(land, kind, cfg, dirs);
      ctx.dir.stage_done("ensemble " + eta_tag(eta) + " " + name);
      const StepperStationary st = stepper_stationary(kind, fm, eta, cfg.scheme);
      bool all_confined = eta > 0.0;
      for (Index i = 0; i < dim; ++i) all_confined = all_confined && st.multiplier(i) < 1.0;
      check_unexpected_divergence(rec, all_confined, name + " at " + eta_tag(eta));

      const auto series = empirical_variance(rec, boot);
      const MatrixXd theory =
          exact_variance_profile(diag_moment_map(kind, fm, eta, cfg.scheme), x0, var0, rec.steps);
      VectorXd plateaus = VectorXd::Constant(n_sel, kNaN);
      std::int64_t trend = 0;
      for (Index k = 0; k < n_sel; ++k) {
        const Index i = sel[static_cast<std::size_t>(k)];
        const VarianceSeries& vs = series[static_cast<std::size_t>(k)];
        for (std::size_t s = 0; s < vs.steps.size(); ++s) {
          var_csv << eta << name << static_cast<std::int64_t>(i) << fm.lambda(i) << vs.steps[s]
                  << vs.variance[s] << vs.n_valid[s] << theory(static_cast<Index>(s), i)
                  << (vs.bootstrap_ci ? (*vs.bootstrap_ci)[s].first : kNaN)
                  << (vs.bootstrap_ci ? (*vs.bootstrap_ci)[s].second : kNaN);
          var_csv.end_row();
        }
        const auto pl = try_plateau(vs.steps, vs.variance, popts);
        plateaus(k) = pl ? pl->value : kNaN;
        if (pl && pl->trend_warning) ++trend;
        pl_csv << eta << name << static_cast<std::int64_t>(i) << fm.lambda(i)
               << std::string(to_string(reg_sel[static_cast<std::size_t>(k)])) << plateaus(k)
               << (vs.bootstrap_se ? vs.bootstrap_se->back() : kNaN) << (pl ? pl->slope : kNaN)
               << (pl ? pl->slope_p_value : kNaN)
               << std::int64_t{pl && pl->trend_warning ? 1 : 0} << st.plateau(i)
               << rep.directions[static_cast<std::size_t>(i)].plateau_langevin
               << 0.5 * gamma_nominal * eta;
        pl_csv.end_row();
      }
      if (out.projections)
        write_projections(ctx.dir.file(run_subdir(name, eta) + "/projections.csv"), rec,
                          out.projection_trajectories, &dir_labels);
      if (kind == StepperKind::DiscreteSGD) discrete_plateaus[eta] = plateaus;

      json entry = {{"n_divergent", rec.n_divergent()}, {"trend_warnings", trend}};
      if (rec.raw_endpoints) {
        const MatrixXd cov = endpoint_covariance(rec, fm);
        entry["endpoint_diagonal_dominance"] = diagonal_dominance(cov);
      }
      // Diffusive directions: measured variance against the linear growth law.
      std::vector<double> y, yhat;
      for (Index k = 0; k < n_sel; ++k) {
        if (reg_sel[static_cast<std::size_t>(k)] != Regime::Diffusive) continue;
        const Index i = sel[static_cast<std::size_t>(k)];
        const double slope = rep.directions[static_cast<std::size_t>(i)].diffusion_coeff;
        const VarianceSeries& vs = series[static_cast<std::size_t>(k)];
        for (std::size_t s = 0; s < vs.steps.size(); ++s) {
          if (!std::isfinite(vs.variance[s])) continue;
          y.push_back(vs.variance[s]);
          yhat.push_back(slope * static_cast<double>(vs.steps[s]) + var0);
        }
      }
      if (y.size() >= 2) {
        entry["diffusive_linear_r_squared"] =
            number_or_null(r_squared(Eigen::Map<VectorXd>(y.data(), static_cast<Index>(y.size())),
                                     Eigen::Map<VectorXd>(yhat.data(), static_cast<Index>(yhat.size()))));
      }
      per[name] = entry;
    }
    run["steppers"] = per;
    runs.push_back(run);
    ctx.say(eta_tag(eta) + "  confined " + std::to_string(rep.count(Regime::Confined)) +
            ", diffusive " + std::to_string(rep.count(Regime::Diffusive)) + ", divergent " +
            std::to_string(rep.count(Regime::Divergent)));
  }
  ctx.summary["dimension"] = dim;
  ctx.summary["directions_analyzed"] = n_sel;
  ctx.summary["gamma_diagonal_dominance"] = diagonal_dominance(fm.gamma);
  ctx.summary["runs"] = runs;

  // Noise-curvature constant, two ways.
  json gamma = json::object();
  gamma["nominal"] = number_or_null(gamma_nominal);
  std::optional<GammaEstimate> sat;
  if (discrete_plateaus.count(fit_eta) != 0) {
    const VectorXd& pl = discrete_plateaus[fit_eta];
    const auto& reg = regimes_by_eta[fit_eta];
    std::vector<Index> keep;
    for (Index k = 0; k < n_sel; ++k)
      if (reg[static_cast<std::size_t>(k)] == Regime::Confined && std::isfinite(pl(k)) && lam_sel(k) > 0.0)
        keep.push_back(k);
    if (!keep.empty()) {
      VectorXd p(static_cast<Index>(keep.size())), l(p.size()), h(p.size());
      for (std::size_t q = 0; q < keep.size(); ++q) {
        p(static_cast<Index>(q)) = pl(keep[q]);
        l(static_cast<Index>(q)) = lam_sel(keep[q]);
        h(static_cast<Index>(q)) = eh2_sel(keep[q]);
      }
      sat = estimate_gamma_saturation(p, fit_eta, l, h);
      gamma["saturation"] = {{"gamma_hat", sat->gamma_hat},
                             {"cv", sat->cv},
                             {"eta", fit_eta},
                             {"n_directions", sat->n_directions},
                             {"warnings", sat->warnings}};
    }
  }
  {
    VectorXd d_meas = noise_samples > 0 ? measure_gradient_noise(land, fm, noise_samples, ctx.seed)
                                        : fm.grad_noise;
    ctx.dir.stage_done("gradient noise");
    std::vector<Index> keep;
    for (Index k = 0; k < n_sel; ++k)
      if (lam_sel(k) > 0.0) keep.push_back(k);
    if (!keep.empty()) {
      VectorXd dv(static_cast<Index>(keep.size())), l(dv.size());
      for (std::size_t q = 0; q < keep.size(); ++q) {
        dv(static_cast<Index>(q)) = d_meas(sel[static_cast<std::size_t>(keep[q])]);
        l(static_cast<Index>(q)) = lam_sel(keep[q]);
      }
      const GammaEstimate wls = estimate_gamma_wls(dv, l);
      gamma["wls"] = {{"gamma_hat", wls.gamma_hat},
                      {"cv", wls.cv},
                      {"n_directions", wls.n_directions},
                      {"measured_samples", noise_samples},
                      {"warnings", wls.warnings}};
    }
  }
  ctx.summary["gamma"] = gamma;

  // Plateau height against the half-gamma-eta law with gamma fixed at fit_eta.
  if (sat && discrete_plateaus.size() > 1) {
    std::vector<double> y, yhat;
    json table = json::array();
    for (const auto& [eta, pl] : discrete_plateaus) {
      const auto& reg = regimes_by_eta[eta];
      double sum = 0.0;
      std::int64_t cnt = 0;
      for (Index k = 0; k < n_sel; ++k) {
        if (reg[static_cast<std::size_t>(k)] != Regime::Confined || !std::isfinite(pl(k))) continue;
        y.push_back(pl(k));
        yhat.push_back(0.5 * sat->gamma_hat * eta);
        sum += pl(k);
        ++cnt;
      }
      table.push_back({{"eta", eta},
                       {"mean_plateau", cnt > 0 ? json(sum / static_cast<double>(cnt)) : json(nullptr)},
                       {"half_gamma_eta", 0.5 * sat->gamma_hat * eta},
                       {"directions", cnt}});
    }
    double r2 = kNaN;
    if (y.size() >= 2)
      r2 = r_squared(Eigen::Map<VectorXd>(y.data(), static_cast<Index>(y.size())),
                     Eigen::Map<VectorXd>(yhat.data(), static_cast<Index>(yhat.size())));
    ctx.summary["eta_scaling"] = {{"gamma_hat", sat->gamma_hat},
                                  {"fit_eta", fit_eta},
                                  {"r_squared", number_or_null(r2)},
                                  {"points", static_cast<std::int64_t>(y.size())},
                                  {"table", table}};
    ctx.say("plateau vs eta: R^2 = " + short_number(r2) + " with gamma_hat " +
            short_number(sat->gamma_hat));
  }
}

// ---------------------------------------------------------------------------
// density

void cmd_density(Context& ctx, ConfigReader& r) {
  const ScalarToySpec toy = parse_toy(r.child("toy"));
  const double eta = r.number("eta");
  if (!(eta >= 0.0)) r.fail("eta", "must be >= 0");
  const std::int64_t n_steps = r.integer("n_steps");
  const std::int64_t every = r.integer("record_every", std::max<std::int64_t>(1, n_steps / 10));
  if (n_steps < 1 || every < 1) r.fail("n_steps", "n_steps and record_every must be positive");
  ConfigReader init = r.child("initial");
  const double mean0 = init.number("mean", 0.0);
  const double var0 = init.number("variance");
  if (!(var0 > 0.0)) init.fail("variance", "must be > 0");
  std::vector<int> orders{2, 4};
  if (r.has("orders")) {
    orders.clear();
    for (double o : r.numbers("orders")) {
      if (o != std::floor(o) || o < 2 || o > 6) r.fail("orders", "orders must be integers in 2..6");
      orders.push_back(static_cast<int>(o));
    }
  } else {
    r.number("orders", 0.0);
  }
  const double max_drift = r.number("max_mass_drift", 1e-6);
  const std::string on_fail = r.string("on_km_failure", "error");
  if (on_fail != "error" && on_fail != "record") r.fail("on_km_failure", "expected \"error\" or \"record\"");
  double lo = 0.0, hi = 0.0;
  Index nodes = -1;
  double fp_dt = 0.0;
  bool have_bounds = false;
  if (r.has("grid")) {
    ConfigReader g = r.child("grid");
    if (g.has("nodes")) nodes = g.integer("nodes");
    if (g.has("theta_min") || g.has("theta_max")) {
      lo = g.number("theta_min");
      hi = g.number("theta_max");
      have_bounds = true;
    }
    g.number("theta_min", 0.0);
    g.number("theta_max", 0.0);
  } else {
    r.number("grid", 0.0);
  }
  std::int64_t mc_n = 20000;
  if (r.has("monte_carlo")) {
    ConfigReader m = r.child("monte_carlo");
    mc_n = m.integer("n_trajectories", mc_n);
  } else {
    r.number("monte_carlo", 0.0);
  }
  if (r.has("fp")) {
    ConfigReader f = r.child("fp");
    fp_dt = f.number("dt_max", 0.0);
  } else {
    r.number("fp", 0.0);
  }
  r.finish();

  if (!have_bounds) std::tie(lo, hi) = default_domain(toy, eta, mean0, var0, n_steps);
  if (nodes < 0) nodes = std::min<Index>(401, km_stable_nodes(toy, eta, lo, hi));
  const DensityGrid start = DensityGrid::gaussian(lo, hi, nodes, mean0, var0);

  // Monte Carlo reference from the discrete SGD stepper itself.
  EnsembleConfig mc;
  mc.n_trajectories = mc_n;
  mc.n_steps = n_steps;
  mc.record_stride = every;
  mc.learning_rate = eta;
  mc.initial_point = VectorXd::Constant(1, toy.center + mean0);
  mc.initial_std = std::sqrt(var0);
  mc.master_seed = ctx.seed;
  mc.threads = ctx.opts.threads;
  const EnsembleRecord rec = run_ensemble(Landscape(toy), StepperKind::DiscreteSGD, mc);
  ctx.dir.stage_done("monte carlo");

  struct Method {
    std::string name;
    int order = 0;  // 0: Fokker-Planck
    DensityGrid grid;
    bool failed = false;
    std::string failure;
    std::int64_t failed_step = -1;
    double max_drift = 0.0;
  };
  std::vector<Method> methods;
  auto add_method = [&](std::string name, int order) {
    Method m;
    m.name = std::move(name);
    m.order = order;
    m.grid = start;
    methods.push_back(std::move(m));
  };
  for (int o : orders) add_method("km_order_" + std::to_string(o), o);
  add_method("fokker_planck", 0);

  std::vector<std::string> header{"step", "theta"};
  for (const auto& m : methods) header.push_back(m.name);
  header.push_back("monte_carlo");
  CsvWriter dens(ctx.dir.file("density.csv"), header);
  std::vector<std::string> mom_header{"step", "k"};
  for (const auto& m : methods) mom_header.push_back(m.name);
  mom_header.push_back("monte_carlo");
  CsvWriter mom(ctx.dir.file("moments.csv"), mom_header);  // raw moments E[theta^k]
  CsvWriter gap(ctx.dir.file("moment_gap.csv"),
                {"step", "method", "mean_minus_mc", "variance_minus_mc", "ks_vs_mc"});

  auto moments_of = [](const DensityGrid& g) {
    const VectorXd m = density_moments(g, 2);
    const double mean = m(1) / m(0);
    return std::array<double, 3>{m(0), mean, m(2) / m(0) - mean * mean};
  };

  std::int64_t step = 0;
  for (Index rr = 0; rr < rec.n_recorded(); ++rr) {
    const std::int64_t target = rec.steps[static_cast<std::size_t>(rr)];
    for (auto& m : methods) {
      if (m.failed) continue;
      try {
        if (m.order == 0) {
          m.grid = evolve_fp(m.grid, toy, eta, target - step, fp_dt);
        } else {
          KmOptions ko;
          ko.order = m.order;
          ko.max_mass_drift = max_drift;
          for (std::int64_t s = step; s < target; ++s) {
            KmDiagnostics diag;
            m.grid = km_step(m.grid, toy, eta, ko, &diag);
            m.max_drift = std::max(m.max_drift, std::abs(diag.mass_after - diag.mass_before));
          }
        }
      } catch (const NumericalError& e) {
        if (on_fail == "error") throw;
        m.failed = true;
        m.failure = e.what();
        m.failed_step = target;
      }
    }
    step = target;

    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(rec.n_trajectories));
    for (Index j = 0; j < rec.n_trajectories; ++j) {
      const double v = rec.at(j, rr, 0);
      if (std::isfinite(v)) samples.push_back(v);
    }
    const VectorXd hist = histogram_density(start, samples);
    for (Index i = 0; i < start.size(); ++i) {
      dens << target << start.theta(i);
      for (const auto& m : methods) dens << (m.failed ? kNaN : m.grid.values(i));
      dens << hist(i);
      dens.end_row();
    }
    double mc_mean = 0.0, mc_var = kNaN;
    if (!samples.empty()) {
      const VectorXd sv = Eigen::Map<const VectorXd>(samples.data(), static_cast<Index>(samples.size()));
      mc_mean = sv.mean();
      mc_var = sample_variance(sv);
    }
    constexpr int kMaxMoment = 4;
    std::vector<VectorXd> raw;
    for (const auto& m : methods)
      raw.push_back(m.failed ? VectorXd::Constant(kMaxMoment + 1, kNaN)
                             : density_moments(m.grid, kMaxMoment));
    for (int k = 0; k <= kMaxMoment; ++k) {
      mom << target << std::int64_t{k};
      for (const auto& v : raw) mom << v(k);
      double acc = 0.0;
      for (double x : samples) acc += std::pow(x, k);
      mom << (samples.empty() ? kNaN : acc / static_cast<double>(samples.size()));
      mom.end_row();
    }
    for (const auto& m : methods) {
      const auto mm = m.failed ? std::array<double, 3>{kNaN, kNaN, kNaN} : moments_of(m.grid);
      const double ks = (m.failed || samples.empty()) ? kNaN : ks_distance(m.grid, samples);
      gap << target << m.name << mm[1] - mc_mean << mm[2] - mc_var << ks;
      gap.end_row();
    }
  }
  ctx.dir.stage_done("densities");

  // One-step second-moment gap between the order-2 truncation and the
  // small-step Langevin equation.
  KmOptions k2;
  k2.order = 2;
  k2.max_mass_drift = std::numeric_limits<double>::infinity();
  KmOptions kl = k2;
  kl.langevin_second_moment = true;
  const double m_km = density_moments(km_step(start, toy, eta, k2), 2)(2);
  const double m_lv = density_moments(km_step(start, toy, eta, kl), 2)(2);
  const double analytic = eta * eta * toy.lambda * toy.lambda * density_moments(start, 2)(2);

  json per = json::object();
  for (const auto& m : methods) {
    json e = {{"failed", m.failed}};
    if (m.failed) {
      e["failure_step"] = m.failed_step;
      e["failure"] = m.failure;
    } else {
      const auto mm = moments_of(m.grid);
      e["final_mass"] = mm[0];
      e["final_mean"] = mm[1];
      e["final_variance"] = mm[2];
    }
    if (m.order > 0) e["max_step_mass_drift"] = m.max_drift;
    per[m.name] = e;
  }
  ctx.summary["grid"] = {{"theta_min", lo}, {"theta_max", hi}, {"nodes", nodes}, {"dx", start.dx()}};
  ctx.summary["methods"] = per;
  ctx.summary["monte_carlo"] = {{"n_trajectories", mc_n}, {"n_divergent", rec.n_divergent()}};
  ctx.summary["one_step_second_moment_gap"] = {
      {"measured", m_km - m_lv},
      {"analytic", analytic},
      {"relative_error", analytic != 0.0 ? std::abs((m_km - m_lv) - analytic) / std::abs(analytic)
                                         : std::abs(m_km - m_lv)}};
  for (const auto& m : methods)
    if (m.failed) ctx.say(m.name + " failed at step " + std::to_string(m.failed_step) + ": " + m.failure);
}

// ---------------------------------------------------------------------------
// lanczos-check

MatrixXd random_spd(Index dim, std::uint64_t seed) {
  Engine eng(seed);
  MatrixXd b(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i) b(i, j) = standard_normal(eng);
  MatrixXd a = b * b.transpose() / static_cast<double>(dim);
  a.diagonal().array() += 1e-3;
  return 0.5 * (a + a.transpose());
}

LanczosOptions parse_lanczos(ConfigReader& r, Index dim, std::uint64_t seed) {
  LanczosOptions o;
  o.k = static_cast<int>(r.integer("k", 20));
  o.max_iters = static_cast<int>(r.integer("max_iters", std::min<Index>(200, dim)));
  o.reorth_every = static_cast<int>(r.integer("reorth_every", o.reorth_every));
  o.max_restarts = static_cast<int>(r.integer("max_restarts", o.max_restarts));
  o.seed = derive_seed(seed, stream::kLanczos);
  return o;
}

void cmd_lanczos(Context& ctx, ConfigReader& r) {
  const Index dim = r.integer("dim", 128);
  if (dim < 2) r.fail("dim", "must be >= 2");
  LanczosOptions lo = parse_lanczos(r, dim, ctx.seed);
  std::optional<Landscape> stoch;
  std::int64_t batches = 0;
  if (r.has("stochastic")) {
    ConfigReader s = r.child("stochastic");
    stoch = parse_landscape(s.child("landscape"), ctx.seed);
    batches = s.integer("batches");
    if (batches < 1) s.fail("batches", "must be >= 1");
    if (!std::holds_alternative<QuadraticEnsembleSpec>(*stoch))
      s.fail("landscape", "the stochastic check needs a quadratic ensemble");
  } else {
    r.number("stochastic", 0.0);
  }
  r.finish();

  CsvWriter ritz(ctx.dir.file("ritz.csv"),
                 {"case", "index", "lanczos", "reference", "abs_error", "residual", "sampling_se",
                  "z_score"});

  const MatrixXd a = random_spd(dim, derive_seed(ctx.seed, stream::kLandscape, 7));
  const auto dense = dense_symmetric_eig(a);
  LanczosDiagnostics diag;
  const auto lz = lanczos_topk(make_dense_oracle(a), lo, &diag);
  ctx.dir.file("dense_spd_lanczos.csv");
  ctx.dir.file("dense_spd_lanczos_vectors.txt");
  io::write_spectral(ctx.dir.root(), "dense_spd_lanczos", lz.eigenvalues, lz.residuals,
                     lz.eigenvectors);
  ctx.dir.stage_done("dense operator");
  double max_err = 0.0;
  for (Index i = 0; i < lz.eigenvalues.size(); ++i) {
    const double err = std::abs(lz.eigenvalues(i) - dense.eigenvalues(i));
    max_err = std::max(max_err, err);
    ritz << "dense_spd" << static_cast<std::int64_t>(i) << lz.eigenvalues(i) << dense.eigenvalues(i)
         << err << lz.residuals(i) << kNaN << kNaN;
    ritz.end_row();
  }
  ctx.summary["dense_spd"] = {{"dim", dim},
                              {"k", lo.k},
                              {"max_abs_error", max_err},
                              {"iterations", lz.iterations_used},
                              {"restarts", lz.restarts},
                              {"max_orthogonality_defect", diag.max_orthogonality_defect}};
  ctx.say("dense SPD: max |ritz - eig| = " + short_number(max_err));

  if (stoch) {
    const auto& spec = std::get<QuadraticEnsembleSpec>(*stoch);
    const FluctuationMoments fm = fluctuation_moments(*stoch);
    // Every product draws `batches` fresh minibatch Hessians.
    const HvpOracle oracle = make_minibatch_hessian_oracle(
        *stoch, static_cast<int>(batches), derive_seed(ctx.seed, stream::kMeasurement, 2));
    LanczosOptions so = lo;
    so.k = static_cast<int>(std::min<Index>(lo.k, spec.dim));
    so.max_iters = static_cast<int>(std::min<Index>(lo.max_iters, spec.dim));
    const auto sz = lanczos_topk(oracle, so);
    const auto order = top_directions(fm.lambda, 0);
    double max_z = 0.0;
    for (Index i = 0; i < sz.eigenvalues.size(); ++i) {
      const Index t = order[static_cast<std::size_t>(i)];
      const double se = std::sqrt(fm.gamma(t, t) / static_cast<double>(batches));
      const double err = std::abs(sz.eigenvalues(i) - fm.lambda(t));
      const double z = se > 0.0 ? err / se : (err == 0.0 ? 0.0 : kNaN);
      max_z = std::max(max_z, std::isnan(z) ? std::numeric_limits<double>::infinity() : z);
      ritz << "stochastic" << static_cast<std::int64_t>(i) << sz.eigenvalues(i) << fm.lambda(t) << err
           << sz.residuals(i) << se << z;
      ritz.end_row();
    }
    ctx.dir.stage_done("stochastic operator");
    ctx.summary["stochastic"] = {{"dim", spec.dim},
                                 {"batches", batches},
                                 {"k", so.k},
                                 {"max_z_score", max_z}};
    ctx.say("stochastic oracle: max |error| / SE = " + short_number(max_z));
  }
}

// ---------------------------------------------------------------------------
// sampling-compare

struct RatioInterval {
  double ratio = kNaN;
  double lo = kNaN;
  double hi = kNaN;
};

// Ratio of tail-summed variances (without / with), bootstrapping trajectory
// indices jointly for both ensembles.
RatioInterval tail_variance_ratio(const EnsembleRecord& with, const EnsembleRecord& without,
                                  Index first_record, int resamples, std::uint64_t seed) {
  const Index n = with.n_trajectories;
  auto stat = [&](const std::vector<Index>& idx) {
    double num = 0.0, den = 0.0;
    VectorXd a(static_cast<Index>(idx.size())), b(static_cast<Index>(idx.size()));
    for (Index rr = first_record; rr < with.n_recorded(); ++rr)
      for (Index k = 0; k < with.n_directions; ++k) {
        for (std::size_t q = 0; q < idx.size(); ++q) {
          a(static_cast<Index>(q)) = without.at(idx[q], rr, k);
          b(static_cast<Index>(q)) = with.at(idx[q], rr, k);
        }
        num += sample_variance(a);
        den += sample_variance(b);
      }
    return num / den;
  };
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  RatioInterval out;
  out.ratio = stat(idx);
  if (resamples <= 0) return out;
  Engine eng(derive_seed(seed, stream::kBootstrap, 1));
  std::vector<double> reps;
  reps.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    for (auto& i : idx) i = static_cast<Index>(uniform_index(eng, static_cast<std::uint64_t>(n)));
    reps.push_back(stat(idx));
  }
  std::sort(reps.begin(), reps.end());
  auto pct = [&](double p) {
    const double pos = p / 100.0 * static_cast<double>(reps.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    return i + 1 < reps.size() ? reps[i] * (1.0 - f) + reps[i + 1] * f : reps[i];
  };
  out.lo = pct(2.5);
  out.hi = pct(97.5);
  return out;
}

void cmd_sampling_compare(Context& ctx, ConfigReader& r) {
  const Landscape land = parse_landscape(r.child("landscape"), ctx.seed);
  const Index dim = dimension(land);
  const double eta = r.number("eta");
  const std::int64_t lag = r.integer("autocorrelation_lag", 1);
  const int resamples = static_cast<int>(r.integer("bootstrap_resamples", 400));
  const double tail = r.number("tail_fraction", 0.5);
  if (!(tail > 0.0 && tail <= 1.0)) r.fail("tail_fraction", "must be in (0, 1]");
  EnsembleConfig base = parse_ensemble(r.child("ensemble"), dim, ctx.seed, ctx.opts.threads);
  r.finish();
  if (base.sampling.pool_size < 1)
    throw ConfigError("config key 'ensemble.sampling.pool_size': the comparison needs a finite pool");
  base.learning_rate = eta;

  EnsembleConfig cw = base, co = base;
  cw.sampling = SamplingMode::with_replacement(base.sampling.pool_size);
  co.sampling = SamplingMode::without_replacement(base.sampling.pool_size);
  const EnsembleRecord with = run_ensemble(land, StepperKind::DiscreteSGD, cw);
  ctx.dir.stage_done("with replacement");
  const EnsembleRecord without = run_ensemble(land, StepperKind::DiscreteSGD, co);
  ctx.dir.stage_done("without replacement");

  const auto vw = empirical_variance(with);
  const auto vo = empirical_variance(without);
  CsvWriter var(ctx.dir.file("variance.csv"),
                {"step", "direction", "variance_with", "variance_without", "ratio"});
  CsvWriter path(ctx.dir.file("mean_path.csv"), {"step", "mean_distance"});
  for (Index rr = 0; rr < with.n_recorded(); ++rr) {
    double dist2 = 0.0;
    for (Index k = 0; k < with.n_directions; ++k) {
      const double a = vw[static_cast<std::size_t>(k)].variance[static_cast<std::size_t>(rr)];
      const double b = vo[static_cast<std::size_t>(k)].variance[static_cast<std::size_t>(rr)];
      var << with.steps[static_cast<std::size_t>(rr)] << static_cast<std::int64_t>(k) << a << b
          << b / a;
      var.end_row();
      const double dm = with.cross_section(rr, k).mean() - without.cross_section(rr, k).mean();
      dist2 += dm * dm;
    }
    path << with.steps[static_cast<std::size_t>(rr)] << std::sqrt(dist2);
    path.end_row();
  }

  const auto first = static_cast<Index>(
      std::floor((1.0 - tail) * static_cast<double>(with.n_recorded() - 1)));
  const Index lag_records = std::max<Index>(1, lag / base.record_stride);
  CsvWriter acf(ctx.dir.file("autocorrelation.csv"),
                {"direction", "lag_steps", "autocorrelation_with", "autocorrelation_without"});
  VectorXd aw, ao;
  if (lag_records < with.n_recorded() - first) {
    aw = lag_autocorrelation(with, lag_records, first);
    ao = lag_autocorrelation(without, lag_records, first);
    for (Index k = 0; k < with.n_directions; ++k) {
      acf << static_cast<std::int64_t>(k) << lag_records * base.record_stride << aw(k) << ao(k);
      acf.end_row();
    }
  }
  const RatioInterval ri = tail_variance_ratio(with, without, first, resamples, ctx.seed);
  ctx.dir.stage_done("statistics");

  ctx.summary["pool_size"] = base.sampling.pool_size;
  ctx.summary["tail_first_step"] = with.steps[static_cast<std::size_t>(first)];
  ctx.summary["tail_variance_ratio"] = {{"ratio", number_or_null(ri.ratio)},
                                        {"ci95_lo", number_or_null(ri.lo)},
                                        {"ci95_hi", number_or_null(ri.hi)},
                                        {"resamples", resamples}};
  ctx.summary["without_not_larger_at_95"] = std::isfinite(ri.hi) && ri.hi <= 1.0;
  if (aw.size() > 0)
    ctx.summary["lag_autocorrelation"] = {{"lag_steps", lag_records * base.record_stride},
                                          {"with", std::vector<double>(aw.data(), aw.data() + aw.size())},
                                          {"without", std::vector<double>(ao.data(), ao.data() + ao.size())}};
  const std::string line = "variance ratio without/with = " + short_number(ri.ratio) +
                           " (95% CI " + short_number(ri.lo) + " .. " + short_number(ri.hi) + ")";
  ctx.verdicts.push_back(line);
  ctx.say(line);
}

// ---------------------------------------------------------------------------

const char* kPlotScript = R"(#!/usr/bin/env python3
# Plots every variance series in this run directory. Needs matplotlib.
import csv, collections, os, sys
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
path = os.path.join(here, "variance.csv")
if not os.path.exists(path):
    sys.exit("no variance.csv in " + here)
series = collections.defaultdict(lambda: ([], [], []))
with open(path) as f:
    for row in csv.DictReader(f):
        key = tuple(row[k] for k in ("eta", "stepper", "direction") if k in row)
        xs, ys, ts = series[key]
        xs.append(float(row["step"]))
        ys.append(float(row.get("variance", row.get("variance_with", "nan"))))
        ts.append(float(row.get("theory", row.get("variance_without", "nan"))))
fig, ax = plt.subplots(figsize=(7, 4.5))
for i, (key, (xs, ys, ts)) in enumerate(sorted(series.items())[:24]):
    line, = ax.plot(xs, ys, lw=1, label=" ".join(key))
    ax.plot(xs, ts, lw=1, ls="--", color=line.get_color())
ax.set_xlabel("step")
ax.set_ylabel("variance")
ax.set_yscale("log")
ax.legend(fontsize=6, ncol=2)
fig.tight_layout()
fig.savefig(os.path.join(here, "variance.png"), dpi=150)
)";

using Handler = std::function<void(Context&, ConfigReader&)>;

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> h{
      {"toy", cmd_toy},
      {"ensemble", cmd_ensemble},
      {"density", cmd_density},
      {"lanczos-check", cmd_lanczos},
      {"sampling-compare", cmd_sampling_compare},
  };
  return h;
}

}  // namespace

RunResult run_command(const RunOptions& opts) {
  const auto& h = handlers();
  const auto it = h.find(opts.command);
  if (it == h.end()) throw ConfigError("unknown command '" + opts.command + "'");
  if (!opts.config.is_object()) throw ConfigError("config: top level must be a JSON object");

  json config = opts.config;
  if (config.contains("command") && config["command"] != opts.command)
    throw ConfigError("config is for command '" + config["command"].dump() + "', not '" +
                      opts.command + "'");
  config["command"] = opts.command;
  if (opts.seed) config["seed"] = *opts.seed;

  ConfigReader r(config);
  r.string("command");
  r.string("description", "");
  const std::uint64_t seed = r.seed("seed", 0);
  config["seed"] = seed;

  fs::path out_dir = opts.out_dir;
  if (out_dir.empty()) out_dir = fs::path("runs") / (opts.command + "-seed" + std::to_string(seed));

  RunDir dir(out_dir);
  io::write_json(dir.file("config.json"), config);
  Context ctx{dir, opts, seed, json::object(), {}};
  it->second(ctx, r);

  json head = {{"command", opts.command}, {"seed", seed}, {"tool_version", kToolVersion}};
  head.update(ctx.summary);
  ctx.summary = std::move(head);
  ctx.summary["verdicts"] = ctx.verdicts;
  io::write_json(dir.file("summary.json"), ctx.summary);
  if (opts.emit_plot_script) {
    std::ofstream(dir.file("plot.py"), std::ios::binary) << kPlotScript;
  }
  json extra = {{"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                      std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                      std::to_string(EIGEN_MINOR_VERSION)}};
  dir.write_manifest(opts.command, config, seed, opts.threads, extra);
  return {out_dir, ctx.summary, ctx.verdicts};
}

}  // namespace sgdfluct::cli
