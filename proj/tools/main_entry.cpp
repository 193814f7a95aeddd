#include "cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace sgdfluct::cli {

namespace {

struct CommonArgs {
  std::string config_file;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int threads = 1;
  bool plot = false;
  bool quiet = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  auto* cfg = sub->add_option("--config", a.config_file, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--preset", a.preset, "named preset from the preset directory")->excludes(cfg);
  sub->add_option("--seed", a.seed, "master seed, overrides the config");
  sub->add_option("--out-dir", a.out_dir, "run directory (default runs/<command>-seed<N>)");
  sub->add_option("--threads", a.threads, "worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);
  sub->add_flag("--emit-plot-script", a.plot, "write plot.py next to the data");
  sub->add_flag("-q,--quiet", a.quiet, "no progress lines on stdout");
  sub->add_option("overrides", a.overrides, "key=value config overrides (dotted paths)");
}

json toy_defaults() {
  return json::parse(R"({
    "command": "toy",
    "toy": {"lambda": 1.0, "gamma_fluct": 0.0, "grad_noise": 1.0},
    "eta": [0.1],
    "ensemble": {"n_trajectories": 4000, "n_steps": 2000, "record_stride": 10}
  })");
}

json default_config(const std::string& command) {
  if (command == "toy") return toy_defaults();
  if (command == "ensemble") return load_preset("confined");
  if (command == "density") return load_preset("density-plateau");
  if (command == "lanczos-check") return load_preset("lanczos");
  return load_preset("sampling-compare");
}

}  // namespace

int main_entry(int argc, char** argv) {
  CLI::App app{"Fluctuation experiments for SGD on quadratic and fluctuating landscapes", "sgdfluct"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> commands{
      {"toy", "1D toy model: discrete SGD against both Langevin surrogates"},
      {"ensemble", "d-dimensional quadratic ensemble: variances, regimes, gamma estimates"},
      {"density", "1D density evolution: Kramers-Moyal truncations, Fokker-Planck, Monte Carlo"},
      {"lanczos-check", "Lanczos against dense eigensolvers, exact and stochastic operators"},
      {"sampling-compare", "paired runs with and without replacement from a finite pool"},
  };
  std::map<std::string, CommonArgs> args;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    subs[name] = app.add_subcommand(name, help);
    add_common(subs[name], args[name]);
  }
  std::optional<double> toy_lambda, toy_gamma, toy_d, toy_eta;
  subs["toy"]->add_option("--lambda", toy_lambda, "mean curvature");
  subs["toy"]->add_option("--Gamma", toy_gamma, "curvature variance");
  subs["toy"]->add_option("--d", toy_d, "gradient noise variance");
  subs["toy"]->add_option("--eta", toy_eta, "learning rate");

  std::string rerun_dir, rerun_out;
  int rerun_threads = 1;
  auto* rr = app.add_subcommand("rerun", "re-execute a run directory and compare CSV hashes");
  rr->add_option("run_dir", rerun_dir, "run directory with manifest.json")->required();
  rr->add_option("--out-dir", rerun_out, "where to write the re-run (default <run_dir>-rerun)");
  rr->add_option("--threads", rerun_threads)->check(CLI::PositiveNumber);

  auto* list = app.add_subcommand("presets", "list the available presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (list->parsed()) {
      for (const auto& n : preset_names()) std::cout << n << '\n';
      return 0;
    }
    if (rr->parsed()) {
      const fs::path out = rerun_out.empty() ? fs::path(rerun_dir + "-rerun") : fs::path(rerun_out);
      const RerunReport rep = rerun(rerun_dir, out, rerun_threads);
      if (rep.identical) {
        std::cout << "identical: " << rep.compared << " CSV files match\n";
        return 0;
      }
      for (const auto& m : rep.mismatches) std::cerr << "mismatch: " << m << '\n';
      return 3;
    }
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      const CommonArgs& a = args[name];
      RunOptions opts;
      opts.command = name;
      if (!a.config_file.empty()) opts.config = io::load_json_file(a.config_file);
      else if (!a.preset.empty()) opts.config = load_preset(a.preset);
      else opts.config = default_config(name);
      if (name == "toy") {
        if (toy_lambda) io::apply_override(opts.config, "toy.lambda=" + io::format_number(*toy_lambda));
        if (toy_gamma) io::apply_override(opts.config, "toy.gamma_fluct=" + io::format_number(*toy_gamma));
        if (toy_d) io::apply_override(opts.config, "toy.grad_noise=" + io::format_number(*toy_d));
        if (toy_eta) opts.config["eta"] = json::array({*toy_eta});
      }
      for (const auto& o : a.overrides) io::apply_override(opts.config, o);
      opts.seed = a.seed;
      opts.out_dir = a.out_dir;
      opts.threads = a.threads;
      opts.emit_plot_script = a.plot;
      opts.quiet = a.quiet;
      const RunResult res = run_command(opts);
      if (!opts.quiet) std::cout << "wrote " << res.out_dir.string() << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace sgdfluct::cli
