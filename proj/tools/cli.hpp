#pragma once

// Experiment commands behind the sgdfluct executable. Kept in a library so
// the acceptance suite can drive them without spawning processes.

#include "sgdfluct/dynamics.hpp"
#include "sgdfluct/io.hpp"
#include "sgdfluct/landscape.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sgdfluct::cli {

namespace fs = std::filesystem;
using io::json;

inline constexpr const char* kToolVersion = "0.1.0";

struct RunOptions {
  std::string command;
  json config = json::object();
  /// Overrides the config's seed when set.
  std::optional<std::uint64_t> seed;
  fs::path out_dir;
  int threads = 1;
  bool emit_plot_script = false;
  bool quiet = false;
};

struct RunResult {
  fs::path out_dir;
  json summary;
  std::vector<std::string> verdicts;
};

/// Resolves the seed into the config, runs the command, writes the run
/// directory (config.json, CSVs, summary.json, meta.json, manifest.json).
RunResult run_command(const RunOptions& opts);

/// presets/<name>.json from the preset directory (SGDFLUCT_PRESET_DIR env var
/// first, then the build-time default).
json load_preset(const std::string& name);
fs::path preset_dir();
std::vector<std::string> preset_names();

struct RerunReport {
  bool identical = true;
  std::vector<std::string> mismatches;
  std::size_t compared = 0;
};

/// Re-executes a run from its manifest into out_dir and compares the content
/// hashes of every CSV listed in the original manifest.
RerunReport rerun(const fs::path& run_dir, const fs::path& out_dir, int threads, bool quiet = true);

/// Full command-line entry point; returns the process exit code.
int main_entry(int argc, char** argv);

// ---------------------------------------------------------------------------
// Config parsing shared by the commands.

ScalarToySpec parse_toy(io::ConfigReader r);
Landscape parse_landscape(io::ConfigReader r, std::uint64_t seed);
EnsembleConfig parse_ensemble(io::ConfigReader r, Index dim, std::uint64_t seed, int threads);
/// Number list, or entries of the form {"linspace": [lo, hi, count]} /
/// {"logspace": [lo, hi, count]} concatenated in order.
std::vector<double> expand_sequence(const json& spec, const std::string& path);

// ---------------------------------------------------------------------------
// Run directory bookkeeping.

class RunDir {
 public:
  explicit RunDir(fs::path root);
  const fs::path& root() const { return root_; }
  fs::path file(const std::string& rel);  // registers the output and creates parents
  void stage_done(const std::string& name);
  void write_manifest(const std::string& command, const json& config, std::uint64_t seed,
                      int threads, const json& meta_extra);
  const std::vector<std::string>& files() const { return files_; }

 private:
  fs::path root_;
  std::vector<std::string> files_;
  std::vector<std::pair<std::string, double>> stages_;
  std::chrono::steady_clock::time_point start_, last_;
};

/// Long format, rows ordered by step, trajectory, direction. Only the first
/// max_trajectories trajectories are written when max_trajectories >= 0.
/// `direction` is the recorded column index unless labels are given.
void write_projections(const fs::path& path, const EnsembleRecord& rec,
                       Index max_trajectories = -1,
                       const std::vector<std::int64_t>* direction_labels = nullptr);

/// "2.0", "0.05263": four significant digits with a decimal point kept.
std::string short_number(double v);

}  // namespace sgdfluct::cli
