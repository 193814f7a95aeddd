#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

#ifndef SGDFLUCT_PRESET_DIR
#define SGDFLUCT_PRESET_DIR "presets"
#endif

namespace sgdfluct::cli {

RunDir::RunDir(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw ConfigError("cannot create output directory '" + root_.string() + "': " + ec.message());
  start_ = last_ = std::chrono::steady_clock::now();
}

fs::path RunDir::file(const std::string& rel) {
  const fs::path p = root_ / rel;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  return p;
}

void RunDir::stage_done(const std::string& name) {
  const auto now = std::chrono::steady_clock::now();
  stages_.emplace_back(name, std::chrono::duration<double>(now - last_).count());
  last_ = now;
}

void RunDir::write_manifest(const std::string& command, const json& config, std::uint64_t seed,
                            int threads, const json& meta_extra) {
  const double total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();

  json meta = json::object();
  meta["tool"] = "sgdfluct";
  meta["tool_version"] = kToolVersion;
  meta["command"] = command;
  meta["seed"] = seed;
  meta["threads"] = threads;
  meta["wall_seconds"] = total;
  for (auto it = meta_extra.begin(); it != meta_extra.end(); ++it) meta[it.key()] = it.value();
  io::write_json(file("meta.json"), meta);

  json m = json::object();
  m["tool_version"] = kToolVersion;
  m["command"] = command;
  m["seed"] = seed;
  m["threads"] = threads;
  m["config"] = config;
  json stages = json::array();
  for (const auto& [name, secs] : stages_) stages.push_back({{"stage", name}, {"seconds", secs}});
  m["stages"] = stages;
  json inventory = json::array();
  for (const auto& rel : files_) {
    const fs::path p = root_ / rel;
    inventory.push_back({{"path", rel},
                         {"bytes", static_cast<std::uint64_t>(fs::file_size(p))},
                         {"sha256", io::sha256_file(p)}});
  }
  m["files"] = inventory;
  io::write_json(root_ / "manifest.json", m);
}

void write_projections(const fs::path& path, const EnsembleRecord& rec, Index max_trajectories,
                       const std::vector<std::int64_t>* direction_labels) {
  if (direction_labels && static_cast<Index>(direction_labels->size()) != rec.n_directions)
    throw std::invalid_argument("write_projections: one label per recorded direction");
  io::CsvWriter csv(path, {"step", "trajectory", "direction", "value"});
  const Index n_traj = max_trajectories < 0 ? rec.n_trajectories
                                            : std::min(rec.n_trajectories, max_trajectories);
  for (Index r = 0; r < rec.n_recorded(); ++r) {
    for (Index j = 0; j < n_traj; ++j) {
      for (Index k = 0; k < rec.n_directions; ++k) {
        csv << rec.steps[static_cast<std::size_t>(r)] << static_cast<std::int64_t>(j)
            << (direction_labels ? (*direction_labels)[static_cast<std::size_t>(k)]
                                 : static_cast<std::int64_t>(k))
            << rec.at(j, r, k);
        csv.end_row();
      }
    }
  }
}

std::string short_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  std::string s(buf);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

fs::path preset_dir() {
  if (const char* env = std::getenv("SGDFLUCT_PRESET_DIR"); env != nullptr && *env != '\0')
    return env;
  return SGDFLUCT_PRESET_DIR;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(preset_dir(), ec))
    if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

json load_preset(const std::string& name) {
  const fs::path p = preset_dir() / (name + ".json");
  if (!fs::exists(p)) {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (available: " + known + ")");
  }
  return io::load_json_file(p);
}

RerunReport rerun(const fs::path& run_dir, const fs::path& out_dir, int threads, bool quiet) {
  const json manifest = io::load_json_file(run_dir / "manifest.json");
  for (const char* key : {"command", "config", "seed", "files"})
    if (!manifest.contains(key))
      throw ConfigError("manifest '" + (run_dir / "manifest.json").string() + "' lacks '" + key + "'");

  RunOptions opts;
  opts.command = manifest["command"].get<std::string>();
  opts.config = manifest["config"];
  opts.seed = manifest["seed"].get<std::uint64_t>();
  opts.out_dir = out_dir;
  opts.threads = threads;
  opts.quiet = quiet;
  run_command(opts);

  RerunReport rep;
  for (const auto& f : manifest["files"]) {
    const std::string rel = f["path"].get<std::string>();
    if (fs::path(rel).extension() != ".csv") continue;
    ++rep.compared;
    const fs::path fresh = out_dir / rel;
    if (!fs::exists(fresh)) {
      rep.identical = false;
      rep.mismatches.push_back(rel + " (missing)");
      continue;
    }
    if (io::sha256_file(fresh) != f["sha256"].get<std::string>()) {
      rep.identical = false;
      rep.mismatches.push_back(rel);
    }
  }
  return rep;
}

}  // namespace sgdfluct::cli
