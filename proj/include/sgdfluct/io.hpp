#pragma once

// Config reading with unknown-key rejection, CSV output, hashing and run
// manifests.

#include "sgdfluct/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace sgdfluct::io {

using json = nlohmann::ordered_json;

/// Parses a JSON config file; syntax errors report line and column.
json load_json_file(const std::filesystem::path& path);

/// Applies a dotted-path override "a.b.c=value". The value is parsed as JSON
/// when possible and kept as a string otherwise. Intermediate objects are
/// created as needed.
void apply_override(json& config, std::string_view assignment);

/// Read access to a JSON object that remembers which keys were consumed, so
/// that leftover (unknown) keys can be reported with their full path. Child
/// readers share the bookkeeping of the root.
class ConfigReader {
 public:
  explicit ConfigReader(const json& root);

  bool has(const std::string& key) const;
  /// Required value; the whole subtree counts as consumed.
  const json& raw(const std::string& key);
  /// Nested object whose keys are checked individually.
  ConfigReader child(const std::string& key);

  double number(const std::string& key);
  double number(const std::string& key, double fallback);
  std::int64_t integer(const std::string& key);
  std::int64_t integer(const std::string& key, std::int64_t fallback);
  std::uint64_t seed(const std::string& key, std::uint64_t fallback);
  bool boolean(const std::string& key, bool fallback);
  std::string string(const std::string& key);
  std::string string(const std::string& key, const std::string& fallback);
  /// Number or array of numbers.
  std::vector<double> numbers(const std::string& key);
  VectorXd vector(const std::string& key);
  MatrixXd matrix(const std::string& key);

  std::string path_of(const std::string& key) const;
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  /// Throws ConfigError naming the first key of the whole document that was
  /// never consumed.
  void finish() const;

 private:
  struct Ledger {
    std::set<std::string> visited;  // objects entered through child()
    std::set<std::string> consumed;  // leaves and opaque subtrees
  };
  ConfigReader(const json& node, std::string path, std::shared_ptr<Ledger> ledger,
               const json* root);
  const json& at(const std::string& key) const;
  void touch_default(const std::string& key);

  const json* node_;
  std::string path_;
  std::shared_ptr<Ledger> ledger_;
  const json* root_;
};

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite values.
std::string format_number(double v);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  CsvWriter& operator<<(double v);
  CsvWriter& operator<<(std::int64_t v);
  CsvWriter& operator<<(int v) { return *this << static_cast<std::int64_t>(v); }
  CsvWriter& operator<<(const std::string& s);
  CsvWriter& operator<<(const char* s) { return *this << std::string(s); }
  void end_row();
  void close();

 private:
  void sep();
  std::ofstream out_;
  std::size_t columns_;
  std::size_t col_ = 0;
  std::string line_;
};

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const json& j);

/// Eigenpairs as `<stem>.csv` (index, eigenvalue, residual) and the vectors,
/// one column per pair, as whitespace-separated text in `<stem>_vectors.txt`.
/// Returns both paths.
std::vector<std::filesystem::path> write_spectral(const std::filesystem::path& dir,
                                                  const std::string& stem, const VectorXd& eigenvalues,
                                                  const VectorXd& residuals, const MatrixXd& eigenvectors);

}  // namespace sgdfluct::io
