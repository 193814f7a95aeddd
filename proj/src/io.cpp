#include "sgdfluct/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace sgdfluct::io {

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t limit = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < limit; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::ostringstream os;
    os << path.string() << ":" << line << ":" << col << ": invalid JSON";
    const std::string what = e.what();
    const auto pos = what.find("syntax error");
    if (pos != std::string::npos) os << " (" << what.substr(pos) << ")";
    throw ConfigError(os.str());
  }
}

void apply_override(json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;
  }
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + key + "' has an empty path component");
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + part + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------

ConfigReader::ConfigReader(const json& root)
    : node_(&root), path_(""), ledger_(std::make_shared<Ledger>()), root_(&root) {
  if (!root.is_object()) throw ConfigError("config: top level must be a JSON object");
}

ConfigReader::ConfigReader(const json& node, std::string path, std::shared_ptr<Ledger> ledger,
                           const json* root)
    : node_(&node), path_(std::move(path)), ledger_(std::move(ledger)), root_(root) {}

std::string ConfigReader::path_of(const std::string& key) const {
  return path_.empty() ? key : path_ + "." + key;
}

void ConfigReader::fail(const std::string& key, const std::string& what) const {
  throw ConfigError("config key '" + path_of(key) + "': " + what);
}

bool ConfigReader::has(const std::string& key) const {
  return node_->contains(key) && !(*node_)[key].is_null();
}

const json& ConfigReader::at(const std::string& key) const {
  if (!node_->contains(key)) fail(key, "required key is missing");
  return (*node_)[key];
}

const json& ConfigReader::raw(const std::string& key) {
  const json& v = at(key);
  ledger_->consumed.insert(path_of(key));
  return v;
}

ConfigReader ConfigReader::child(const std::string& key) {
  const json& v = at(key);
  if (!v.is_object()) fail(key, "expected an object");
  ledger_->visited.insert(path_of(key));
  return ConfigReader(v, path_of(key), ledger_, root_);
}

double ConfigReader::number(const std::string& key) {
  const json& v = raw(key);
  if (!v.is_number()) fail(key, "expected a number");
  return v.get<double>();
}

double ConfigReader::number(const std::string& key, double fallback) {
  return has(key) ? number(key) : (touch_default(key), fallback);
}

std::int64_t ConfigReader::integer(const std::string& key) {
  const json& v = raw(key);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9.0e15) return static_cast<std::int64_t>(d);
  }
  fail(key, "expected an integer");
}

std::int64_t ConfigReader::integer(const std::string& key, std::int64_t fallback) {
  return has(key) ? integer(key) : (touch_default(key), fallback);
}

std::uint64_t ConfigReader::seed(const std::string& key, std::uint64_t fallback) {
  if (!has(key)) {
    touch_default(key);
    return fallback;
  }
  const json& v = raw(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  fail(key, "expected a non-negative integer seed");
}

bool ConfigReader::boolean(const std::string& key, bool fallback) {
  if (!has(key)) {
    touch_default(key);
    return fallback;
  }
  const json& v = raw(key);
  if (!v.is_boolean()) fail(key, "expected true or false");
  return v.get<bool>();
}

std::string ConfigReader::string(const std::string& key) {
  const json& v = raw(key);
  if (!v.is_string()) fail(key, "expected a string");
  return v.get<std::string>();
}

std::string ConfigReader::string(const std::string& key, const std::string& fallback) {
  return has(key) ? string(key) : (touch_default(key), fallback);
}

std::vector<double> ConfigReader::numbers(const std::string& key) {
  const json& v = raw(key);
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) fail(key, "expected a number or an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) fail(key, "array entries must be numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

VectorXd ConfigReader::vector(const std::string& key) {
  const auto v = numbers(key);
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

MatrixXd ConfigReader::matrix(const std::string& key) {
  const json& v = raw(key);
  if (!v.is_array() || v.empty()) fail(key, "expected an array of rows");
  const auto rows = static_cast<Index>(v.size());
  Index cols = -1;
  MatrixXd m;
  for (Index r = 0; r < rows; ++r) {
    const json& row = v[static_cast<std::size_t>(r)];
    if (!row.is_array()) fail(key, "expected an array of rows");
    if (cols < 0) {
      cols = static_cast<Index>(row.size());
      m.resize(rows, cols);
    }
    if (static_cast<Index>(row.size()) != cols) fail(key, "rows have different lengths");
    for (Index c = 0; c < cols; ++c) {
      const json& e = row[static_cast<std::size_t>(c)];
      if (!e.is_number()) fail(key, "matrix entries must be numbers");
      m(r, c) = e.get<double>();
    }
  }
  return m;
}

void ConfigReader::touch_default(const std::string& key) { ledger_->consumed.insert(path_of(key)); }

namespace {

void find_unknown(const json& node, const std::string& path, const std::set<std::string>& visited,
                  const std::set<std::string>& consumed) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string full = path.empty() ? it.key() : path + "." + it.key();
    if (consumed.count(full) != 0) continue;
    if (visited.count(full) != 0) {
      find_unknown(it.value(), full, visited, consumed);
      continue;
    }
    throw ConfigError("unknown config key '" + full + "'");
  }
}

}  // namespace

void ConfigReader::finish() const {
  find_unknown(*root_, "", ledger_->visited, ledger_->consumed);
}

// ---------------------------------------------------------------------------

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary), columns_(header.size()) {
  if (!out_) throw ConfigError("cannot write '" + path.string() + "'");
  for (const auto& h : header) *this << h;
  end_row();
}

void CsvWriter::sep() {
  if (col_ > 0) line_ += ',';
  ++col_;
}

CsvWriter& CsvWriter::operator<<(double v) {
  sep();
  line_ += format_number(v);
  return *this;
}

CsvWriter& CsvWriter::operator<<(std::int64_t v) {
  sep();
  line_ += std::to_string(v);
  return *this;
}

CsvWriter& CsvWriter::operator<<(const std::string& s) {
  sep();
  line_ += s;
  return *this;
}

void CsvWriter::end_row() {
  if (col_ != columns_)
    throw std::logic_error("CsvWriter: row has " + std::to_string(col_) + " fields, expected " +
                           std::to_string(columns_));
  line_ += '\n';
  out_ << line_;
  line_.clear();
  col_ = 0;
}

void CsvWriter::close() { out_.close(); }

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::vector<std::filesystem::path> write_spectral(const std::filesystem::path& dir,
                                                  const std::string& stem, const VectorXd& eigenvalues,
                                                  const VectorXd& residuals, const MatrixXd& eigenvectors) {
  const auto csv_path = dir / (stem + ".csv");
  const auto txt_path = dir / (stem + "_vectors.txt");
  {
    CsvWriter csv(csv_path, {"index", "eigenvalue", "residual"});
    for (Index i = 0; i < eigenvalues.size(); ++i) {
      csv << static_cast<std::int64_t>(i) << eigenvalues(i)
          << (i < residuals.size() ? residuals(i) : std::nan(""));
      csv.end_row();
    }
  }
  std::ofstream txt(txt_path, std::ios::binary);
  if (!txt) throw ConfigError("cannot write '" + txt_path.string() + "'");
  for (Index r = 0; r < eigenvectors.rows(); ++r) {
    std::string line;
    for (Index c = 0; c < eigenvectors.cols(); ++c) {
      if (c > 0) line += ' ';
      line += format_number(eigenvectors(r, c));
    }
    txt << line << '\n';
  }
  return {csv_path, txt_path};
}

}  // namespace sgdfluct::io
