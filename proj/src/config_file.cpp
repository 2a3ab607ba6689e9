#include <crowdsel/config_file.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace crowdsel {

namespace {

struct Entry {
  std::string value;
  int line = 0;
};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

class Parser {
 public:
  Parser(std::string_view text, std::string source) : source_(std::move(source)) {
    std::istringstream in{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      std::string_view view = raw;
      if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
      const std::string content = trim(view);
      if (content.empty()) continue;
      const auto eq = content.find('=');
      if (eq == std::string::npos) fail(line, "expected 'key = value'");
      const std::string key = trim(std::string_view(content).substr(0, eq));
      const std::string value = trim(std::string_view(content).substr(eq + 1));
      if (key.empty()) fail(line, "missing key");
      if (key == "covariance") {
        covariance_rows_.push_back({value, line});
        continue;
      }
      if (!known(key)) fail(line, "unknown key '" + key + "'");
      if (entries_.count(key)) fail(line, "duplicate key '" + key + "'");
      entries_[key] = {value, line};
    }
  }

  [[noreturn]] void fail(int line, const std::string& message) const {
    throw ValidationError(source_ + ":" + std::to_string(line) + ": " + message);
  }
  [[noreturn]] void fail(const std::string& message) const { throw ValidationError(source_ + ": " + message); }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  int line(const std::string& key) const { return entries_.at(key).line; }

  const Entry& require(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) fail("missing required key '" + key + "'");
    return it->second;
  }

  std::string text(const std::string& key) const { return require(key).value; }

  double number(const Entry& e, std::string_view token) const {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
      fail(e.line, "invalid number '" + std::string(token) + "'");
    }
    return v;
  }

  std::vector<double> list(const Entry& e) const {
    std::vector<double> out;
    std::string token;
    auto flush = [&] {
      if (!token.empty()) out.push_back(number(e, token));
      token.clear();
    };
    for (char c : e.value) {
      if (c == ',' || c == ' ' || c == '\t') {
        flush();
      } else {
        token.push_back(c);
      }
    }
    flush();
    if (out.empty()) fail(e.line, "empty list");
    return out;
  }

  Vector vector(const std::string& key) const {
    const auto v = list(require(key));
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  }

  double real(const std::string& key) const {
    const Entry& e = require(key);
    return number(e, e.value);
  }

  std::uint64_t unsigned_integer(const std::string& key) const {
    const Entry& e = require(key);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (ec != std::errc() || ptr != e.value.data() + e.value.size()) {
      fail(e.line, "'" + key + "' must be a non-negative integer");
    }
    return v;
  }

  Index count(const std::string& key, Index min) const {
    const std::uint64_t v = unsigned_integer(key);
    if (v < static_cast<std::uint64_t>(min) || v > static_cast<std::uint64_t>(1) << 40) {
      fail(line(key), "'" + key + "' must be >= " + std::to_string(min));
    }
    return static_cast<Index>(v);
  }

  bool boolean(const std::string& key) const {
    const Entry& e = require(key);
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    fail(e.line, "'" + key + "' must be true or false");
  }

  const std::vector<Entry>& covariance_rows() const { return covariance_rows_; }

  void forbid(const std::string& key, const std::string& why) const {
    if (has(key)) fail(line(key), "'" + key + "' " + why);
  }

 private:
  static bool known(const std::string& key) {
    static const char* const keys[] = {"n",     "seed",         "vote_seed", "mean",          "noise_covariates",
                                       "beta",  "scheme",       "epsilon",   "alpha",         "gamma",
                                       "slope", "first_column", "squared",   "experts",       "features_file",
                                       "labels_file", "labels_from_majority", "keep_experts"};
    for (const char* k : keys) {
      if (key == k) return true;
    }
    return false;
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::vector<Entry> covariance_rows_;
};

}  // namespace

SimulationConfig parse_simulation_config(std::string_view text, const std::string& source,
                                         const std::filesystem::path& base_dir) {
  const Parser p(text, source);
  SimulationConfig c;
  c.seed = p.unsigned_integer("seed");
  if (p.has("vote_seed")) c.vote_seed = p.unsigned_integer("vote_seed");

  if (p.has("features_file")) {
    p.forbid("n", "conflicts with features_file");
    p.forbid("mean", "conflicts with features_file");
    p.forbid("noise_covariates", "conflicts with features_file");
    if (!p.covariance_rows().empty()) p.fail(p.covariance_rows().front().line, "'covariance' conflicts with features_file");
    c.fixed_features = read_feature_csv(base_dir / p.text("features_file"));
    c.n = c.fixed_features->rows();
    if (p.has("labels_file")) {
      c.fixed_labels = read_label_csv(base_dir / p.text("labels_file"));
      if (c.fixed_labels->size() != c.n) {
        p.fail(p.line("labels_file"), "label file has " + std::to_string(c.fixed_labels->size()) +
                                          " rows but the features have " + std::to_string(c.n));
      }
    }
  } else {
    p.forbid("labels_file", "requires features_file");
    c.n = p.count("n", 1);
    c.feature_spec.mean = p.vector("mean");
    const Index m = c.feature_spec.mean.size();
    const auto& rows = p.covariance_rows();
    if (static_cast<Index>(rows.size()) != m) {
      p.fail(rows.empty() ? p.line("mean") : rows.back().line,
             "expected " + std::to_string(m) + " covariance rows, found " + std::to_string(rows.size()));
    }
    c.feature_spec.covariance.resize(m, m);
    for (Index r = 0; r < m; ++r) {
      const Entry& e = rows[static_cast<std::size_t>(r)];
      const auto values = p.list(e);
      if (static_cast<Index>(values.size()) != m) {
        p.fail(e.line, "covariance row has " + std::to_string(values.size()) + " entries, expected " + std::to_string(m));
      }
      for (Index col = 0; col < m; ++col) c.feature_spec.covariance(r, col) = values[static_cast<std::size_t>(col)];
    }
    if (!c.feature_spec.covariance.isApprox(c.feature_spec.covariance.transpose(), 1e-12)) {
      p.fail(rows.front().line, "covariance is not symmetric");
    }
    Eigen::LLT<Matrix> llt(c.feature_spec.covariance);
    if (llt.info() != Eigen::Success) p.fail(rows.front().line, "covariance is not positive definite");
    c.feature_spec.noise_covariates = p.has("noise_covariates") ? p.count("noise_covariates", 0) : 0;
  }
  const Index k = c.fixed_features ? c.fixed_features->cols() : c.feature_spec.total();
  const Index informative = c.fixed_features ? k : c.feature_spec.informative();

  if (c.fixed_labels) {
    p.forbid("beta", "is unused when labels_file is given");
  } else {
    c.beta_true = p.vector("beta");
    if (c.beta_true.size() != informative + 1 && c.beta_true.size() != k + 1) {
      p.fail(p.line("beta"), "beta has length " + std::to_string(c.beta_true.size()) + ", expected " +
                                 std::to_string(informative + 1) +
                                 (informative != k ? " or " + std::to_string(k + 1) : std::string()));
    }
  }

  const std::string scheme = p.text("scheme");
  const int scheme_line = p.line("scheme");
  Index d = 0;
  if (scheme == "constant") {
    const Vector eps = p.vector("epsilon");
    for (Index r = 0; r < eps.size(); ++r) {
      if (!(eps(r) >= 0.0 && eps(r) <= 1.0)) p.fail(p.line("epsilon"), "error probabilities must lie in [0, 1]");
    }
    c.vote_scheme = ConstantError{std::vector<double>(eps.data(), eps.data() + eps.size())};
    d = eps.size();
    for (const char* key : {"alpha", "gamma", "slope", "first_column", "squared"}) p.forbid(key, "is not used by scheme constant");
  } else if (scheme == "model" || scheme == "model_squared") {
    const Vector alpha = p.vector("alpha");
    const Vector gamma = p.vector("gamma");
    if (c.fixed_features ? gamma.size() > k : gamma.size() != informative) {
      p.fail(p.line("gamma"), "gamma has length " + std::to_string(gamma.size()) + ", expected " +
                                  (c.fixed_features ? "at most " + std::to_string(k) : std::to_string(informative)));
    }
    if (scheme == "model") {
      c.vote_scheme = ModelBased{alpha, gamma};
    } else {
      c.vote_scheme = ModelBasedSquared{alpha, gamma};
    }
    d = alpha.size();
    for (const char* key : {"epsilon", "slope", "first_column", "squared"}) p.forbid(key, "is not used by scheme " + scheme);
  } else if (scheme == "independent_covariate") {
    IndependentCovariate s;
    s.alpha = p.vector("alpha");
    s.slope = p.real("slope");
    s.first_column = p.count("first_column", 0);
    s.squared = p.has("squared") && p.boolean("squared");
    if (s.first_column + s.alpha.size() > k) {
      p.fail(p.line("first_column"), "per-expert covariates fall outside the " + std::to_string(k) + " feature columns");
    }
    d = s.alpha.size();
    c.vote_scheme = s;
    for (const char* key : {"epsilon", "gamma"}) p.forbid(key, "is not used by scheme " + scheme);
  } else {
    p.fail(scheme_line, "unknown scheme '" + scheme + "'");
  }

  if (p.has("experts")) {
    const Index declared = p.count("experts", 1);
    if (declared != d) {
      p.fail(p.line("experts"), "experts = " + std::to_string(declared) + " but the scheme defines " +
                                    std::to_string(d) + " experts");
    }
  }
  if (p.has("labels_from_majority")) c.labels_from_majority = p.boolean("labels_from_majority");
  if (p.has("keep_experts")) {
    c.keep_experts = p.count("keep_experts", 1);
    if (*c.keep_experts > d) p.fail(p.line("keep_experts"), "keep_experts exceeds the " + std::to_string(d) + " experts");
  }

  try {
    c.validate();
  } catch (const ValidationError& e) {
    p.fail(e.what());
  }
  return c;
}

SimulationConfig load_simulation_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path.string() + ": cannot open config");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_simulation_config(buffer.str(), path.string(), path.parent_path());
}

}  // namespace crowdsel
