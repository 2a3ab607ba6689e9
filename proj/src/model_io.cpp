#include <crowdsel/model_io.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace crowdsel {

namespace {

constexpr const char* kFormat = "crowdsel-model 1";

std::string join(const Vector& v) {
  std::string out;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v(i));
  }
  return out;
}

class Fields {
 public:
  Fields(const std::string& text, std::string source) : source_(std::move(source)) {
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      if (raw.empty()) continue;
      const auto eq = raw.find(" = ");
      if (eq == std::string::npos) fail(line, "expected 'key = value'");
      const std::string key = raw.substr(0, eq);
      if (values_.count(key)) fail(line, "duplicate key '" + key + "'");
      values_[key] = {raw.substr(eq + 3), line};
    }
  }

  [[noreturn]] void fail(int line, const std::string& message) const {
    throw ValidationError(source_ + ":" + std::to_string(line) + ": " + message);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::pair<std::string, int>& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError(source_ + ": missing key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& [value, line] = get(key);
    return parse(value, line);
  }

  Index integer(const std::string& key) const {
    const auto& [value, line] = get(key);
    Index v = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size() || v < 0) fail(line, "invalid count '" + value + "'");
    return v;
  }

  Vector vector(const std::string& key, Index expected) const {
    const auto& [value, line] = get(key);
    std::vector<double> parts;
    std::size_t start = 0;
    while (!value.empty() && start <= value.size()) {
      const auto comma = value.find(',', start);
      const auto end = comma == std::string::npos ? value.size() : comma;
      parts.push_back(parse(value.substr(start, end - start), line));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (static_cast<Index>(parts.size()) != expected) {
      fail(line, "'" + key + "' has " + std::to_string(parts.size()) + " values, expected " + std::to_string(expected));
    }
    return Eigen::Map<const Vector>(parts.data(), expected);
  }

 private:
  double parse(const std::string& token, int line) const {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
      fail(line, "invalid number '" + token + "'");
    }
    return v;
  }

  std::string source_;
  std::map<std::string, std::pair<std::string, int>> values_;
};

}  // namespace

void ModelFile::validate() const {
  if (method != "em" && method != "em-sparse" && method != "majority" && method != "oracle") {
    throw ValidationError("unknown model method '" + method + "'");
  }
  const bool crowd = method == "em" || method == "em-sparse";
  if (crowd && d < 1) throw ValidationError("EM models need d >= 1");
  if (!crowd && d != 0) throw ValidationError("labels-only models have d = 0");
  if (params.alpha.size() != d) throw ValidationError("alpha length does not match d");
  if (params.gamma.size() != (crowd ? k : 0)) throw ValidationError("gamma length does not match k");
  if (params.beta.size() != k + 1) throw ValidationError("beta length does not match k + 1");
  if (standardization && (standardization->mean.size() != k || standardization->scale.size() != k)) {
    throw ValidationError("standardization record does not match k");
  }
}

double ModelFile::probability(const Vector& raw_x, const std::map<Index, int>& votes) const {
  if (raw_x.size() != k) {
    throw ValidationError("feature row has " + std::to_string(raw_x.size()) + " values, model expects " +
                          std::to_string(k));
  }
  const Vector x = standardization ? standardization->apply_row(raw_x) : raw_x;
  if (d == 0) {
    if (!votes.empty()) throw ValidationError("labels-only models do not use votes");
    return logistic(params.beta(0) + params.beta.tail(k).dot(x));
  }
  return votes.empty() ? predict_proba(params, x) : predict_with_votes(params, x, votes);
}

std::string serialize_model(const ModelFile& model) {
  model.validate();
  std::ostringstream out;
  out << "format = " << kFormat << '\n';
  out << "method = " << model.method << '\n';
  out << "d = " << model.d << '\n';
  out << "k = " << model.k << '\n';
  out << "lambda = " << format_double(model.lambda) << '\n';
  out << "flipped = " << (model.flipped ? 1 : 0) << '\n';
  out << "alpha = " << join(model.params.alpha) << '\n';
  out << "gamma = " << join(model.params.gamma) << '\n';
  out << "beta = " << join(model.params.beta) << '\n';
  out << "standardized = " << (model.standardization ? 1 : 0) << '\n';
  if (model.standardization) {
    out << "center = " << join(model.standardization->mean) << '\n';
    out << "scale = " << join(model.standardization->scale) << '\n';
  }
  return out.str();
}

ModelFile parse_model(const std::string& text, const std::string& source) {
  const Fields f(text, source);
  if (f.get("format").first != kFormat) f.fail(f.get("format").second, "unsupported model format");
  ModelFile m;
  m.method = f.get("method").first;
  m.d = f.integer("d");
  m.k = f.integer("k");
  m.lambda = f.real("lambda");
  m.flipped = f.integer("flipped") != 0;
  const bool crowd = m.d > 0;
  m.params.alpha = f.vector("alpha", m.d);
  m.params.gamma = f.vector("gamma", crowd ? m.k : 0);
  m.params.beta = f.vector("beta", m.k + 1);
  if (f.integer("standardized") != 0) {
    StandardizationRecord record;
    record.mean = f.vector("center", m.k);
    record.scale = f.vector("scale", m.k);
    m.standardization = std::move(record);
  }
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
  return m;
}

void save_model(const ModelFile& model, const std::filesystem::path& path) {
  const std::string text = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(path.string() + ": cannot write model file");
  out << text;
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open model file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_model(buffer.str(), path.string());
}

}  // namespace crowdsel
