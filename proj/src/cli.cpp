#include <crowdsel/baselines.hpp>
#include <crowdsel/cli.hpp>
#include <crowdsel/config_file.hpp>
#include <crowdsel/model_io.hpp>
#include <crowdsel/model_selection.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <variant>

namespace crowdsel {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct DataArgs {
  std::string features;
  std::string votes;
  std::string labels;
};

struct EmArgs {
  int restarts = 30;
  std::uint64_t seed = 0;
  int jobs = 1;
  double em_tol = 1e-6;
  int max_em_iters = 200;

  EmConfig config(double lambda) const {
    EmConfig c;
    c.lambda = lambda;
    c.restarts = restarts;
    c.seed = seed;
    c.jobs = jobs;
    c.em_tol = em_tol;
    c.max_em_iters = max_em_iters;
    return c;
  }
};

struct GridArgs {
  std::string grid;
  int grid_size = 30;
  double grid_ratio = 1e-3;
};

void add_data(CLI::App* app, DataArgs& d, bool labels = true) {
  app->add_option("--features", d.features, "feature CSV")->required();
  app->add_option("--votes", d.votes, "vote CSV (0, 1 or empty)")->required();
  if (labels) app->add_option("--labels", d.labels, "true-label CSV (simulation only)");
}

void add_em(CLI::App* app, EmArgs& e) {
  app->add_option("--restarts", e.restarts, "random EM starts")->capture_default_str();
  app->add_option("--seed", e.seed, "seed for restarts and splits")->capture_default_str();
  app->add_option("--jobs", e.jobs, "worker threads")->capture_default_str();
  app->add_option("--em-tol", e.em_tol, "relative EM tolerance")->capture_default_str();
  app->add_option("--max-em-iters", e.max_em_iters, "EM iteration cap")->capture_default_str();
}

void add_grid(CLI::App* app, GridArgs& g) {
  app->add_option("--grid", g.grid, "comma-separated lambda values");
  app->add_option("--grid-size", g.grid_size, "default grid size")->capture_default_str();
  app->add_option("--grid-ratio", g.grid_ratio, "smallest / largest lambda of the default grid")->capture_default_str();
}

Dataset load(const DataArgs& d) {
  std::optional<fs::path> labels;
  if (!d.labels.empty()) labels = d.labels;
  return load_csv(d.features, d.votes, labels);
}

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    if (token.empty()) throw ValidationError(what + ": empty entry in '" + text + "'");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || !std::isfinite(v)) throw ValidationError(what + ": invalid number '" + token + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(what + " is empty");
  return out;
}

// Explicit grids are sorted into descending order for warm starts.
std::vector<double> resolve_grid(const GridArgs& g, const Dataset& train) {
  if (g.grid.empty()) return default_grid(train, g.grid_size, g.grid_ratio);
  std::vector<double> grid = parse_list(g.grid, "--grid");
  std::sort(grid.begin(), grid.end(), std::greater<>());
  return grid;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(path.string() + ": cannot write");
  out << text;
  if (!out) throw ValidationError(path.string() + ": write failed");
}

void prepare_dir(const std::string& dir) {
  if (dir.empty()) throw ValidationError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError(dir + ": cannot create output directory: " + ec.message());
}

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json scheme_json(const VoteScheme& scheme) {
  json j;
  if (const auto* s = std::get_if<ConstantError>(&scheme)) {
    j["scheme"] = "constant";
    j["epsilon"] = s->epsilon;
  } else if (const auto* s = std::get_if<ModelBased>(&scheme)) {
    j["scheme"] = "model";
    j["alpha"] = vec_json(s->alpha);
    j["gamma"] = vec_json(s->gamma);
  } else if (const auto* s = std::get_if<ModelBasedSquared>(&scheme)) {
    j["scheme"] = "model_squared";
    j["alpha"] = vec_json(s->alpha);
    j["gamma"] = vec_json(s->gamma);
  } else if (const auto* s = std::get_if<IndependentCovariate>(&scheme)) {
    j["scheme"] = "independent_covariate";
    j["alpha"] = vec_json(s->alpha);
    j["slope"] = s->slope;
    j["first_column"] = s->first_column;
    j["squared"] = s->squared;
  }
  return j;
}

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["version"] = CROWDSEL_VERSION;
    doc_["started_at"] = timestamp_utc();
  }
  json& parameters() { return doc_["parameters"]; }
  json& inputs() { return doc_["inputs"]; }
  void output(const fs::path& path) { doc_["outputs"].push_back(path.string()); }

  void write(const fs::path& dir) {
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc_["wall_clock_seconds"] = elapsed;
    write_text(dir / "manifest.json", doc_.dump(2) + "\n");
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

void record_data(Manifest& m, const DataArgs& d) {
  m.inputs()["features"] = d.features;
  m.inputs()["votes"] = d.votes;
  m.inputs()["labels"] = d.labels.empty() ? json(nullptr) : json(d.labels);
}

void record_em(Manifest& m, const EmArgs& e) {
  m.parameters()["restarts"] = e.restarts;
  m.parameters()["seed"] = e.seed;
  m.parameters()["jobs"] = e.jobs;
  m.parameters()["em_tol"] = e.em_tol;
  m.parameters()["max_em_iters"] = e.max_em_iters;
}

// ---- simulate ----

struct SimulateArgs {
  std::string config;
  std::string out;
  Index bayes_mc = 0;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const SimulationConfig config = load_simulation_config(a.config);
  prepare_dir(a.out);
  Manifest m("simulate");
  m.inputs()["config"] = a.config;
  json& p = m.parameters();
  p["n"] = config.n;
  p["seed"] = config.seed;
  p["vote_seed"] = config.vote_seed ? json(*config.vote_seed) : json(nullptr);
  p["fixed_features"] = config.fixed_features.has_value();
  p["fixed_labels"] = config.fixed_labels.has_value();
  if (!config.fixed_features) {
    p["mean"] = vec_json(config.feature_spec.mean);
    json cov = json::array();
    for (Index r = 0; r < config.feature_spec.covariance.rows(); ++r) {
      cov.push_back(vec_json(config.feature_spec.covariance.row(r).transpose()));
    }
    p["covariance"] = cov;
    p["noise_covariates"] = config.feature_spec.noise_covariates;
  }
  if (!config.fixed_labels) p["beta"] = vec_json(config.beta_true);
  p["votes"] = scheme_json(config.vote_scheme);
  p["labels_from_majority"] = config.labels_from_majority;
  p["keep_experts"] = config.keep_experts ? json(*config.keep_experts) : json(nullptr);

  const Scenario scenario = generate(config);
  const fs::path dir(a.out);
  save_csv(scenario.dataset, dir / "features.csv", dir / "votes.csv", dir / "labels.csv");
  for (const char* f : {"features.csv", "votes.csv", "labels.csv"}) m.output(dir / f);
  if (a.bayes_mc > 0) {
    const double bayes = estimate_bayes_risk(config, a.bayes_mc);
    p["bayes_mc"] = a.bayes_mc;
    write_text(dir / "bayes_risk.csv", "bayes_risk\n" + fmt(bayes) + "\n");
    m.output(dir / "bayes_risk.csv");
  }
  m.write(dir);
  out << "wrote " << scenario.dataset.n() << " units, " << scenario.dataset.k() << " features, "
      << scenario.dataset.d() << " experts to " << a.out << "\n";
  return 0;
}

// ---- fit ----

struct FitArgs {
  DataArgs data;
  EmArgs em;
  GridArgs grid;
  std::string method = "em";
  std::optional<double> lambda;
  double test_fraction = 0.3;
  bool standardize = false;
  std::string out;
};

int cmd_fit(const FitArgs& a, std::ostream& out) {
  Dataset ds = load(a.data);
  prepare_dir(a.out);
  Manifest m("fit");
  record_data(m, a.data);
  record_em(m, a.em);
  m.parameters()["method"] = a.method;
  m.parameters()["standardize"] = a.standardize;

  ModelFile model;
  model.method = a.method;
  model.k = ds.k();
  if (a.standardize) {
    auto [scaled, record] = standardize(ds);
    ds = std::move(scaled);
    model.standardization = std::move(record);
  }
  const fs::path dir(a.out);
  std::ostringstream fitted;
  if (a.method == "majority" || a.method == "oracle") {
    model.lambda = a.lambda.value_or(0.0);
    const Coefficients c = a.method == "majority" ? majority_logistic(ds, model.lambda, a.em.config(0).solver)
                                                  : oracle_logistic(ds, model.lambda, a.em.config(0).solver);
    model.params.beta = c.values;
    fitted << "probability\n";
    for (Index i = 0; i < ds.n(); ++i) {
      fitted << fmt(logistic(c.values(0) + c.values.tail(ds.k()).dot(ds.features().row(i)))) << '\n';
    }
  } else if (a.method == "em" || a.method == "em-sparse") {
    if (a.method == "em") {
      model.lambda = a.lambda.value_or(0.0);
    } else if (a.lambda) {
      model.lambda = *a.lambda;
    } else {
      // Choose lambda on a held-out split, then refit on everything.
      const auto [train, test] = split(ds, SplitSpec{a.test_fraction, a.em.seed, false});
      const std::vector<double> grid = resolve_grid(a.grid, train);
      const SelectionReport report = select_lambda(train, test, grid, a.em.config(0.0));
      if (!report.chosen_lambda) throw NumericError("every lambda in the grid failed to fit");
      model.lambda = *report.chosen_lambda;
      m.parameters()["grid"] = grid;
      m.parameters()["test_fraction"] = a.test_fraction;
    }
    const EmConfig config = a.em.config(model.lambda);
    const FitResult fit = fit_map_em(ds, config, majority_logistic(ds, model.lambda, config.solver).values);
    model.d = ds.d();
    model.params = fit.params;
    model.flipped = fit.flipped;
    fitted << "posterior\n";
    for (Index i = 0; i < ds.n(); ++i) fitted << fmt(fit.posterior(i)) << '\n';
    if (!fit.converged) out << "warning: EM reached the iteration cap without converging\n";
  } else {
    throw ValidationError("unknown --method '" + a.method + "'");
  }
  m.parameters()["lambda"] = model.lambda;
  save_model(model, dir / "model.txt");
  write_text(dir / "posterior.csv", fitted.str());
  m.output(dir / "model.txt");
  m.output(dir / "posterior.csv");
  m.write(dir);
  out << "fitted " << a.method << " at lambda " << fmt(model.lambda) << "; " << model.params.nonzero_beta()
      << " nonzero slopes\n";
  return 0;
}

// ---- select ----

struct SelectArgs {
  DataArgs data;
  EmArgs em;
  GridArgs grid;
  double test_fraction = 0.3;
  int cv = 0;
  std::string out;
};

std::string report_csv(const std::vector<LambdaScore>& rows) {
  std::ostringstream csv;
  csv << "lambda,s_hat,r_hat,nnz_gamma,nnz_beta,converged\n";
  for (const LambdaScore& r : rows) {
    csv << fmt(r.lambda) << ',';
    if (r.failed) {
      csv << "NA,NA,NA,NA,0\n";
      continue;
    }
    csv << fmt(r.s_hat) << ',' << fmt(r.r_hat) << ',' << r.nnz_gamma << ',' << r.nnz_beta << ','
        << (r.converged ? 1 : 0) << '\n';
  }
  return csv.str();
}

int cmd_select(const SelectArgs& a, std::ostream& out) {
  const Dataset ds = load(a.data);
  prepare_dir(a.out);
  Manifest m("select");
  record_data(m, a.data);
  record_em(m, a.em);
  const fs::path dir(a.out);
  std::vector<LambdaScore> rows;
  std::optional<std::size_t> chosen;
  if (a.cv > 0) {
    const std::vector<double> grid = resolve_grid(a.grid, ds);
    m.parameters()["grid"] = grid;
    m.parameters()["cv"] = a.cv;
    const std::vector<int> folds = fold_assignment(ds.n(), a.cv, a.em.seed);
    for (double lambda : grid) {
      LambdaScore row;
      row.lambda = lambda;
      try {
        const EmConfig config = a.em.config(lambda);
        const CvScore cv = cross_validated_score(ds, folds, lambda, config);
        row.s_hat = cv.s_hat;
        row.r_hat = cv.r_hat;
        const FitResult full = fit_map_em(ds, config, majority_logistic(ds, lambda, config.solver).values);
        row.nnz_gamma = full.params.nonzero_gamma();
        row.nnz_beta = full.params.nonzero_beta();
        row.converged = full.converged;
      } catch (const std::runtime_error& e) {
        row.failed = true;
        row.error = e.what();
      }
      rows.push_back(row);
    }
    for (std::size_t g = 0; g < rows.size(); ++g) {
      if (!rows[g].failed && (!chosen || rows[g].s_hat < rows[*chosen].s_hat)) chosen = g;
    }
  } else {
    const auto [train, test] = split(ds, SplitSpec{a.test_fraction, a.em.seed, false});
    const std::vector<double> grid = resolve_grid(a.grid, train);
    m.parameters()["grid"] = grid;
    m.parameters()["test_fraction"] = a.test_fraction;
    SelectionReport report = select_lambda(train, test, grid, a.em.config(0.0));
    rows = std::move(report.per_lambda);
    chosen = report.chosen_index;
  }
  write_text(dir / "report.csv", report_csv(rows));
  m.output(dir / "report.csv");
  m.parameters()["chosen_lambda"] = chosen ? json(rows[*chosen].lambda) : json(nullptr);
  m.write(dir);
  for (const LambdaScore& r : rows) {
    if (r.failed) out << "lambda " << fmt(r.lambda) << " failed: " << r.error << "\n";
  }
  if (!chosen) throw NumericError("every lambda in the grid failed to fit");
  out << "chosen lambda " << fmt(rows[*chosen].lambda) << " (s_hat " << fmt(rows[*chosen].s_hat) << ")\n";
  return 0;
}

// ---- compare ----

struct CompareArgs {
  DataArgs data;
  EmArgs em;
  GridArgs grid;
  std::string methods = "em,em-sparse,majority,oracle";
  double test_fraction = 0.3;
  std::string out;
};

int cmd_compare(const CompareArgs& a, std::ostream& out) {
  const Dataset ds = load(a.data);
  prepare_dir(a.out);
  Manifest m("compare");
  record_data(m, a.data);
  record_em(m, a.em);
  std::vector<MethodSpec> specs;
  std::stringstream names(a.methods);
  std::string name;
  while (std::getline(names, name, ',')) {
    if (name == "oracle" && !ds.has_true_labels()) throw ValidationError("method oracle requires --labels");
    specs.push_back(MethodSpec::parse(name));
  }
  if (specs.empty()) throw ValidationError("--methods is empty");
  const auto [train, test] = split(ds, SplitSpec{a.test_fraction, a.em.seed, false});
  CompareConfig config;
  config.grid = resolve_grid(a.grid, train);
  config.em = a.em.config(0.0);
  m.parameters()["methods"] = a.methods;
  m.parameters()["grid"] = config.grid;
  m.parameters()["test_fraction"] = a.test_fraction;
  const SelectionReport report = compare_methods(train, test, specs, config);
  std::ostringstream csv;
  csv << "method,lambda,s_hat,r_hat,s_hat_min,r_hat_min\n";
  for (const MethodScore& s : report.methods) {
    csv << s.method << ',' << fmt(s.lambda) << ',' << fmt(s.s_hat) << ',' << fmt(s.r_hat) << ','
        << (s.s_hat_min ? 1 : 0) << ',' << (s.r_hat_min ? 1 : 0) << '\n';
  }
  const fs::path dir(a.out);
  write_text(dir / "compare.csv", csv.str());
  m.output(dir / "compare.csv");
  if (!report.per_lambda.empty()) {
    write_text(dir / "report.csv", report_csv(report.per_lambda));
    m.output(dir / "report.csv");
  }
  m.write(dir);
  for (const MethodScore& s : report.methods) {
    out << s.method << ": s_hat " << fmt(s.s_hat) << (s.s_hat_min ? " *" : "") << "\n";
  }
  return 0;
}

// ---- predict ----

struct PredictArgs {
  std::string model;
  std::string features;
  std::string votes;
  std::string out;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const ModelFile model = load_model(a.model);
  const Matrix x = read_feature_csv(a.features);
  std::optional<VoteMatrix> votes;
  if (!a.votes.empty()) {
    votes = read_vote_csv(a.votes, true);
    if (votes->rows() != x.rows()) throw ValidationError("votes and features have different row counts");
    if (votes->cols() != model.d) {
      throw ValidationError("votes have " + std::to_string(votes->cols()) + " experts, model expects " +
                            std::to_string(model.d));
    }
  }
  prepare_dir(a.out);
  Manifest m("predict");
  m.inputs()["model"] = a.model;
  m.inputs()["features"] = a.features;
  m.inputs()["votes"] = a.votes.empty() ? json(nullptr) : json(a.votes);
  std::ostringstream csv;
  csv << "probability\n";
  for (Index i = 0; i < x.rows(); ++i) {
    std::map<Index, int> unit_votes;
    if (votes) {
      for (Index r = 0; r < votes->cols(); ++r) {
        if ((*votes)(i, r) != kAbsent) unit_votes[r] = (*votes)(i, r);
      }
    }
    csv << fmt(model.probability(x.row(i).transpose(), unit_votes)) << '\n';
  }
  const fs::path dir(a.out);
  write_text(dir / "predictions.csv", csv.str());
  m.output(dir / "predictions.csv");
  m.write(dir);
  out << "wrote " << x.rows() << " predictions\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse classifiers from noisy multi-expert labels, with label-free model selection", "crowdsel"};
  app.set_version_flag("--version", std::string(CROWDSEL_VERSION));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "generate features, labels and expert votes from a config");
  simulate->add_option("config", sim.config, "simulation config file")->required();
  simulate->add_option("--out", sim.out, "output directory")->required();
  simulate->add_option("--bayes-mc", sim.bayes_mc, "also estimate the Bayes risk from this many draws");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "fit a classifier and write a model file");
  add_data(fit, fa.data);
  add_em(fit, fa.em);
  add_grid(fit, fa.grid);
  fit->add_option("--method", fa.method, "em | em-sparse | majority | oracle")
      ->check(CLI::IsMember({"em", "em-sparse", "majority", "oracle"}))
      ->capture_default_str();
  fit->add_option("--lambda", fa.lambda, "penalty (em-sparse without it selects on a split)");
  fit->add_option("--test-fraction", fa.test_fraction, "held-out fraction for em-sparse selection")->capture_default_str();
  fit->add_flag("--standardize", fa.standardize, "standardize features before fitting");
  fit->add_option("--out", fa.out, "output directory")->required();

  SelectArgs sa;
  auto* select = app.add_subcommand("select", "score a lambda grid by the surrogate score");
  add_data(select, sa.data);
  add_em(select, sa.em);
  add_grid(select, sa.grid);
  select->add_option("--test-fraction", sa.test_fraction, "held-out fraction")->capture_default_str();
  select->add_option("--cv", sa.cv, "score by K-fold cross-validation instead of one split");
  select->add_option("--out", sa.out, "output directory")->required();

  CompareArgs ca;
  auto* compare = app.add_subcommand("compare", "compare methods by the surrogate score on a held-out split");
  add_data(compare, ca.data);
  add_em(compare, ca.em);
  add_grid(compare, ca.grid);
  compare->add_option("--methods", ca.methods, "comma-separated: em, em-sparse, majority, oracle, constant0, constant1")
      ->capture_default_str();
  compare->add_option("--test-fraction", ca.test_fraction, "held-out fraction")->capture_default_str();
  compare->add_option("--out", ca.out, "output directory")->required();

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "P(Z = 1) for new units, optionally given some votes");
  predict->add_option("--model", pa.model, "model file written by fit")->required();
  predict->add_option("--features", pa.features, "feature CSV")->required();
  predict->add_option("--votes", pa.votes, "partial vote CSV");
  predict->add_option("--out", pa.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sa.cv == 1 || sa.cv < 0) throw ValidationError("--cv needs at least 2 folds");
    if (*simulate) return cmd_simulate(sim, out);
    if (*fit) return cmd_fit(fa, out);
    if (*select) return cmd_select(sa, out);
    if (*compare) return cmd_compare(ca, out);
    if (*predict) return cmd_predict(pa, out);
  } catch (const ValidationError& e) {
    err << "error: invalid input: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: numeric failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace crowdsel
