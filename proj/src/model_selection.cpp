#include <crowdsel/baselines.hpp>
#include <crowdsel/model_selection.hpp>
#include <crowdsel/parallel.hpp>
#include <crowdsel/random.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace crowdsel {

namespace {

void check_predictions(const Labels& predictions, Index n) {
  if (predictions.size() != n) {
    throw ValidationError("prediction length " + std::to_string(predictions.size()) + " does not match " +
                          std::to_string(n) + " units");
  }
  for (Index i = 0; i < n; ++i) {
    if (predictions(i) != 0 && predictions(i) != 1) throw ValidationError("predictions must be 0 or 1");
  }
}

// Fraction of unit i's votes that differ from `label`.
double disagreement(const Dataset& ds, Index i, int label) {
  Index cast = 0;
  Index differ = 0;
  for (Index r = 0; r < ds.d(); ++r) {
    if (!ds.available(i, r)) continue;
    ++cast;
    differ += ds.vote(i, r) != label;
  }
  return static_cast<double>(differ) / static_cast<double>(cast);
}

void check_grid(std::span<const double> grid) {
  if (grid.empty()) throw ValidationError("lambda grid is empty");
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!std::isfinite(grid[g]) || grid[g] < 0.0) throw ValidationError("lambda values must be finite and >= 0");
    if (g > 0 && grid[g] > grid[g - 1]) throw ValidationError("lambda grid must be sorted in descending order");
  }
}

struct LinearChoice {
  double lambda = 0.0;
  double s_hat = 0.0;
  Vector beta;
};

// Fits a labels-based L1 logistic regression along the grid and keeps the
// surrogate-score minimizer (ties: larger lambda).
template <class FitFn>
LinearChoice tune_linear(const Dataset& test, std::span<const double> grid, FitFn&& fit_at) {
  std::optional<LinearChoice> best;
  for (double lambda : grid) {
    Vector beta = fit_at(lambda).values;
    const double s = surrogate_score(classify_linear(beta, test.features()), test);
    if (!best || s < best->s_hat) best = LinearChoice{lambda, s, std::move(beta)};
  }
  return *best;
}

}  // namespace

double surrogate_score(const Labels& predictions, const Dataset& test) {
  check_predictions(predictions, test.n());
  double total = 0.0;
  for (Index i = 0; i < test.n(); ++i) total += disagreement(test, i, predictions(i));
  return total / static_cast<double>(test.n());
}

double empirical_risk(const Labels& predictions, const Labels& truth) {
  if (truth.size() == 0) throw ValidationError("empirical risk of an empty sample");
  check_predictions(predictions, truth.size());
  return static_cast<double>((predictions.array() != truth.array()).count()) / static_cast<double>(truth.size());
}

ScoreBreakdown score_decomposition(const Labels& predictions, const Dataset& test) {
  if (!test.has_true_labels()) throw ValidationError("score decomposition requires true labels");
  check_predictions(predictions, test.n());
  const Labels& truth = *test.true_labels();
  ScoreBreakdown out;
  double weighted = 0.0;
  double expert = 0.0;
  for (Index i = 0; i < test.n(); ++i) {
    const double wrong_votes = disagreement(test, i, truth(i));
    const double classifier_wrong = predictions(i) != truth(i) ? 1.0 : 0.0;
    weighted += (1.0 - 2.0 * wrong_votes) * classifier_wrong;
    expert += wrong_votes;
  }
  const auto n = static_cast<double>(test.n());
  out.weighted_term = weighted / n;
  out.expert_error_term = expert / n;
  out.s_hat = surrogate_score(predictions, test);
  return out;
}

double lambda_max(const Dataset& ds) {
  const Labels labels = majority_vote(ds).labels;
  const double mean = labels.cast<double>().mean();
  const Vector resid = labels.cast<double>().array() - mean;
  const Vector gradient = ds.features().transpose() * resid;
  return gradient.size() ? gradient.lpNorm<Eigen::Infinity>() : 0.0;
}

std::vector<double> default_grid(const Dataset& ds, int count, double ratio) {
  if (count < 1) throw ValidationError("grid size must be >= 1");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("grid ratio must lie in (0, 1]");
  double top = lambda_max(ds);
  if (!(top > 0.0)) top = 1.0;  // no slope signal in the majority labels
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int g = 0; g < count; ++g) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(g) / static_cast<double>(count - 1);
    grid[static_cast<std::size_t>(g)] = top * std::pow(ratio, frac);
  }
  return grid;
}

std::size_t argmin_first(std::span<const double> values) {
  if (values.empty()) throw ValidationError("argmin of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[best]) best = i;
  }
  return best;
}

SelectionReport select_lambda(const Dataset& train, const Dataset& test, std::span<const double> grid,
                              const EmConfig& config) {
  check_grid(grid);
  config.validate();
  if (test.d() != train.d() || test.k() != train.k()) throw ValidationError("train/test dimensions differ");
  SelectionReport report;
  report.per_lambda.resize(grid.size());
  std::optional<CrowdParams> warm;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    LambdaScore& entry = report.per_lambda[g];
    if (g > 0 && grid[g] == grid[g - 1]) {
      entry = report.per_lambda[g - 1];
      continue;
    }
    entry.lambda = grid[g];
    try {
      EmConfig c = config;
      c.lambda = grid[g];
      const Vector init = majority_logistic(train, grid[g], config.solver).values;
      std::vector<CrowdParams> extra;
      if (warm) extra.push_back(*warm);
      const FitResult fit = fit_map_em(train, c, init, extra);
      const Labels predictions = classify(fit.params, test.features());
      entry.s_hat = surrogate_score(predictions, test);
      if (test.has_true_labels()) entry.r_hat = empirical_risk(predictions, *test.true_labels());
      entry.nnz_gamma = fit.params.nonzero_gamma();
      entry.nnz_beta = fit.params.nonzero_beta();
      entry.converged = fit.converged;
      entry.params = fit.params;
      warm = fit.params;
    } catch (const std::runtime_error& e) {
      entry.failed = true;
      entry.error = e.what();
    }
  }

  std::optional<std::size_t> best_s;
  std::optional<std::size_t> best_r;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const LambdaScore& e = report.per_lambda[g];
    if (e.failed) continue;
    if (!best_s || e.s_hat < report.per_lambda[*best_s].s_hat) best_s = g;
    if (e.r_hat && (!best_r || *e.r_hat < *report.per_lambda[*best_r].r_hat)) best_r = g;
  }
  report.chosen_index = best_s;
  if (best_s) report.chosen_lambda = grid[*best_s];
  report.r_hat_index = best_r;
  return report;
}

std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed) {
  if (folds < 2 || folds > n) throw ValidationError("folds must lie in [2, n]");
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = make_rng(seed, Stream::kFolds);
  portable_shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (std::size_t a = 0; a < order.size(); ++a) fold[static_cast<std::size_t>(order[a])] = static_cast<int>(a % static_cast<std::size_t>(folds));
  return fold;
}

CvScore cross_validated_score(const Dataset& ds, int folds, double lambda, const EmConfig& config) {
  const auto assignment = fold_assignment(ds.n(), folds, config.seed);
  return cross_validated_score(ds, assignment, lambda, config);
}

CvScore cross_validated_score(const Dataset& ds, std::span<const int> fold_of_unit, double lambda,
                              const EmConfig& config) {
  if (static_cast<Index>(fold_of_unit.size()) != ds.n()) throw ValidationError("fold assignment length mismatch");
  const int folds = *std::max_element(fold_of_unit.begin(), fold_of_unit.end()) + 1;
  if (folds < 2) throw ValidationError("cross validation needs at least 2 folds");
  EmConfig c = config;
  c.lambda = lambda;
  CvScore out;
  double risk_total = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train_rows;
    std::vector<Index> test_rows;
    for (Index i = 0; i < ds.n(); ++i) {
      const int fi = fold_of_unit[static_cast<std::size_t>(i)];
      if (fi < 0) throw ValidationError("negative fold index");
      (fi == f ? test_rows : train_rows).push_back(i);
    }
    if (train_rows.empty() || test_rows.empty()) throw ValidationError("degenerate fold " + std::to_string(f));
    const Dataset train = ds.select_rows(train_rows);
    const Dataset test = ds.select_rows(test_rows);
    const Vector init = majority_logistic(train, lambda, config.solver).values;
    const FitResult fit = fit_map_em(train, c, init);
    const Labels predictions = classify(fit.params, test.features());
    out.fold_scores.push_back(surrogate_score(predictions, test));
    if (test.has_true_labels()) risk_total += empirical_risk(predictions, *test.true_labels());
  }
  double total = 0.0;
  for (double s : out.fold_scores) total += s;
  out.s_hat = total / folds;
  if (ds.has_true_labels()) out.r_hat = risk_total / folds;
  return out;
}

std::string MethodSpec::name() const {
  switch (kind) {
    case MethodKind::kEm:
      return "em";
    case MethodKind::kEmSparse:
      return "em-sparse";
    case MethodKind::kMajority:
      return "majority";
    case MethodKind::kOracle:
      return "oracle";
    case MethodKind::kConstant:
      return "constant" + std::to_string(constant_label);
  }
  return "unknown";
}

MethodSpec MethodSpec::parse(const std::string& name) {
  if (name == "em") return {MethodKind::kEm};
  if (name == "em-sparse") return {MethodKind::kEmSparse};
  if (name == "majority") return {MethodKind::kMajority};
  if (name == "oracle") return {MethodKind::kOracle};
  if (name == "constant0") return {MethodKind::kConstant, 0};
  if (name == "constant1") return {MethodKind::kConstant, 1};
  throw ValidationError("unknown method '" + name + "'");
}

void flag_minimizers(std::vector<MethodScore>& methods) {
  std::optional<std::size_t> best_s;
  std::optional<std::size_t> best_r;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    methods[m].s_hat_min = false;
    methods[m].r_hat_min = false;
    if (!best_s || methods[m].s_hat < methods[*best_s].s_hat) best_s = m;
    if (methods[m].r_hat && (!best_r || *methods[m].r_hat < *methods[*best_r].r_hat)) best_r = m;
  }
  if (best_s) methods[*best_s].s_hat_min = true;
  if (best_r) methods[*best_r].r_hat_min = true;
}

SelectionReport compare_methods(const Dataset& train, const Dataset& test, std::span<const MethodSpec> methods,
                                const CompareConfig& config) {
  if (methods.empty()) throw ValidationError("no methods to compare");
  const std::vector<double> grid = config.grid.empty() ? default_grid(train) : config.grid;
  check_grid(grid);
  SelectionReport report;
  for (const MethodSpec& spec : methods) {
    MethodScore score;
    score.method = spec.name();
    Labels predictions;
    switch (spec.kind) {
      case MethodKind::kEm: {
        EmConfig c = config.em;
        c.lambda = 0.0;
        const FitResult fit = fit_map_em(train, c, majority_logistic(train, 0.0, c.solver).values);
        score.beta = fit.params.beta;
        predictions = classify(fit.params, test.features());
        break;
      }
      case MethodKind::kEmSparse: {
        if (report.per_lambda.empty()) {
          SelectionReport sel = select_lambda(train, test, grid, config.em);
          report.per_lambda = std::move(sel.per_lambda);
          report.chosen_index = sel.chosen_index;
          report.chosen_lambda = sel.chosen_lambda;
          report.r_hat_index = sel.r_hat_index;
        }
        if (!report.chosen_index) throw NumericError("every lambda in the grid failed to fit");
        const LambdaScore& chosen = report.per_lambda[*report.chosen_index];
        score.lambda = chosen.lambda;
        score.beta = chosen.params.beta;
        predictions = classify(chosen.params, test.features());
        break;
      }
      case MethodKind::kMajority: {
        LinearChoice choice = tune_linear(test, grid, [&](double l) { return majority_logistic(train, l, config.em.solver); });
        score.lambda = choice.lambda;
        score.beta = std::move(choice.beta);
        predictions = classify_linear(score.beta, test.features());
        break;
      }
      case MethodKind::kOracle: {
        LinearChoice choice = tune_linear(test, grid, [&](double l) { return oracle_logistic(train, l, config.em.solver); });
        score.lambda = choice.lambda;
        score.beta = std::move(choice.beta);
        predictions = classify_linear(score.beta, test.features());
        break;
      }
      case MethodKind::kConstant: {
        if (spec.constant_label != 0 && spec.constant_label != 1) throw ValidationError("constant label must be 0 or 1");
        predictions = Labels::Constant(test.n(), spec.constant_label);
        score.beta = Vector::Zero(train.k() + 1);
        score.beta(0) = spec.constant_label == 1 ? 1.0 : -1.0;
        break;
      }
    }
    score.s_hat = surrogate_score(predictions, test);
    if (test.has_true_labels()) score.r_hat = empirical_risk(predictions, *test.true_labels());
    report.methods.push_back(std::move(score));
  }
  flag_minimizers(report.methods);
  return report;
}

std::vector<DeviationPoint> theory_check_deviation(const SimulationConfig& generator,
                                                   std::span<const Index> n_prime_list, int replications,
                                                   const DeviationOptions& options) {
  generator.validate();
  if (generator.fixed_features) throw ValidationError("deviation check needs a feature generator");
  if (replications < 1) throw ValidationError("replications must be >= 1");
  if (options.family_size < 1) throw ValidationError("family_size must be >= 1");
  if (options.feature < 0 || options.feature >= generator.feature_count()) {
    throw ValidationError("threshold feature out of range");
  }
  for (Index n : n_prime_list) {
    if (n < 1) throw ValidationError("n' must be >= 1");
  }

  // Population quantities from one large reference sample.
  SimulationConfig reference = generator;
  reference.n = options.reference_n;
  reference.seed = make_rng(options.seed, Stream::kTheory, 0)();
  reference.vote_seed.reset();
  const Dataset ref = generate(reference).dataset;
  const Vector ref_x = ref.features().col(options.feature);
  std::vector<double> sorted(ref_x.data(), ref_x.data() + ref_x.size());
  std::sort(sorted.begin(), sorted.end());
  const auto family = static_cast<std::size_t>(options.family_size);
  std::vector<double> thresholds(family);
  for (std::size_t t = 0; t < family; ++t) {
    const double q = (static_cast<double>(t) + 0.5) / static_cast<double>(family);
    thresholds[t] = sorted[static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1))];
  }
  const Labels& ref_z = *ref.true_labels();
  double eps = 0.0;
  if (const auto known = known_mean_expert_error(generator.vote_scheme); known && !generator.labels_from_majority &&
                                                                         !generator.keep_experts) {
    eps = *known;
  } else {
    for (Index r = 0; r < ref.d(); ++r) {
      Index cast = 0;
      Index wrong = 0;
      for (Index i = 0; i < ref.n(); ++i) {
        if (!ref.available(i, r)) continue;
        ++cast;
        wrong += ref.vote(i, r) != ref_z(i);
      }
      eps += static_cast<double>(wrong) / static_cast<double>(cast);
    }
    eps /= static_cast<double>(ref.d());
  }
  std::vector<double> target(family);
  for (std::size_t t = 0; t < family; ++t) {
    Index errors = 0;
    for (Index i = 0; i < ref.n(); ++i) errors += (ref_x(i) > thresholds[t] ? 1 : 0) != ref_z(i);
    const double risk = static_cast<double>(errors) / static_cast<double>(ref.n());
    target[t] = (1.0 - 2.0 * eps) * risk + eps;
  }

  std::vector<DeviationPoint> out;
  for (std::size_t a = 0; a < n_prime_list.size(); ++a) {
    const Index n_prime = n_prime_list[a];
    std::vector<double> deviations(static_cast<std::size_t>(replications));
    parallel_for(deviations.size(), options.jobs, [&](std::size_t b) {
      SimulationConfig c = generator;
      c.n = n_prime;
      c.seed = make_rng(options.seed, Stream::kTheory, 1 + a * deviations.size() + b)();
      c.vote_seed.reset();
      const Dataset ds = generate(c).dataset;
      // Per-unit disagreement when predicting 1 and when predicting 0.
      Vector if_one(ds.n());
      Vector if_zero(ds.n());
      for (Index i = 0; i < ds.n(); ++i) {
        if_one(i) = disagreement(ds, i, 1);
        if_zero(i) = 1.0 - if_one(i);
      }
      double sup = 0.0;
      for (std::size_t t = 0; t < family; ++t) {
        double s = 0.0;
        for (Index i = 0; i < ds.n(); ++i) s += ds.features()(i, options.feature) > thresholds[t] ? if_one(i) : if_zero(i);
        s /= static_cast<double>(ds.n());
        sup = std::max(sup, std::abs(s - target[t]));
      }
      deviations[b] = sup;
    });
    double mean = 0.0;
    for (double v : deviations) mean += v;
    mean /= static_cast<double>(replications);
    double var = 0.0;
    for (double v : deviations) var += (v - mean) * (v - mean);
    const double sd = replications > 1 ? std::sqrt(var / static_cast<double>(replications - 1)) : 0.0;
    out.push_back({n_prime, mean, sd});
  }
  return out;
}

}  // namespace crowdsel
