#include <crowdsel/baselines.hpp>
#include <crowdsel/crowd_em.hpp>
#include <crowdsel/parallel.hpp>
#include <crowdsel/random.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace crowdsel {

namespace {

double log_sum_exp(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double binary_entropy(double z) {
  double h = 0.0;
  if (z > 0.0) h -= z * std::log(z);
  if (z < 1.0) h -= (1.0 - z) * std::log1p(-z);
  return h;
}

void check_dims(const CrowdParams& params, const Dataset& ds) {
  if (params.alpha.size() != ds.d() || params.gamma.size() != ds.k() || params.beta.size() != ds.k() + 1) {
    throw ValidationError("parameter dimensions do not match the dataset (d=" + std::to_string(ds.d()) +
                          ", k=" + std::to_string(ds.k()) + ")");
  }
}

double penalty(const CrowdParams& params, double lambda) {
  return lambda * (params.beta.tail(params.beta.size() - 1).cwiseAbs().sum() + params.gamma.cwiseAbs().sum());
}

}  // namespace

Index CrowdParams::nonzero_gamma() const { return (gamma.array() != 0.0).count(); }

Index CrowdParams::nonzero_beta() const { return (beta.tail(beta.size() - 1).array() != 0.0).count(); }

void EmConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and >= 0");
  if (restarts < 1) throw ValidationError("restarts must be >= 1");
  if (!(em_tol > 0.0)) throw ValidationError("em_tol must be > 0");
  if (max_em_iters < 1) throw ValidationError("max_em_iters must be >= 1");
  solver.validate();
}

Vector difficulty_scores(const CrowdParams& params, const Matrix& features) { return features * params.gamma; }

Vector truth_scores(const CrowdParams& params, const Matrix& features) {
  return (features * params.beta.tail(params.beta.size() - 1)).array() + params.beta(0);
}

double complete_log_posterior(const CrowdParams& params, const Vector& z, const Dataset& ds, double lambda) {
  check_dims(params, ds);
  if (z.size() != ds.n()) throw ValidationError("soft-label length mismatch");
  const Vector difficulty = difficulty_scores(params, ds.features());
  const Vector eta = truth_scores(params, ds.features());
  double total = 0.0;
  for (Index i = 0; i < ds.n(); ++i) {
    for (Index k = 0; k < ds.d(); ++k) {
      if (!ds.available(i, k)) continue;
      const double a = params.alpha(k) + difficulty(i);
      const double agree = expected_agreement(z(i), ds.vote(i, k));
      total += agree * -softplus(-a) + (1.0 - agree) * -softplus(a);
    }
    total += z(i) * -softplus(-eta(i)) + (1.0 - z(i)) * -softplus(eta(i));
  }
  total -= penalty(params, lambda);
  if (!std::isfinite(total)) throw NumericError("non-finite complete-data objective");
  return total;
}

double observed_log_posterior(const CrowdParams& params, const Dataset& ds, double lambda) {
  check_dims(params, ds);
  const Vector difficulty = difficulty_scores(params, ds.features());
  const Vector eta = truth_scores(params, ds.features());
  double total = 0.0;
  for (Index i = 0; i < ds.n(); ++i) {
    double given_one = -softplus(-eta(i));  // log mu_i
    double given_zero = -softplus(eta(i));  // log(1 - mu_i)
    for (Index k = 0; k < ds.d(); ++k) {
      if (!ds.available(i, k)) continue;
      const double signed_a = (2.0 * ds.vote(i, k) - 1.0) * (params.alpha(k) + difficulty(i));
      given_one += -softplus(-signed_a);
      given_zero += -softplus(signed_a);
    }
    total += log_sum_exp(given_one, given_zero);
  }
  return total - penalty(params, lambda);
}

Vector e_step(const CrowdParams& params, const Dataset& ds) {
  check_dims(params, ds);
  const Vector difficulty = difficulty_scores(params, ds.features());
  const Vector eta = truth_scores(params, ds.features());
  Vector posterior(ds.n());
  for (Index i = 0; i < ds.n(); ++i) {
    double log_odds = eta(i);
    for (Index k = 0; k < ds.d(); ++k) {
      if (ds.available(i, k)) log_odds += (2.0 * ds.vote(i, k) - 1.0) * (params.alpha(k) + difficulty(i));
    }
    posterior(i) = logistic(log_odds);
  }
  return posterior;
}

WeightedProblem build_expert_problem(const Vector& posterior, const Dataset& ds, double lambda) {
  if (posterior.size() != ds.n()) throw ValidationError("posterior length mismatch");
  Index votes = 0;
  for (Index i = 0; i < ds.n(); ++i) votes += ds.vote_count(i);
  const Index d = ds.d();
  const Index k = ds.k();
  WeightedProblem p;
  p.rows = Matrix::Zero(2 * votes, d + k);
  p.weights.resize(2 * votes);
  p.responses.resize(2 * votes);
  p.penalty_factor.resize(d + k);
  p.penalty_factor.head(d).setZero();
  p.penalty_factor.tail(k).setOnes();
  p.lambda = lambda;
  Index row = 0;
  for (Index i = 0; i < ds.n(); ++i) {
    for (Index e = 0; e < d; ++e) {
      if (!ds.available(i, e)) continue;
      const double agree = expected_agreement(posterior(i), ds.vote(i, e));
      for (Index half = 0; half < 2; ++half) {
        const Index r = row + half * votes;
        p.rows(r, e) = 1.0;
        p.rows.row(r).tail(k) = ds.features().row(i);
        p.weights(r) = half == 0 ? agree : 1.0 - agree;
        p.responses(r) = half == 0 ? 1.0 : 0.0;
      }
      ++row;
    }
  }
  return p;
}

WeightedProblem build_truth_problem(const Vector& posterior, const Dataset& ds, double lambda) {
  if (posterior.size() != ds.n()) throw ValidationError("posterior length mismatch");
  const Index n = ds.n();
  const Index k = ds.k();
  WeightedProblem p;
  p.rows.resize(2 * n, k + 1);
  p.rows.col(0).setOnes();
  p.rows.block(0, 1, n, k) = ds.features();
  p.rows.block(n, 1, n, k) = ds.features();
  p.weights.resize(2 * n);
  p.weights.head(n) = posterior;
  p.weights.tail(n) = Vector::Ones(n) - posterior;
  p.responses.resize(2 * n);
  p.responses.head(n).setOnes();
  p.responses.tail(n).setZero();
  p.penalty_factor = Vector::Ones(k + 1);
  p.penalty_factor(0) = 0.0;
  p.lambda = lambda;
  return p;
}

GroupedProblem grouped_expert_problem(const Vector& posterior, const Dataset& ds, double lambda) {
  if (posterior.size() != ds.n()) throw ValidationError("posterior length mismatch");
  GroupedProblem p;
  p.features = &ds.features();
  p.groups = ds.d();
  std::vector<double> agreement;
  for (Index i = 0; i < ds.n(); ++i) {
    for (Index e = 0; e < ds.d(); ++e) {
      if (!ds.available(i, e)) continue;
      p.unit.push_back(i);
      p.group.push_back(e);
      agreement.push_back(expected_agreement(posterior(i), ds.vote(i, e)));
    }
  }
  p.responses = Eigen::Map<const Vector>(agreement.data(), static_cast<Index>(agreement.size()));
  p.weights = Vector::Ones(p.size());
  p.penalty_factor.resize(ds.d() + ds.k());
  p.penalty_factor.head(ds.d()).setZero();
  p.penalty_factor.tail(ds.k()).setOnes();
  p.lambda = lambda;
  return p;
}

GroupedProblem grouped_truth_problem(const Vector& posterior, const Dataset& ds, double lambda) {
  if (posterior.size() != ds.n()) throw ValidationError("posterior length mismatch");
  GroupedProblem p;
  p.features = &ds.features();
  p.groups = 1;
  p.unit.resize(static_cast<std::size_t>(ds.n()));
  for (Index i = 0; i < ds.n(); ++i) p.unit[static_cast<std::size_t>(i)] = i;
  p.group.assign(p.unit.size(), 0);
  p.responses = posterior.cwiseMax(0.0).cwiseMin(1.0);
  p.weights = Vector::Ones(ds.n());
  p.penalty_factor = Vector::Ones(ds.k() + 1);
  p.penalty_factor(0) = 0.0;
  p.lambda = lambda;
  return p;
}

CrowdParams m_step(const Vector& posterior, const Dataset& ds, double lambda, const SolverConfig& solver) {
  CrowdParams zero{Vector::Zero(ds.d()), Vector::Zero(ds.k()), Vector::Zero(ds.k() + 1)};
  return m_step(posterior, ds, lambda, solver, zero);
}

CrowdParams m_step(const Vector& posterior, const Dataset& ds, double lambda, const SolverConfig& solver,
                   const CrowdParams& start) {
  return m_step(posterior, ds, lambda, solver, start, nullptr);
}

CrowdParams m_step(const Vector& posterior, const Dataset& ds, double lambda, const SolverConfig& solver,
                   const CrowdParams& start, MStepCache* cache) {
  check_dims(start, ds);
  const Index d = ds.d();
  const Index k = ds.k();
  Vector expert_start(d + k);
  expert_start << start.alpha, start.gamma;
  const Coefficients expert = fit(grouped_expert_problem(posterior, ds, lambda), solver, expert_start,
                                    cache ? &cache->expert : nullptr);
  const Coefficients truth = fit(grouped_truth_problem(posterior, ds, lambda), solver, start.beta,
                                   cache ? &cache->truth : nullptr);
  return {expert.values.head(d), expert.values.tail(k), truth.values};
}

FitResult run_em(const Dataset& ds, const EmConfig& config, CrowdParams start) {
  check_dims(start, ds);
  FitResult out;
  out.params = std::move(start);
  double previous = observed_log_posterior(out.params, ds, config.lambda);
  if (!std::isfinite(previous)) throw NumericError("non-finite objective at the EM starting point");
  MStepCache cache;
  for (int it = 1; it <= config.max_em_iters; ++it) {
    const Vector z = e_step(out.params, ds);
    out.params = m_step(z, ds, config.lambda, config.solver, out.params, &cache);
    double bound = complete_log_posterior(out.params, z, ds, config.lambda);
    for (Index i = 0; i < z.size(); ++i) bound += binary_entropy(z(i));
    const double current = observed_log_posterior(out.params, ds, config.lambda);
    if (!std::isfinite(current)) throw NumericError("non-finite observed objective during EM");
    out.objective_trace.push_back(bound);
    out.observed_trace.push_back(current);
    out.iterations = it;
    if (std::abs(current - previous) <= config.em_tol * std::max(1.0, std::abs(previous))) {
      out.converged = true;
      break;
    }
    previous = current;
  }
  out.penalized_observed = out.observed_trace.back();
  out.posterior = e_step(out.params, ds);
  return out;
}

FitResult fit_map_em(const Dataset& ds, const EmConfig& config, const Vector& init_beta_mean,
                     std::span<const CrowdParams> extra_starts) {
  config.validate();
  if (init_beta_mean.size() != ds.k() + 1) throw ValidationError("init_beta_mean must have length k + 1");
  std::vector<CrowdParams> starts;
  starts.reserve(static_cast<std::size_t>(config.restarts) + extra_starts.size());
  for (int r = 0; r < config.restarts; ++r) {
    Rng rng = make_rng(config.seed, Stream::kRestart, static_cast<std::uint64_t>(r));
    NormalSampler normal;
    CrowdParams p{Vector(ds.d()), Vector(ds.k()), Vector(ds.k() + 1)};
    for (Index e = 0; e < ds.d(); ++e) p.alpha(e) = normal(rng);
    for (Index j = 0; j < ds.k(); ++j) p.gamma(j) = normal(rng);
    for (Index j = 0; j <= ds.k(); ++j) p.beta(j) = init_beta_mean(j) + normal(rng);
    starts.push_back(std::move(p));
  }
  for (const auto& s : extra_starts) starts.push_back(s);

  std::vector<std::optional<FitResult>> runs(starts.size());
  std::vector<std::string> failures(starts.size());
  parallel_for(starts.size(), config.jobs, [&](std::size_t s) {
    try {
      runs[s] = run_em(ds, config, starts[s]);
      runs[s]->restart = static_cast<int>(s);
    } catch (const NumericError& e) {
      failures[s] = e.what();
    }
  });

  std::optional<std::size_t> best;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    if (!runs[s]) continue;
    if (!best || runs[s]->penalized_observed > runs[*best]->penalized_observed) best = s;
  }
  if (!best) throw NumericError("all EM restarts failed: " + failures.front());
  return disambiguate_sign(std::move(*runs[*best]), ds);
}

FitResult disambiguate_sign(FitResult result, const Dataset& ds) {
  const Labels majority = majority_vote(ds).labels;
  const Labels plain = classify(result.params, ds.features());
  const Labels negated = classify(result.params.negated(), ds.features());
  const Index agree_plain = (plain.array() == majority.array()).count();
  const Index agree_negated = (negated.array() == majority.array()).count();
  if (agree_negated > agree_plain) {
    result.params = result.params.negated();
    result.posterior = Vector::Ones(result.posterior.size()) - result.posterior;
    result.flipped = !result.flipped;
  }
  return result;
}

double predict_proba(const CrowdParams& params, const Vector& x) {
  if (x.size() != params.gamma.size()) throw ValidationError("feature vector length mismatch");
  return logistic(params.beta(0) + params.beta.tail(x.size()).dot(x));
}

double predict_with_votes(const CrowdParams& params, const Vector& x, const std::map<Index, int>& votes) {
  if (x.size() != params.gamma.size()) throw ValidationError("feature vector length mismatch");
  const double difficulty = params.gamma.dot(x);
  double log_odds = params.beta(0) + params.beta.tail(x.size()).dot(x);
  for (const auto& [expert, y] : votes) {
    if (expert < 0 || expert >= params.alpha.size()) throw ValidationError("vote from unknown expert");
    if (y != 0 && y != 1) throw ValidationError("non-binary vote");
    log_odds += (2.0 * y - 1.0) * (params.alpha(expert) + difficulty);
  }
  return logistic(log_odds);
}

Labels classify_linear(const Vector& beta, const Matrix& features) {
  if (beta.size() != features.cols() + 1) throw ValidationError("coefficient length mismatch");
  const Vector eta = (features * beta.tail(features.cols())).array() + beta(0);
  return (eta.array() >= 0.0).cast<int>();
}

Labels classify(const CrowdParams& params, const Matrix& features) {
  return classify_linear(params.beta, features);
}

}  // namespace crowdsel
