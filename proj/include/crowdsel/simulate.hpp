#pragma once

#include <crowdsel/data_model.hpp>
#include <crowdsel/random.hpp>

#include <optional>
#include <variant>
#include <vector>

namespace crowdsel {

// Informative multivariate-normal block followed by independent standard
// normal covariates that carry no signal.
struct FeatureSpec {
  Vector mean;
  Matrix covariance;
  Index noise_covariates = 0;

  Index informative() const { return mean.size(); }
  Index total() const { return mean.size() + noise_covariates; }
};

// Expert r flips the true label with probability epsilon[r], independently of x.
struct ConstantError {
  std::vector<double> epsilon;
};

// Expert r flips with probability 1 / (1 + exp(alpha_r + gamma . x)), where x
// is the first |gamma| feature columns.
struct ModelBased {
  Vector alpha;
  Vector gamma;
};

// As ModelBased, but the flip probability sees the squared covariates while Z
// still depends on the raw ones.
struct ModelBasedSquared {
  Vector alpha;
  Vector gamma;
};

// Expert r flips with probability 1 / (1 + exp(alpha_r + slope * u_r)) where
// u_r is feature column first_column + r (squared when `squared`). Each expert
// looks at its own covariate, so expert errors are mutually independent while
// still correlated with anything else those covariates drive.
struct IndependentCovariate {
  Vector alpha;
  double slope = 0.0;
  Index first_column = 0;
  bool squared = false;
};

using VoteScheme = std::variant<ConstantError, ModelBased, ModelBasedSquared, IndependentCovariate>;

struct SimulationConfig {
  Index n = 0;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> vote_seed;  // defaults to seed
  FeatureSpec feature_spec;
  Vector beta_true;  // intercept first; slopes for the informative block (or all columns)
  VoteScheme vote_scheme;

  // Real-data mode: features (and optionally labels) are supplied and only
  // the votes are simulated.
  std::optional<Matrix> fixed_features;
  std::optional<Labels> fixed_labels;

  // After voting: take the majority over all simulated experts as the truth,
  // and/or keep a random subset of the experts as the observed votes.
  bool labels_from_majority = false;
  std::optional<Index> keep_experts;

  Index expert_count() const;  // before subsetting
  Index feature_count() const;
  void validate() const;
};

struct Scenario {
  Dataset dataset;
  SimulationConfig generator;
  std::optional<double> bayes_risk;
};

// Rows are mean + L z with L the lower Cholesky factor and z standard normal.
Matrix sample_mvnormal(const Vector& mean, const Matrix& covariance, Index n, std::uint64_t seed);
Matrix sample_mvnormal(const Vector& mean, const Matrix& covariance, Index n, Rng& rng);

Scenario generate(const SimulationConfig& config);

// Monte-Carlo mean of min(p, 1 - p), p = logistic(beta_0 + beta . x), over
// mc_n fresh feature draws.
double estimate_bayes_risk(const SimulationConfig& config, Index mc_n);

// Per-expert flip probabilities on the given features (n x d).
Matrix flip_probabilities(const VoteScheme& scheme, const Matrix& features);

// Mean expert error when it does not depend on the features.
std::optional<double> known_mean_expert_error(const VoteScheme& scheme);

enum class BenchmarkVotes { kConstantError, kModelBased, kModelBasedSquared };

// The correlated five-covariate design with 50 noise covariates:
// mean (1..5), the fixed 5x5 covariance, beta = (-0.1, 1, 0.25, 0.24, -0.3, -0.2),
// with one of the three vote regimes.
SimulationConfig benchmark_config(BenchmarkVotes votes, Index n, std::uint64_t seed);

}  // namespace crowdsel
