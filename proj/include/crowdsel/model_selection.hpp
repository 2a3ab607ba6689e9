#pragma once

#include <crowdsel/crowd_em.hpp>
#include <crowdsel/data_model.hpp>
#include <crowdsel/simulate.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace crowdsel {

/// Surrogate score: per unit, the fraction of available votes that disagree
/// with the prediction, averaged over units. With complete votes this is
/// (1 / n'd) sum_i sum_j I(z_i != Y_ij).
double surrogate_score(const Labels& predictions, const Dataset& test);

double empirical_risk(const Labels& predictions, const Labels& truth);

/// The surrogate score split against the true labels:
///   s_hat = mean_i (1 - 2 V_i) I(z_i != Z_i)  +  mean_i V_i
/// where V_i is the fraction of unit i's votes that disagree with Z_i.
struct ScoreBreakdown {
  double s_hat = 0.0;
  double weighted_term = 0.0;
  double expert_error_term = 0.0;
};

ScoreBreakdown score_decomposition(const Labels& predictions, const Dataset& test);

struct LambdaScore {
  double lambda = 0.0;
  bool failed = false;
  std::string error;
  double s_hat = 0.0;
  std::optional<double> r_hat;
  Index nnz_gamma = 0;
  Index nnz_beta = 0;
  bool converged = false;
  CrowdParams params;
};

struct MethodScore {
  std::string method;
  double lambda = 0.0;
  double s_hat = 0.0;
  std::optional<double> r_hat;
  bool s_hat_min = false;
  bool r_hat_min = false;
  Vector beta;  // intercept first
};

struct SelectionReport {
  std::vector<LambdaScore> per_lambda;
  std::optional<double> chosen_lambda;
  std::optional<std::size_t> chosen_index;
  std::string chosen_by = "s_hat";
  std::optional<std::size_t> r_hat_index;  // grid minimizer of r_hat when labels exist
  std::vector<MethodScore> methods;
};

// Largest penalized-slope gradient of the intercept-only majority-vote fit:
// at lambda >= lambda_max every slope of that problem is zero.
double lambda_max(const Dataset& ds);

// `count` log-spaced values from lambda_max down to lambda_max * ratio.
std::vector<double> default_grid(const Dataset& ds, int count = 30, double ratio = 1e-3);

// Index of the smallest score; ties go to the earliest entry.
std::size_t argmin_first(std::span<const double> values);

/// Fits MAP-EM at each lambda (grid non-increasing), warm-starting each fit
/// from the previous lambda's winner in addition to the random restarts, and
/// picks the lambda with the smallest surrogate score on `test`. Ties go to
/// the larger lambda. A lambda whose fit fails is recorded and skipped.
SelectionReport select_lambda(const Dataset& train, const Dataset& test, std::span<const double> grid,
                              const EmConfig& config);

struct CvScore {
  double s_hat = 0.0;
  std::optional<double> r_hat;
  std::vector<double> fold_scores;
};

// Fold assignment by seed: a seeded permutation dealt round-robin into folds.
std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed);

// Mean over folds of the surrogate score on the held-out fold, fitting on
// the complement. Every fold uses config.seed for its restarts.
CvScore cross_validated_score(const Dataset& ds, int folds, double lambda, const EmConfig& config);
CvScore cross_validated_score(const Dataset& ds, std::span<const int> fold_of_unit, double lambda,
                              const EmConfig& config);

enum class MethodKind {
  kEm,        // MAP-EM at lambda = 0
  kEmSparse,  // MAP-EM at the surrogate-selected lambda
  kMajority,  // L1 logistic on majority labels, lambda by surrogate score
  kOracle,    // L1 logistic on true labels, lambda by surrogate score
  kConstant,  // predicts a fixed label (reference point)
};

struct MethodSpec {
  MethodKind kind = MethodKind::kEmSparse;
  int constant_label = 1;

  std::string name() const;
  static MethodSpec parse(const std::string& name);
};

struct CompareConfig {
  std::vector<double> grid;  // empty: default_grid(train)
  EmConfig em;
};

// Sets s_hat_min / r_hat_min on the first minimizer of each criterion.
void flag_minimizers(std::vector<MethodScore>& methods);

SelectionReport compare_methods(const Dataset& train, const Dataset& test, std::span<const MethodSpec> methods,
                                const CompareConfig& config);

/// Uniform deviation of the surrogate score from (1 - 2 eps) R + eps over a
/// family of one-feature threshold classifiers, by Monte Carlo.
///
/// The family is `family_size` classifiers I(x_f > t) with t at evenly spaced
/// quantiles of feature f. R(t) and the mean expert error eps come from one
/// large reference sample (eps is exact for constant-error experts). For each
/// n' the sup over the family is averaged over `replications` fresh datasets.
/// The generator is assumed to produce independent units with eps < 1/2;
/// that is the caller's responsibility.
struct DeviationOptions {
  int family_size = 50;
  Index feature = 0;
  Index reference_n = 1'000'000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct DeviationPoint {
  Index n_prime = 0;
  double mean_deviation = 0.0;
  double sd_deviation = 0.0;
};

std::vector<DeviationPoint> theory_check_deviation(const SimulationConfig& generator,
                                                   std::span<const Index> n_prime_list, int replications,
                                                   const DeviationOptions& options = {});

}  // namespace crowdsel
