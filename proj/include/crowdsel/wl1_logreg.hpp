#pragma once

#include <crowdsel/common.hpp>

#include <cmath>
#include <vector>

namespace crowdsel {

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

/// Weighted L1-regularized binary logistic regression:
///
///   maximize  sum_i w_i [y_i log mu_i + (1 - y_i) log(1 - mu_i)] - lambda sum_j pf_j |b_j|
///   with      mu_i = logistic(rows_i . b).
///
/// Intercepts are ordinary columns of `rows` with penalty_factor 0.
struct WeightedProblem {
  Matrix rows;
  Vector weights;
  Vector responses;  // 0 or 1
  Vector penalty_factor;
  double lambda = 0.0;

  Index size() const { return rows.rows(); }
  Index dim() const { return rows.cols(); }
  void validate() const;
};

/// The same objective for designs whose row r is [e_{group_r}, x_{unit_r}]: a
/// one-hot group intercept followed by the feature row of a unit. Responses
/// may be fractional; a response y with weight w stands for the row pair
/// (1, w y) and (0, w (1 - y)). `features` is not owned and must be finite
/// (validate() does not rescan it).
struct GroupedProblem {
  const Matrix* features = nullptr;
  Index groups = 0;
  std::vector<Index> unit;
  std::vector<Index> group;
  Vector weights;
  Vector responses;  // in [0, 1]
  Vector penalty_factor;  // groups + features->cols()
  double lambda = 0.0;

  Index size() const { return static_cast<Index>(unit.size()); }
  Index dim() const { return groups + (features ? features->cols() : 0); }
  void validate() const;
  WeightedProblem expanded() const;  // the equivalent dense problem
};

struct SolverConfig {
  double tol = 1e-7;     // max coefficient change per outer iteration
  int max_outer = 100;   // IRLS iterations
  int max_inner = 1000;  // coordinate-descent sweeps per outer iteration
  double min_working_weight = 1e-5;

  void validate() const;
};

struct Coefficients {
  Vector values;
  bool converged = false;
  int outer_iterations = 0;
  std::vector<double> objective_trace;  // penalized objective after each accepted outer step
};

Coefficients fit(const WeightedProblem& problem, const SolverConfig& config = {});
// Warm-started from `start`.
Coefficients fit(const WeightedProblem& problem, const SolverConfig& config, const Vector& start);

// Curvature carried between fits of closely related problems (successive
// M-steps). The first quadratic model reuses it; it is rebuilt whenever a
// step has to backtrack or contracts too slowly, so it affects speed only.
struct CurvatureCache {
  Matrix hessian;
};

Coefficients fit(const GroupedProblem& problem, const SolverConfig& config, const Vector& start,
                 CurvatureCache* cache = nullptr);

// Penalized objective as maximized by fit. Fitted probabilities are clamped to
// [1e-12, 1 - 1e-12] inside the log terms.
double penalized_objective(const WeightedProblem& problem, const Vector& coefs);

double penalized_objective(const GroupedProblem& problem, const Vector& coefs);

// Gradient of the weighted log-likelihood (no penalty).
Vector log_likelihood_gradient(const WeightedProblem& problem, const Vector& coefs);

// Largest violation of the subgradient optimality conditions.
double kkt_violation(const WeightedProblem& problem, const Vector& coefs);
inline double kkt_violation(const WeightedProblem& problem, const Coefficients& coefs) {
  return kkt_violation(problem, coefs.values);
}

}  // namespace crowdsel
