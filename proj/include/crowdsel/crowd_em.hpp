#pragma once

#include <crowdsel/data_model.hpp>
#include <crowdsel/wl1_logreg.hpp>

#include <map>
#include <span>
#include <vector>

namespace crowdsel {

/// Parameters of the latent-label model.
///
///   P(Z_i = 1 | x_i)             = logistic(beta_0 + beta . x_i)
///   P(Y_ik != Z_i | Z_i, x_i)    = 1 / (1 + exp(alpha_k + gamma . x_i))
///
/// gamma is shared by all experts; alpha_k is a per-expert accuracy offset.
struct CrowdParams {
  Vector alpha;  // d
  Vector gamma;  // k
  Vector beta;   // k + 1, intercept first

  CrowdParams negated() const { return {-alpha, -gamma, -beta}; }
  Index nonzero_gamma() const;
  Index nonzero_beta() const;  // slopes only
};

struct EmConfig {
  double lambda = 0.0;
  int restarts = 30;
  std::uint64_t seed = 0;
  double em_tol = 1e-6;  // relative change of the penalized observed objective
  int max_em_iters = 200;
  // M-step solver. IRLS is capped at 3 warm-started iterations, so the M-step
  // is partial; each accepted iteration still raises the expected
  // complete-data objective, which is all EM ascent needs.
  SolverConfig solver{.max_outer = 3};
  int jobs = 1;

  void validate() const;
};

struct FitResult {
  CrowdParams params;
  Vector posterior;  // E[Z_i | Y, X] under params
  // Expected penalized complete-data log-likelihood plus posterior entropy,
  // evaluated after each M-step of the winning restart. This lower bound on
  // the penalized observed objective is what EM ascends.
  std::vector<double> objective_trace;
  // Penalized observed-data log-likelihood after each M-step.
  std::vector<double> observed_trace;
  double penalized_observed = 0.0;
  bool flipped = false;
  bool converged = false;
  int restart = 0;     // index of the winning start
  int iterations = 0;  // EM iterations of the winning start
};

// 1 + 2zy - z - y: the expected agreement between a soft label and a vote.
inline double expected_agreement(double z, int y) { return 1.0 + 2.0 * z * y - z - y; }

// Linear predictor alpha_k + gamma . x_i for every unit (without alpha).
Vector difficulty_scores(const CrowdParams& params, const Matrix& features);
Vector truth_scores(const CrowdParams& params, const Matrix& features);

// g(theta, z): complete-data log-likelihood, linear in fractional z, minus
// lambda (sum |beta_1..k| + sum |gamma|).
double complete_log_posterior(const CrowdParams& params, const Vector& z, const Dataset& ds, double lambda);

// log P(Y | X) minus the same penalty, marginalizing Z per unit.
double observed_log_posterior(const CrowdParams& params, const Dataset& ds, double lambda);

Vector e_step(const CrowdParams& params, const Dataset& ds);

// Rows: every available vote (i, k) as (weight d_ik, response 1), then the
// same votes as (weight 1 - d_ik, response 0). Columns: d expert indicators
// (unpenalized) followed by the k features.
WeightedProblem build_expert_problem(const Vector& posterior, const Dataset& ds, double lambda);

// Rows: (weight z_i, response 1) for every unit, then (1 - z_i, response 0).
// Columns: intercept (unpenalized) followed by the k features.
WeightedProblem build_truth_problem(const Vector& posterior, const Dataset& ds, double lambda);

// The same two problems in grouped form (one row per vote, resp. per unit,
// with the soft label as a fractional response); m_step fits these. They
// reference ds.features().
GroupedProblem grouped_expert_problem(const Vector& posterior, const Dataset& ds, double lambda);
GroupedProblem grouped_truth_problem(const Vector& posterior, const Dataset& ds, double lambda);

CrowdParams m_step(const Vector& posterior, const Dataset& ds, double lambda, const SolverConfig& solver);
// Warm-started from `start`.
CrowdParams m_step(const Vector& posterior, const Dataset& ds, double lambda, const SolverConfig& solver,
                   const CrowdParams& start);

// Curvature reused across the M-steps of one EM run.
struct MStepCache {
  CurvatureCache expert;
  CurvatureCache truth;
};
CrowdParams m_step(const Vector& posterior, const Dataset& ds, double lambda, const SolverConfig& solver,
                   const CrowdParams& start, MStepCache* cache);

// One EM run from a given start, without sign disambiguation.
FitResult run_em(const Dataset& ds, const EmConfig& config, CrowdParams start);

// MAP-EM with config.restarts random starts (alpha, gamma ~ N(0, 1);
// beta ~ N(init_beta_mean, 1)) plus any caller-supplied starts, keeping the
// best penalized observed objective (ties: lowest index, random starts first),
// then disambiguating the sign.
FitResult fit_map_em(const Dataset& ds, const EmConfig& config, const Vector& init_beta_mean,
                     std::span<const CrowdParams> extra_starts = {});

// Chooses between theta and -theta by agreement with the majority vote.
FitResult disambiguate_sign(FitResult result, const Dataset& ds);

double predict_proba(const CrowdParams& params, const Vector& x);
// Posterior of Z for a new unit given whichever experts voted on it
// (expert index -> 0/1).
double predict_with_votes(const CrowdParams& params, const Vector& x, const std::map<Index, int>& votes);
Labels classify(const CrowdParams& params, const Matrix& features);

// 1 where beta_0 + beta . x >= 0, i.e. predicted probability >= 0.5.
Labels classify_linear(const Vector& beta, const Matrix& features);

}  // namespace crowdsel
