#include <crowdsel/baselines.hpp>

namespace crowdsel {

MajorityLabels majority_vote(const Dataset& ds) {
  MajorityLabels out;
  out.labels.resize(ds.n());
  for (Index i = 0; i < ds.n(); ++i) {
    Index ones = 0;
    Index cast = 0;
    for (Index r = 0; r < ds.d(); ++r) {
      if (!ds.available(i, r)) continue;
      ++cast;
      ones += ds.vote(i, r);
    }
    if (2 * ones == cast) ++out.tie_count;
    out.labels(i) = 2 * ones >= cast ? 1 : 0;
  }
  return out;
}

WeightedProblem labels_problem(const Matrix& features, const Labels& labels, double lambda) {
  if (labels.size() != features.rows()) throw ValidationError("label count does not match feature rows");
  WeightedProblem p;
  p.rows.resize(features.rows(), features.cols() + 1);
  p.rows.col(0).setOnes();
  p.rows.rightCols(features.cols()) = features;
  p.weights = Vector::Ones(features.rows());
  p.responses = labels.cast<double>();
  p.penalty_factor = Vector::Ones(features.cols() + 1);
  p.penalty_factor(0) = 0.0;
  p.lambda = lambda;
  return p;
}

Coefficients majority_logistic(const Dataset& ds, double lambda, const SolverConfig& solver) {
  return fit(labels_problem(ds.features(), majority_vote(ds).labels, lambda), solver);
}

Coefficients oracle_logistic(const Dataset& ds, double lambda, const SolverConfig& solver) {
  if (!ds.has_true_labels()) throw ValidationError("oracle fit requires true labels");
  return fit(labels_problem(ds.features(), *ds.true_labels(), lambda), solver);
}

}  // namespace crowdsel
