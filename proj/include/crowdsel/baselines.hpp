#pragma once

#include <crowdsel/data_model.hpp>
#include <crowdsel/wl1_logreg.hpp>

namespace crowdsel {

struct MajorityLabels {
  Labels labels;
  Index tie_count = 0;
};

// Label 1 iff the mean available vote exceeds 1/2; exact ties resolve to 1.
MajorityLabels majority_vote(const Dataset& ds);

// Unit-weight problem on (features, labels) with an unpenalized intercept.
WeightedProblem labels_problem(const Matrix& features, const Labels& labels, double lambda);

// Coefficient layout: intercept first, then one slope per feature.
Coefficients majority_logistic(const Dataset& ds, double lambda, const SolverConfig& solver = {});
Coefficients oracle_logistic(const Dataset& ds, double lambda, const SolverConfig& solver = {});

}  // namespace crowdsel
