#include <crowdsel/baselines.hpp>
#include <crowdsel/crowd_em.hpp>

#include <doctest.h>

#include <random>

#include "../support/oracles.hpp"

using namespace crowdsel;

namespace {

CrowdParams random_params(std::mt19937_64& rng, Index d, Index k, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  CrowdParams p{Vector(d), Vector(k), Vector(k + 1)};
  for (Index r = 0; r < d; ++r) p.alpha(r) = normal(rng);
  for (Index j = 0; j < k; ++j) p.gamma(j) = normal(rng);
  for (Index j = 0; j <= k; ++j) p.beta(j) = normal(rng);
  return p;
}

std::vector<int> row_votes(const Dataset& ds, Index i) {
  std::vector<int> v(static_cast<std::size_t>(ds.d()));
  for (Index r = 0; r < ds.d(); ++r) v[static_cast<std::size_t>(r)] = ds.available(i, r) ? ds.vote(i, r) : -1;
  return v;
}

Vector random_posterior(std::mt19937_64& rng, Index n) {
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  Vector z(n);
  for (Index i = 0; i < n; ++i) z(i) = unit(rng);
  return z;
}

}  // namespace

TEST_CASE("expected agreement") {
  CHECK(expected_agreement(1.0, 1) == 1.0);
  CHECK(expected_agreement(1.0, 0) == 0.0);
  CHECK(expected_agreement(0.5, 1) == 0.5);
  CHECK(expected_agreement(0.0, 0) == 1.0);
}

TEST_CASE("complete log posterior") {
  std::mt19937_64 rng(1);
  const Dataset ds = oracle::random_dataset(rng, 7, 3, 2, true, false);
  const CrowdParams zero{Vector::Zero(3), Vector::Zero(2), Vector::Zero(3)};
  const Vector half = Vector::Constant(7, 0.5);
  CHECK(complete_log_posterior(zero, half, ds, 0.0) == doctest::Approx(7 * 3 * std::log(0.5) + 7 * std::log(0.5)));

  const CrowdParams p = random_params(rng, 3, 2);
  Vector z(7);
  double direct = 0.0;
  for (Index i = 0; i < 7; ++i) {
    z(i) = static_cast<double>(i % 2);
    direct += std::log(oracle::joint(p.alpha, p.gamma, p.beta, ds.features().row(i).transpose(), row_votes(ds, i),
                                     static_cast<int>(z(i))));
  }
  CHECK(complete_log_posterior(p, z, ds, 0.0) == doctest::Approx(direct).epsilon(1e-12));

  const double penalty = p.beta.tail(2).cwiseAbs().sum() + p.gamma.cwiseAbs().sum();
  const Vector soft = random_posterior(rng, 7);
  CHECK(complete_log_posterior(p, soft, ds, 2.0) - complete_log_posterior(p, soft, ds, 0.0) ==
        doctest::Approx(-2.0 * penalty).epsilon(1e-12));
}

TEST_CASE("observed log posterior marginalizes the label") {
  std::mt19937_64 rng(2);
  const Dataset ds = oracle::random_dataset(rng, 6, 3, 2, false, false);
  const CrowdParams p = random_params(rng, 3, 2);
  double direct = 0.0;
  for (Index i = 0; i < 6; ++i) {
    const Vector x = ds.features().row(i).transpose();
    direct += std::log(oracle::joint(p.alpha, p.gamma, p.beta, x, row_votes(ds, i), 0) +
                       oracle::joint(p.alpha, p.gamma, p.beta, x, row_votes(ds, i), 1));
  }
  CHECK(observed_log_posterior(p, ds, 0.0) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(observed_log_posterior(p.negated(), ds, 0.0) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("e-step") {
  std::mt19937_64 rng(3);
  const Dataset ds = oracle::random_dataset(rng, 5, 2, 2, false, false);
  CrowdParams p = random_params(rng, 2, 2);
  p.alpha.setZero();
  p.gamma.setZero();
  const Vector z = e_step(p, ds);
  for (Index i = 0; i < 5; ++i) {
    CHECK(z(i) == doctest::Approx(logistic(p.beta(0) + p.beta.tail(2).dot(ds.features().row(i)))).epsilon(1e-15));
  }

  Matrix x = Matrix::Zero(1, 1);
  VoteMatrix v(1, 1);
  v << 1;
  const CrowdParams one{Vector::Constant(1, 10.0), Vector::Zero(1), Vector::Zero(2)};
  CHECK(e_step(one, Dataset(x, v))(0) == doctest::Approx(std::exp(10.0) / (1.0 + std::exp(10.0))).epsilon(1e-14));

  for (int rep = 0; rep < 20; ++rep) {
    const Dataset r = oracle::random_dataset(rng, 4, 3, 2, false, false);
    const CrowdParams q = random_params(rng, 3, 2, 2.0);
    const Vector post = e_step(q, r);
    for (Index i = 0; i < 4; ++i) {
      const double ref = oracle::posterior(q.alpha, q.gamma, q.beta, r.features().row(i).transpose(), row_votes(r, i));
      CHECK(std::abs(post(i) - ref) < 1e-10);
    }
  }
}

TEST_CASE("expert problem layout") {
  Matrix x(1, 2);
  x << 0.3, -0.2;
  VoteMatrix v(1, 2);
  v << 1, 0;
  const Dataset ds(x, v);
  const WeightedProblem pr = build_expert_problem(Vector::Ones(1), ds, 0.0);
  CHECK(pr.size() == 4);
  CHECK(pr.dim() == 4);
  // Vote 0 is (z = 1, y = 1): agreement 1.
  CHECK(pr.weights(0) == 1.0);
  CHECK(pr.weights(2) == 0.0);
  CHECK(pr.responses(0) == 1.0);
  CHECK(pr.responses(2) == 0.0);
  CHECK(pr.penalty_factor(0) == 0.0);
  CHECK(pr.penalty_factor(2) == 1.0);
}

TEST_CASE("truth problem layout") {
  Matrix x(3, 1);
  x << 1, 2, 3;
  VoteMatrix v(3, 1);
  v << 1, 0, 1;
  const Dataset ds(x, v);
  const Vector z{{0.2, 0.7, 1.0}};
  const WeightedProblem pr = build_truth_problem(z, ds, 0.0);
  CHECK(pr.size() == 6);
  CHECK(pr.weights(0) == 0.2);
  CHECK(pr.weights(2) == 1.0);
  CHECK(pr.weights(3) == doctest::Approx(0.8));
  CHECK(pr.weights(5) == 0.0);
  CHECK(pr.responses.head(3) == Vector::Ones(3));
  CHECK(pr.responses.tail(3) == Vector::Zero(3));
}

TEST_CASE("binary soft labels reduce to plain logistic regression") {
  std::mt19937_64 rng(4);
  const Dataset ds = oracle::random_dataset(rng, 40, 3, 2, false, false);
  Vector z(40);
  for (Index i = 0; i < 40; ++i) z(i) = (i * 7) % 3 == 0 ? 1.0 : 0.0;

  Matrix tx(40, 3);
  tx << Vector::Ones(40), ds.features();
  const Vector truth_ref = oracle::newton_logistic(tx, Vector::Ones(40), z);
  const Coefficients truth = fit(build_truth_problem(z, ds, 0.0), SolverConfig{.tol = 1e-11});
  CHECK((truth.values - truth_ref).lpNorm<Eigen::Infinity>() < 1e-6);

  std::vector<std::pair<Index, Index>> cells;
  for (Index i = 0; i < 40; ++i) {
    for (Index r = 0; r < 3; ++r) {
      if (ds.available(i, r)) cells.emplace_back(i, r);
    }
  }
  const Index m = static_cast<Index>(cells.size());
  Matrix ex = Matrix::Zero(m, 5);
  Vector agree(m);
  for (Index c = 0; c < m; ++c) {
    const auto [i, r] = cells[static_cast<std::size_t>(c)];
    ex(c, r) = 1.0;
    ex.row(c).tail(2) = ds.features().row(i);
    agree(c) = expected_agreement(z(i), ds.vote(i, r));
  }
  const Vector expert_ref = oracle::newton_logistic(ex, Vector::Ones(m), agree);
  const Coefficients expert = fit(build_expert_problem(z, ds, 0.0), SolverConfig{.tol = 1e-11});
  CHECK((expert.values - expert_ref).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("grouped and dense M-step problems agree") {
  std::mt19937_64 rng(5);
  const Dataset ds = oracle::random_dataset(rng, 30, 3, 4, false, false);
  const Vector z = random_posterior(rng, 30);
  for (double lambda : {0.0, 0.5}) {
    const SolverConfig cfg{.tol = 1e-11};
    const Coefficients dense = fit(build_expert_problem(z, ds, lambda), cfg);
    const Coefficients grouped = fit(grouped_expert_problem(z, ds, lambda), cfg, Vector::Zero(7));
    CHECK((dense.values - grouped.values).lpNorm<Eigen::Infinity>() < 1e-7);
    const Coefficients dt = fit(build_truth_problem(z, ds, lambda), cfg);
    const Coefficients gt = fit(grouped_truth_problem(z, ds, lambda), cfg, Vector::Zero(5));
    CHECK((dt.values - gt.values).lpNorm<Eigen::Infinity>() < 1e-7);
  }
}

TEST_CASE("m-step maximizes the complete-data objective") {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const Dataset ds = oracle::random_dataset(rng, 25, 3, 2, false, false);
    const CrowdParams old = random_params(rng, 3, 2);
    const Vector z = e_step(old, ds);
    const CrowdParams next = m_step(z, ds, 0.0, SolverConfig{});
    CHECK(complete_log_posterior(next, z, ds, 0.0) >= complete_log_posterior(old, z, ds, 0.0) - 1e-10);
  }

  const Dataset ds = oracle::random_dataset(rng, 25, 3, 2, false, false);
  const CrowdParams huge = m_step(random_posterior(rng, 25), ds, 1e9, SolverConfig{});
  CHECK(huge.gamma.cwiseAbs().maxCoeff() == 0.0);
  CHECK(huge.beta.tail(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(huge.alpha.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("iteration accounting") {
  std::mt19937_64 rng(7);
  const Dataset ds = oracle::random_dataset(rng, 20, 3, 2, true, false);
  EmConfig cfg;
  cfg.restarts = 1;
  cfg.max_em_iters = 1;
  const FitResult r = fit_map_em(ds, cfg, Vector::Zero(3));
  CHECK(r.iterations == 1);
  CHECK(r.objective_trace.size() == 1);
  CHECK(r.observed_trace.size() == 1);
}

TEST_CASE("EM ascends and is reproducible") {
  std::mt19937_64 rng(8);
  const Dataset ds = oracle::random_dataset(rng, 40, 3, 3, false, false);
  for (double lambda : {0.0, 1.0}) {
    EmConfig cfg;
    cfg.lambda = lambda;
    cfg.restarts = 3;
    cfg.seed = 42;
    const FitResult a = fit_map_em(ds, cfg, Vector::Zero(4));
    for (std::size_t t = 1; t < a.observed_trace.size(); ++t) {
      CHECK(a.observed_trace[t] >= a.observed_trace[t - 1] - 1e-8);
    }
    cfg.jobs = 3;
    const FitResult b = fit_map_em(ds, cfg, Vector::Zero(4));
    CHECK(a.params.beta == b.params.beta);
    CHECK(a.params.alpha == b.params.alpha);
    CHECK(a.restart == b.restart);
  }
}

TEST_CASE("sign disambiguation") {
  Matrix x(6, 1);
  x << -2, -1, -0.5, 0.5, 1, 2;
  VoteMatrix v(6, 3);
  for (Index i = 0; i < 6; ++i) {
    for (Index r = 0; r < 3; ++r) v(i, r) = static_cast<std::int8_t>(x(i, 0) > 0 ? 1 : 0);
  }
  const Dataset ds(x, v);
  FitResult fr;
  fr.params = {Vector::Constant(3, 2.0), Vector::Zero(1), Vector{{0.0, 3.0}}};
  fr.posterior = e_step(fr.params, ds);
  const FitResult same = disambiguate_sign(fr, ds);
  CHECK_FALSE(same.flipped);
  CHECK(same.params.beta == fr.params.beta);

  FitResult neg = fr;
  neg.params = fr.params.negated();
  neg.posterior = e_step(neg.params, ds);
  const FitResult back = disambiguate_sign(neg, ds);
  CHECK(back.flipped);
  CHECK(back.params.beta == fr.params.beta);
  CHECK(back.params.alpha == fr.params.alpha);
  CHECK((back.posterior - fr.posterior).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prediction") {
  const CrowdParams flat{Vector::Zero(2), Vector::Zero(1), Vector::Zero(2)};
  const Vector x = Vector::Constant(1, 0.7);
  CHECK(predict_proba(flat, x) == 0.5);
  const CrowdParams tilted{Vector::Zero(2), Vector::Zero(1), Vector{{1.0, 0.0}}};
  CHECK(predict_proba(tilted, x) == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(predict_with_votes(tilted, x, {}) == predict_proba(tilted, x));

  const CrowdParams sure{Vector{{0.0, 30.0}}, Vector::Zero(1), Vector::Zero(2)};
  CHECK(predict_with_votes(sure, x, {{1, 0}}) < 1e-9);
  CHECK(predict_with_votes(sure, x, {{1, 1}}) > 1.0 - 1e-9);
  CHECK_THROWS_AS(predict_with_votes(sure, x, {{5, 1}}), ValidationError);

  Matrix f(2, 1);
  f << -1, 1;
  CHECK(classify_linear(Vector{{0.0, 1.0}}, f) == Labels{{0, 1}});
}
