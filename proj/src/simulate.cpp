#include <crowdsel/baselines.hpp>
#include <crowdsel/simulate.hpp>
#include <crowdsel/wl1_logreg.hpp>

#include <algorithm>
#include <string>

namespace crowdsel {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Index scheme_experts(const VoteScheme& scheme) {
  return std::visit(Overloaded{
                        [](const ConstantError& s) { return static_cast<Index>(s.epsilon.size()); },
                        [](const ModelBased& s) { return s.alpha.size(); },
                        [](const ModelBasedSquared& s) { return s.alpha.size(); },
                        [](const IndependentCovariate& s) { return s.alpha.size(); },
                    },
                    scheme);
}

Matrix draw_features(const SimulationConfig& config, Index n, Rng& rng) {
  const FeatureSpec& spec = config.feature_spec;
  Matrix x(n, spec.total());
  if (spec.informative() > 0) x.leftCols(spec.informative()) = sample_mvnormal(spec.mean, spec.covariance, n, rng);
  NormalSampler normal;
  for (Index i = 0; i < n; ++i) {
    for (Index j = spec.informative(); j < spec.total(); ++j) x(i, j) = normal(rng);
  }
  return x;
}

Vector truth_probabilities(const Vector& beta, const Matrix& x) {
  const Index used = beta.size() - 1;
  const Vector eta = (x.leftCols(used) * beta.tail(used)).array() + beta(0);
  return eta.unaryExpr([](double v) { return logistic(v); });
}

Matrix model_flip(const Vector& alpha, const Vector& gamma, const Matrix& covariates) {
  if (gamma.size() > covariates.cols()) throw ValidationError("gamma is longer than the feature count");
  const Vector difficulty = covariates.leftCols(gamma.size()) * gamma;
  Matrix p(covariates.rows(), alpha.size());
  for (Index i = 0; i < p.rows(); ++i) {
    for (Index r = 0; r < p.cols(); ++r) p(i, r) = logistic(-(alpha(r) + difficulty(i)));
  }
  return p;
}

}  // namespace

Index SimulationConfig::expert_count() const { return scheme_experts(vote_scheme); }

Index SimulationConfig::feature_count() const {
  return fixed_features ? fixed_features->cols() : feature_spec.total();
}

void SimulationConfig::validate() const {
  const Index d = expert_count();
  if (d < 1) throw ValidationError("vote scheme defines no experts");
  if (fixed_features) {
    if (fixed_features->rows() == 0) throw ValidationError("fixed features are empty");
    if (fixed_labels && fixed_labels->size() != fixed_features->rows()) {
      throw ValidationError("fixed labels do not match the fixed feature rows");
    }
  } else {
    if (n < 1) throw ValidationError("n must be >= 1");
    if (fixed_labels) throw ValidationError("fixed labels require fixed features");
    const FeatureSpec& fs = feature_spec;
    if (fs.covariance.rows() != fs.mean.size() || fs.covariance.cols() != fs.mean.size()) {
      throw ValidationError("covariance must be " + std::to_string(fs.mean.size()) + "x" +
                            std::to_string(fs.mean.size()));
    }
    if (!fs.covariance.isApprox(fs.covariance.transpose(), 1e-12)) {
      throw ValidationError("covariance is not symmetric");
    }
    if (fs.noise_covariates < 0) throw ValidationError("noise covariate count must be >= 0");
  }
  const Index k = feature_count();
  if (!fixed_labels) {
    const Index informative = fixed_features ? k : feature_spec.informative();
    if (beta_true.size() != informative + 1 && beta_true.size() != k + 1) {
      throw ValidationError("beta_true must have length " + std::to_string(informative + 1) +
                            (informative != k ? " or " + std::to_string(k + 1) : std::string()));
    }
  }
  std::visit(Overloaded{
                 [](const ConstantError& s) {
                   for (double e : s.epsilon) {
                     if (!(e >= 0.0 && e <= 1.0)) throw ValidationError("error probabilities must lie in [0, 1]");
                   }
                 },
                 [&](const auto& s) requires(!std::is_same_v<std::decay_t<decltype(s)>, IndependentCovariate>) {
                   const Index expected = fixed_features ? k : feature_spec.informative();
                   if (fixed_features ? s.gamma.size() > expected : s.gamma.size() != expected) {
                     throw ValidationError("gamma has length " + std::to_string(s.gamma.size()) +
                                           " but there are " + std::to_string(expected) +
                                           " informative covariates");
                   }
                 },
                 [&](const IndependentCovariate& s) {
                   if (s.first_column < 0 || s.first_column + s.alpha.size() > k) {
                     throw ValidationError("per-expert covariates fall outside the feature columns");
                   }
                 },
             },
             vote_scheme);
  if (keep_experts && (*keep_experts < 1 || *keep_experts > d)) {
    throw ValidationError("keep_experts must lie in [1, " + std::to_string(d) + "]");
  }
}

Matrix sample_mvnormal(const Vector& mean, const Matrix& covariance, Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::kFeatures);
  return sample_mvnormal(mean, covariance, n, rng);
}

Matrix sample_mvnormal(const Vector& mean, const Matrix& covariance, Index n, Rng& rng) {
  const Index m = mean.size();
  if (covariance.rows() != m || covariance.cols() != m) throw ValidationError("covariance shape mismatch");
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) throw ValidationError("covariance is not positive definite");
  const Matrix lower = llt.matrixL();
  Matrix z(n, m);
  NormalSampler normal;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) z(i, j) = normal(rng);
  }
  Matrix x = z * lower.transpose();
  x.rowwise() += mean.transpose();
  return x;
}

Matrix flip_probabilities(const VoteScheme& scheme, const Matrix& features) {
  const Index n = features.rows();
  return std::visit(Overloaded{
                        [&](const ConstantError& s) {
                          Matrix p(n, static_cast<Index>(s.epsilon.size()));
                          for (Index r = 0; r < p.cols(); ++r) p.col(r).setConstant(s.epsilon[static_cast<std::size_t>(r)]);
                          return p;
                        },
                        [&](const ModelBased& s) { return model_flip(s.alpha, s.gamma, features); },
                        [&](const ModelBasedSquared& s) {
                          const Matrix squared = features.leftCols(s.gamma.size()).array().square();
                          return model_flip(s.alpha, s.gamma, squared);
                        },
                        [&](const IndependentCovariate& s) {
                          Matrix p(n, s.alpha.size());
                          for (Index r = 0; r < p.cols(); ++r) {
                            for (Index i = 0; i < n; ++i) {
                              double u = features(i, s.first_column + r);
                              if (s.squared) u *= u;
                              p(i, r) = logistic(-(s.alpha(r) + s.slope * u));
                            }
                          }
                          return p;
                        },
                    },
                    scheme);
}

std::optional<double> known_mean_expert_error(const VoteScheme& scheme) {
  if (const auto* s = std::get_if<ConstantError>(&scheme)) {
    double sum = 0.0;
    for (double e : s->epsilon) sum += e;
    return sum / static_cast<double>(s->epsilon.size());
  }
  return std::nullopt;
}

Scenario generate(const SimulationConfig& config) {
  config.validate();
  Matrix x;
  if (config.fixed_features) {
    x = *config.fixed_features;
  } else {
    Rng rng = make_rng(config.seed, Stream::kFeatures);
    x = draw_features(config, config.n, rng);
  }
  const Index n = x.rows();

  Labels z(n);
  if (config.fixed_labels) {
    z = *config.fixed_labels;
  } else {
    const Vector p = truth_probabilities(config.beta_true, x);
    Rng rng = make_rng(config.seed, Stream::kLabels);
    for (Index i = 0; i < n; ++i) z(i) = uniform01(rng) < p(i) ? 1 : 0;
  }

  const Matrix flip = flip_probabilities(config.vote_scheme, x);
  const Index d = flip.cols();
  VoteMatrix votes(n, d);
  {
    Rng rng = make_rng(config.vote_seed.value_or(config.seed), Stream::kVotes);
    for (Index i = 0; i < n; ++i) {
      for (Index r = 0; r < d; ++r) {
        const bool wrong = uniform01(rng) < flip(i, r);
        votes(i, r) = static_cast<std::int8_t>(wrong ? 1 - z(i) : z(i));
      }
    }
  }

  Dataset full(x, votes, z);
  if (config.labels_from_majority) full = full.with_true_labels(majority_vote(full).labels);
  if (config.keep_experts && *config.keep_experts < d) {
    Rng rng = make_rng(config.vote_seed.value_or(config.seed), Stream::kSubsample);
    std::vector<Index> experts(static_cast<std::size_t>(d));
    for (Index r = 0; r < d; ++r) experts[static_cast<std::size_t>(r)] = r;
    portable_shuffle(experts.begin(), experts.end(), rng);
    experts.resize(static_cast<std::size_t>(*config.keep_experts));
    std::sort(experts.begin(), experts.end());
    VoteMatrix kept(n, *config.keep_experts);
    for (std::size_t c = 0; c < experts.size(); ++c) kept.col(static_cast<Index>(c)) = full.votes().col(experts[c]);
    full = Dataset(full.features(), std::move(kept), full.true_labels());
  }
  return Scenario{std::move(full), config, std::nullopt};
}

double estimate_bayes_risk(const SimulationConfig& config, Index mc_n) {
  config.validate();
  if (config.fixed_features) throw ValidationError("Bayes risk needs a feature generator, not fixed features");
  if (mc_n < 1) throw ValidationError("mc_n must be >= 1");
  Rng rng = make_rng(config.seed, Stream::kBayes);
  constexpr Index kChunk = 65536;
  double total = 0.0;
  for (Index done = 0; done < mc_n; done += kChunk) {
    const Index m = std::min(kChunk, mc_n - done);
    const Vector p = truth_probabilities(config.beta_true, draw_features(config, m, rng));
    total += p.binaryExpr(Vector::Ones(m) - p, [](double a, double b) { return std::min(a, b); }).sum();
  }
  return total / static_cast<double>(mc_n);
}

SimulationConfig benchmark_config(BenchmarkVotes votes, Index n, std::uint64_t seed) {
  SimulationConfig c;
  c.n = n;
  c.seed = seed;
  c.feature_spec.mean = (Vector(5) << 1, 2, 3, 4, 5).finished();
  c.feature_spec.covariance = (Matrix(5, 5) << 0.50, 0.10, 0.25, 0.10, 0.10,  //
                               0.10, 0.50, 0.10, 0.05, 0.04,                   //
                               0.25, 0.10, 0.80, 0.01, 0.10,                   //
                               0.10, 0.05, 0.01, 0.40, 0.10,                   //
                               0.10, 0.04, 0.10, 0.10, 0.50)
                                  .finished();
  c.feature_spec.noise_covariates = 50;
  c.beta_true = (Vector(6) << -0.1, 1, 0.25, 0.24, -0.3, -0.2).finished();
  switch (votes) {
    case BenchmarkVotes::kConstantError:
      c.vote_scheme = ConstantError{{0.5, 0.15, 0.47}};
      break;
    case BenchmarkVotes::kModelBased:
      c.vote_scheme = ModelBased{(Vector(3) << 0, 0.75, -0.1).finished(),
                                 (Vector(5) << 0.1, 0.2, -0.08, 0.025, -0.065).finished()};
      break;
    case BenchmarkVotes::kModelBasedSquared:
      c.vote_scheme = ModelBasedSquared{(Vector(3) << 0, 0.65, -0.12).finished(),
                                        (Vector(5) << 0.05, 0.05, -0.1, -0.1, 0).finished()};
      break;
  }
  return c;
}

}  // namespace crowdsel
