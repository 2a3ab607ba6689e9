#include <crowdsel/wl1_logreg.hpp>

#include <algorithm>
#include <cstring>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_map>

namespace crowdsel {

namespace {

constexpr double kProbClamp = 1e-12;
// Rebuild the Hessian unless the last step shrank the change at least this much.
constexpr double kContract = 0.25;
const double kLogClamp = std::log(kProbClamp);

// Fitting data shared by both design kinds. Responses are fractions in
// [0, 1]; the log-likelihood is linear in the response, so merging rows with
// identical design into their total weight and weighted mean response leaves
// the objective unchanged.
struct Fitting {
  Vector weight;
  Vector response;
  Vector threshold;  // lambda * penalty_factor
};

struct DenseDesign {
  Matrix x;

  Index rows() const { return x.rows(); }
  Index cols() const { return x.cols(); }
  Vector multiply(const Vector& b) const { return x * b; }
  Vector transpose_multiply(const Vector& v) const { return x.transpose() * v; }
  Matrix gram(const Vector& w) const {
    const Matrix scaled = x.array().colwise() * w.array().sqrt();
    Matrix lower = Matrix::Zero(x.cols(), x.cols());
    lower.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
    return lower.selfadjointView<Eigen::Lower>();
  }
};

struct GroupedDesign {
  const Matrix* features = nullptr;
  Index groups = 0;
  std::vector<Index> unit;
  std::vector<Index> group;

  Index rows() const { return static_cast<Index>(unit.size()); }
  Index cols() const { return groups + features->cols(); }

  Vector per_unit(const Vector& v) const {
    Vector s = Vector::Zero(features->rows());
    for (std::size_t r = 0; r < unit.size(); ++r) s(unit[r]) += v(static_cast<Index>(r));
    return s;
  }

  Vector multiply(const Vector& b) const {
    const Vector shared = *features * b.tail(features->cols());
    Vector eta(rows());
    for (std::size_t r = 0; r < unit.size(); ++r) eta(static_cast<Index>(r)) = b(group[r]) + shared(unit[r]);
    return eta;
  }

  Vector transpose_multiply(const Vector& v) const {
    Vector out(cols());
    out.head(groups).setZero();
    for (std::size_t r = 0; r < group.size(); ++r) out(group[r]) += v(static_cast<Index>(r));
    out.tail(features->cols()) = features->transpose() * per_unit(v);
    return out;
  }

  Matrix gram(const Vector& w) const {
    const Index k = features->cols();
    Matrix h = Matrix::Zero(cols(), cols());
    const Vector s = per_unit(w);
    const Matrix scaled = features->array().colwise() * s.array().sqrt();
    Matrix lower = Matrix::Zero(k, k);
    lower.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
    h.bottomRightCorner(k, k) = lower.selfadjointView<Eigen::Lower>();
    for (std::size_t r = 0; r < unit.size(); ++r) {
      const double wr = w(static_cast<Index>(r));
      h(group[r], group[r]) += wr;
      h.block(group[r], groups, 1, k) += wr * features->row(unit[r]);
    }
    h.bottomLeftCorner(k, groups) = h.topRightCorner(groups, k).transpose();
    return h;
  }
};

std::size_t hash_row(const Matrix& x, Index i) {
  std::size_t h = 1469598103934665603ULL;
  for (Index j = 0; j < x.cols(); ++j) {
    double v = x(i, j);
    if (v == 0.0) v = 0.0;  // fold -0.0
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h ^= std::hash<std::uint64_t>{}(bits) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

// Accumulates weight and weighted response into merged slots.
struct Merger {
  std::vector<double> weight;
  std::vector<double> weighted_response;

  std::size_t add(std::size_t slot, double w, double y) {
    if (slot == weight.size()) {
      weight.push_back(0.0);
      weighted_response.push_back(0.0);
    }
    weight[slot] += w;
    weighted_response[slot] += w * y;
    return slot;
  }

  Fitting finish(const Vector& threshold) const {
    Fitting f;
    const auto m = static_cast<Index>(weight.size());
    f.weight.resize(m);
    f.response.resize(m);
    for (Index u = 0; u < m; ++u) {
      const auto s = static_cast<std::size_t>(u);
      f.weight(u) = weight[s];
      f.response(u) = std::clamp(weighted_response[s] / weight[s], 0.0, 1.0);
    }
    f.threshold = threshold;
    return f;
  }
};

std::pair<DenseDesign, Fitting> compact(const WeightedProblem& p) {
  std::vector<Index> unique_rows;
  Merger merger;
  std::unordered_map<std::size_t, std::vector<std::size_t>> buckets;
  buckets.reserve(static_cast<std::size_t>(p.size()));
  for (Index i = 0; i < p.size(); ++i) {
    const double w = p.weights(i);
    if (w == 0.0) continue;
    auto& bucket = buckets[hash_row(p.rows, i)];
    std::size_t slot = unique_rows.size();
    for (std::size_t u : bucket) {
      if (p.rows.row(unique_rows[u]) == p.rows.row(i)) {
        slot = u;
        break;
      }
    }
    if (slot == unique_rows.size()) {
      bucket.push_back(slot);
      unique_rows.push_back(i);
    }
    merger.add(slot, w, p.responses(i));
  }
  DenseDesign design;
  design.x.resize(static_cast<Index>(unique_rows.size()), p.dim());
  for (std::size_t u = 0; u < unique_rows.size(); ++u) design.x.row(static_cast<Index>(u)) = p.rows.row(unique_rows[u]);
  return {std::move(design), merger.finish(p.lambda * p.penalty_factor)};
}

std::pair<GroupedDesign, Fitting> compact(const GroupedProblem& p) {
  GroupedDesign design;
  design.features = p.features;
  design.groups = p.groups;
  Merger merger;
  constexpr std::size_t kUnseen = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> slots(static_cast<std::size_t>(p.features->rows() * p.groups), kUnseen);
  design.unit.reserve(p.unit.size());
  design.group.reserve(p.group.size());
  for (Index r = 0; r < p.size(); ++r) {
    const double w = p.weights(r);
    if (w == 0.0) continue;
    const auto s = static_cast<std::size_t>(r);
    std::size_t& slot = slots[static_cast<std::size_t>(p.unit[s] * p.groups + p.group[s])];
    if (slot == kUnseen) {
      slot = design.unit.size();
      design.unit.push_back(p.unit[s]);
      design.group.push_back(p.group[s]);
    }
    merger.add(slot, w, p.responses(r));
  }
  return {std::move(design), merger.finish(p.lambda * p.penalty_factor)};
}

double objective_at(const Fitting& f, const Vector& eta, const Vector& b) {
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    // log(1 - mu) = log(mu) - eta
    const double log_mu_raw = -softplus(-eta(i));
    const double log_mu = std::max(log_mu_raw, kLogClamp);
    const double log_one_minus = std::max(log_mu_raw - eta(i), kLogClamp);
    ll += f.weight(i) * (f.response(i) * log_mu + (1.0 - f.response(i)) * log_one_minus);
  }
  return ll - f.threshold.cwiseProduct(b.cwiseAbs()).sum();
}

template <class Design>
double objective(const Design& design, const Fitting& f, const Vector& b) {
  return objective_at(f, design.multiply(b), b);
}

// Solves the quadratic on the coordinates in `active` with the signs of c
// fixed, and accepts the result only if it satisfies the optimality
// conditions of the full problem.
std::optional<Vector> polish(const Matrix& h, const Vector& q, const Vector& t, const Vector& c) {
  const Index p = q.size();
  std::vector<Index> active;
  for (Index j = 0; j < p; ++j) {
    if (h(j, j) > 0.0 && (c(j) != 0.0 || t(j) == 0.0)) active.push_back(j);
  }
  Vector candidate = Vector::Zero(p);
  if (!active.empty()) {
    const auto a = static_cast<Index>(active.size());
    Matrix haa(a, a);
    Vector rhs(a);
    for (Index u = 0; u < a; ++u) {
      const Index j = active[static_cast<std::size_t>(u)];
      const double sign = t(j) == 0.0 ? 0.0 : (c(j) > 0.0 ? 1.0 : -1.0);
      rhs(u) = q(j) - t(j) * sign;
      for (Index v = 0; v < a; ++v) haa(u, v) = h(j, active[static_cast<std::size_t>(v)]);
    }
    Eigen::LDLT<Matrix> ldlt(haa);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    const Vector x = ldlt.solve(rhs);
    if (!x.allFinite() || (haa * x - rhs).lpNorm<Eigen::Infinity>() > 1e-9 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) {
      return std::nullopt;
    }
    for (Index u = 0; u < a; ++u) {
      const Index j = active[static_cast<std::size_t>(u)];
      if (t(j) != 0.0 && (x(u) == 0.0 || (x(u) > 0.0) != (c(j) > 0.0))) return std::nullopt;
      candidate(j) = x(u);
    }
  }
  const Vector residual = q - h * candidate;
  for (Index j = 0; j < p; ++j) {
    if (candidate(j) == 0.0 && t(j) != 0.0 && std::abs(residual(j)) > t(j) * (1.0 + 1e-9) + 1e-12) return std::nullopt;
  }
  return candidate;
}

// Minimizes 0.5 c'Hc - q'c + sum_j t_j |c_j|. Cyclic coordinate descent
// finds the sign pattern; between sweeps a direct solve on the active set is
// tried and kept once it is optimal.
Vector solve_quadratic(const Matrix& h, const Vector& q, const Vector& t, Vector c, double tol, int max_sweeps) {
  const Index p = q.size();
  if (auto direct = polish(h, q, t, c)) return *direct;
  Vector r = q - h * c;  // negative gradient of the smooth part
  auto update = [&](Index j) -> double {
    const double hjj = h(j, j);
    if (!(hjj > 0.0)) {
      c(j) = 0.0;
      return 0.0;
    }
    const double next = soft_threshold(r(j) + hjj * c(j), t(j)) / hjj;
    const double delta = next - c(j);
    if (delta != 0.0) {
      r.noalias() -= h.col(j) * delta;
      c(j) = next;
    }
    return std::abs(delta);
  };

  constexpr int kActiveSweeps = 10;
  int sweeps = 0;
  while (sweeps < max_sweeps) {
    double full = 0.0;
    for (Index j = 0; j < p; ++j) full = std::max(full, update(j));
    ++sweeps;
    if (full < tol) break;
    std::vector<Index> active;
    for (Index j = 0; j < p; ++j) {
      if (c(j) != 0.0) active.push_back(j);
    }
    for (int s = 0; s < kActiveSweeps && sweeps < max_sweeps; ++s) {
      double moved = 0.0;
      for (Index j : active) moved = std::max(moved, update(j));
      ++sweeps;
      if (moved < tol) break;
    }
    if (auto direct = polish(h, q, t, c)) return *direct;
  }
  if (auto direct = polish(h, q, t, c)) return *direct;
  return c;
}

template <class Design>
Coefficients fit_core(const Design& design, const Fitting& f, const SolverConfig& config, Vector beta,
                      CurvatureCache* cache = nullptr) {
  if (design.rows() == 0) throw ValidationError("weighted problem has no rows with positive weight");
  Coefficients out;
  Vector eta = design.multiply(beta);
  double current = objective_at(f, eta, beta);
  if (!std::isfinite(current)) throw NumericError("non-finite objective at the starting point");

  // The quadratic model around beta uses the gradient at beta and a Hessian
  // that is rebuilt on the first iteration and after any step that needed
  // backtracking or that shrank the step by less than 4x; otherwise the
  // previous one is reused.
  const Index m = design.rows();
  Vector working(m);
  Vector residual(m);
  Matrix h;
  bool refresh = true;
  if (cache && cache->hessian.rows() == beta.size()) {
    h = std::move(cache->hessian);
    refresh = false;
  }
  double previous_change = std::numeric_limits<double>::infinity();
  for (int outer = 1; outer <= config.max_outer; ++outer) {
    out.outer_iterations = outer;
    for (Index i = 0; i < m; ++i) {
      const double mu = logistic(eta(i));
      working(i) = f.weight(i) * std::max(mu * (1.0 - mu), config.min_working_weight);
      residual(i) = f.weight(i) * (f.response(i) - mu);
    }
    const Vector gradient = design.transpose_multiply(residual);
    if (refresh) h = design.gram(working);
    const Vector q = h * beta + gradient;
    const Vector step = solve_quadratic(h, q, f.threshold, beta, config.tol * 1e-3, config.max_inner) - beta;

    // Backtrack until the penalized objective does not decrease.
    double scale = 1.0;
    bool accepted = false;
    Vector candidate;
    Vector candidate_eta;
    double value = current;
    for (int halving = 0; halving < 50; ++halving) {
      candidate = beta + scale * step;
      candidate_eta = design.multiply(candidate);
      value = objective_at(f, candidate_eta, candidate);
      if (std::isfinite(value) && value >= current) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      // No ascent available along the Newton direction: stationary up to rounding.
      out.converged = true;
      break;
    }
    const double change = (candidate - beta).lpNorm<Eigen::Infinity>();
    refresh = scale < 1.0 || change > kContract * previous_change;
    previous_change = change;
    beta = candidate;
    eta = std::move(candidate_eta);
    current = value;
    out.objective_trace.push_back(current);
    if (change < config.tol) {
      out.converged = true;
      break;
    }
  }
  if (!beta.allFinite()) throw NumericError("non-finite coefficients");
  if (cache) cache->hessian = std::move(h);
  out.values = std::move(beta);
  return out;
}

Coefficients fit_impl(const WeightedProblem& problem, const SolverConfig& config, Vector beta) {
  problem.validate();
  config.validate();
  const auto [design, fitting] = compact(problem);
  return fit_core(design, fitting, config, std::move(beta));
}

}  // namespace

void WeightedProblem::validate() const {
  const Index m = rows.rows();
  if (m == 0 || rows.cols() == 0) throw ValidationError("empty weighted problem");
  if (weights.size() != m || responses.size() != m) throw ValidationError("weighted problem row count mismatch");
  if (penalty_factor.size() != rows.cols()) throw ValidationError("penalty_factor length mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and >= 0");
  if (!rows.allFinite()) throw ValidationError("non-finite design value");
  bool positive = false;
  for (Index i = 0; i < m; ++i) {
    const double w = weights(i);
    if (!std::isfinite(w) || w < 0.0) throw ValidationError("weights must be finite and nonnegative");
    positive = positive || w > 0.0;
    if (responses(i) != 0.0 && responses(i) != 1.0) throw ValidationError("responses must be 0 or 1");
  }
  if (!positive) throw ValidationError("weighted problem needs a strictly positive weight");
  for (Index j = 0; j < penalty_factor.size(); ++j) {
    if (!std::isfinite(penalty_factor(j)) || penalty_factor(j) < 0.0) {
      throw ValidationError("penalty factors must be finite and nonnegative");
    }
  }
}

void SolverConfig::validate() const {
  if (!(tol > 0.0)) throw ValidationError("solver tol must be > 0");
  if (max_outer < 1 || max_inner < 1) throw ValidationError("solver iteration caps must be >= 1");
  if (!(min_working_weight > 0.0)) throw ValidationError("working-weight clamp must be > 0");
}

Coefficients fit(const WeightedProblem& problem, const SolverConfig& config) {
  return fit_impl(problem, config, Vector::Zero(problem.dim()));
}

Coefficients fit(const WeightedProblem& problem, const SolverConfig& config, const Vector& start) {
  if (start.size() != problem.dim()) throw ValidationError("warm start has the wrong length");
  if (!start.allFinite()) throw ValidationError("warm start is not finite");
  return fit_impl(problem, config, start);
}

void GroupedProblem::validate() const {
  if (!features) throw ValidationError("grouped problem has no feature matrix");
  if (groups < 1) throw ValidationError("grouped problem needs at least one group");
  const Index m = size();
  if (m == 0) throw ValidationError("empty weighted problem");
  if (static_cast<Index>(group.size()) != m || weights.size() != m || responses.size() != m) {
    throw ValidationError("weighted problem row count mismatch");
  }
  if (penalty_factor.size() != dim()) throw ValidationError("penalty_factor length mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and >= 0");
  bool positive = false;
  for (Index r = 0; r < m; ++r) {
    const auto s = static_cast<std::size_t>(r);
    if (unit[s] < 0 || unit[s] >= features->rows()) throw ValidationError("unit index out of range");
    if (group[s] < 0 || group[s] >= groups) throw ValidationError("group index out of range");
    const double w = weights(r);
    if (!std::isfinite(w) || w < 0.0) throw ValidationError("weights must be finite and nonnegative");
    positive = positive || w > 0.0;
    if (!(responses(r) >= 0.0 && responses(r) <= 1.0)) throw ValidationError("responses must lie in [0, 1]");
  }
  if (!positive) throw ValidationError("weighted problem needs a strictly positive weight");
  for (Index j = 0; j < penalty_factor.size(); ++j) {
    if (!std::isfinite(penalty_factor(j)) || penalty_factor(j) < 0.0) {
      throw ValidationError("penalty factors must be finite and nonnegative");
    }
  }
}

WeightedProblem GroupedProblem::expanded() const {
  validate();
  const Index m = size();
  const Index k = features->cols();
  WeightedProblem p;
  p.rows = Matrix::Zero(2 * m, dim());
  p.weights.resize(2 * m);
  p.responses.resize(2 * m);
  for (Index r = 0; r < m; ++r) {
    const auto s = static_cast<std::size_t>(r);
    for (Index half = 0; half < 2; ++half) {
      const Index row = r + half * m;
      p.rows(row, group[s]) = 1.0;
      p.rows.row(row).tail(k) = features->row(unit[s]);
      p.weights(row) = weights(r) * (half == 0 ? responses(r) : 1.0 - responses(r));
      p.responses(row) = half == 0 ? 1.0 : 0.0;
    }
  }
  p.penalty_factor = penalty_factor;
  p.lambda = lambda;
  return p;
}

Coefficients fit(const GroupedProblem& problem, const SolverConfig& config, const Vector& start,
                 CurvatureCache* cache) {
  problem.validate();
  config.validate();
  if (start.size() != problem.dim()) throw ValidationError("warm start has the wrong length");
  if (!start.allFinite()) throw ValidationError("warm start is not finite");
  const auto [design, fitting] = compact(problem);
  return fit_core(design, fitting, config, start, cache);
}

double penalized_objective(const GroupedProblem& problem, const Vector& coefs) {
  problem.validate();
  const auto [design, fitting] = compact(problem);
  return objective(design, fitting, coefs);
}

double penalized_objective(const WeightedProblem& problem, const Vector& coefs) {
  const Vector eta = problem.rows * coefs;
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    const double w = problem.weights(i);
    if (w == 0.0) continue;
    const double term = problem.responses(i) == 1.0 ? -softplus(-eta(i)) : -softplus(eta(i));
    ll += w * std::max(term, kLogClamp);
  }
  return ll - problem.lambda * problem.penalty_factor.cwiseProduct(coefs.cwiseAbs()).sum();
}

Vector log_likelihood_gradient(const WeightedProblem& problem, const Vector& coefs) {
  const Vector eta = problem.rows * coefs;
  Vector resid(eta.size());
  for (Index i = 0; i < eta.size(); ++i) resid(i) = problem.weights(i) * (problem.responses(i) - logistic(eta(i)));
  return problem.rows.transpose() * resid;
}

double kkt_violation(const WeightedProblem& problem, const Vector& coefs) {
  const Vector g = log_likelihood_gradient(problem, coefs);
  double worst = 0.0;
  for (Index j = 0; j < g.size(); ++j) {
    const double t = problem.lambda * problem.penalty_factor(j);
    double v;
    if (t == 0.0) {
      v = std::abs(g(j));
    } else if (coefs(j) == 0.0) {
      v = std::max(std::abs(g(j)) - t, 0.0);
    } else {
      v = std::abs(g(j) - t * (coefs(j) > 0.0 ? 1.0 : -1.0));
    }
    worst = std::max(worst, v);
  }
  return worst;
}

}  // namespace crowdsel
