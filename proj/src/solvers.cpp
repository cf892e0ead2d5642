#include "wgfe/solvers.hpp"

#include "wgfe/errors.hpp"
#include "wgfe/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <thread>

namespace wgfe {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::WGFE:
      return "wgfe";
    case Mode::GFE:
      return "gfe";
    case Mode::GGFE:
      return "ggfe";
  }
  return "unknown";
}

void SolverConfig::validate(const PanelDataset& data) const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidInput, msg); };
  if (n_groups < 1) fail("number of groups must be >= 1");
  if (mode == Mode::GGFE) fail("GGFE is estimated by ggfe::ggfe_descent, not the Lloyd/VNS solvers");
  if (n_groups > data.n_units()) fail("number of groups exceeds number of units");
  if (!(theta_fp_tol > 0.0)) fail("theta fixed-point tolerance must be > 0");
  if (max_lloyd_iters < 1 || theta_fp_max_iters < 1) fail("iteration caps must be >= 1");
  if (n_restarts < 1) fail("restarts must be >= 1");
  if (vns_neigh_max < 0 || vns_iter_max < 1) fail("VNS schedule must have neigh_max >= 0 and iter_max >= 1");
  if (threads < 0) fail("threads must be >= 0");
  if (init_strategy == InitStrategy::Provided && theta_init.size() != data.n_covariates()) {
    fail("provided theta_init must have one entry per covariate");
  }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Per-group demeaned moments: A_g = sum x~ x~', b_g = sum x~ y~. The weighted
// normal equations for any group weights are then sum_g w_g A_g, sum_g w_g b_g.
struct WithinMoments {
  GroupMeans means;
  std::vector<Eigen::MatrixXd> gram;
  std::vector<Vector> rhs;
};

WithinMoments within_moments(const PanelDataset& data, const GroupAssignment& gamma) {
  WithinMoments m;
  m.means = within_group_means(data, gamma);
  if (!m.means.empty_groups.empty()) throw EmptyGroupError(m.means.empty_groups);
  const int p = data.n_covariates();
  const int groups = gamma.n_groups();
  m.gram.assign(static_cast<std::size_t>(groups), Eigen::MatrixXd::Zero(p, p));
  m.rhs.assign(static_cast<std::size_t>(groups), Vector::Zero(p));
  if (p == 0) return m;
  Vector xt(p);
  for (int i = 0; i < data.n_units(); ++i) {
    const auto g = static_cast<std::size_t>(gamma[i]);
    for (int t = 0; t < data.n_periods(); ++t) {
      for (int k = 0; k < p; ++k) {
        xt(k) = data.covariate(k)(i, t) - m.means.covariates[static_cast<std::size_t>(k)](gamma[i], t);
      }
      const double yt = data.outcomes()(i, t) - m.means.outcomes(gamma[i], t);
      m.gram[g].selfadjointView<Eigen::Lower>().rankUpdate(xt);
      m.rhs[g] += yt * xt;
    }
  }
  for (auto& a : m.gram) a = Eigen::MatrixXd(a.selfadjointView<Eigen::Lower>());
  return m;
}

Vector weighted_solve(const WithinMoments& m, const Vector& w) {
  const auto p = m.rhs.front().size();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Vector b = Vector::Zero(p);
  for (std::size_t g = 0; g < m.gram.size(); ++g) {
    a += w(static_cast<Eigen::Index>(g)) * m.gram[g];
    b += w(static_cast<Eigen::Index>(g)) * m.rhs[g];
  }
  detail::check_gram(a);
  return a.ldlt().solve(b);
}

Matrix alpha_from_means(const GroupMeans& means, const Vector& theta) {
  Matrix alpha = means.outcomes;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    alpha -= theta(k) * means.covariates[static_cast<std::size_t>(k)];
  }
  return alpha;
}

Vector sigma_at(const PanelDataset& data, const GroupAssignment& gamma, const Vector& theta,
                const Matrix& alpha, const std::vector<int>& counts) {
  const Matrix v = residuals(data, theta);
  Vector s = detail::group_sq_residuals(v, alpha, gamma);
  for (Eigen::Index g = 0; g < s.size(); ++g) {
    s(g) = std::sqrt(s(g) / (static_cast<double>(data.n_periods()) * counts[static_cast<std::size_t>(g)]));
  }
  return detail::clamp_sigma(std::move(s), data.sigma_floor());
}

double relative_change(const Vector& next, const Vector& prev) {
  if (next.size() == 0) return 0.0;
  const double scale = std::max(next.lpNorm<Eigen::Infinity>(), 1.0);
  return (next - prev).lpNorm<Eigen::Infinity>() / scale;
}

FixedPointResult fixed_point_impl(const PanelDataset& data, const GroupAssignment& gamma,
                                  const Vector& theta_init, const SolverConfig& config) {
  const WithinMoments m = within_moments(data, gamma);
  const auto& counts = m.means.counts;
  FixedPointResult out;
  out.theta = theta_init;
  if (data.n_covariates() == 0) {
    out.alpha = alpha_from_means(m.means, out.theta);
    out.sigma = sigma_at(data, gamma, out.theta, out.alpha, counts);
    out.iterations = 1;
    out.converged = true;
    return out;
  }
  for (int it = 1; it <= config.theta_fp_max_iters; ++it) {
    const Matrix alpha = alpha_from_means(m.means, out.theta);
    const Vector sigma = sigma_at(data, gamma, out.theta, alpha, counts);
    const Vector next = weighted_solve(m, sigma.cwiseInverse());
    const double change = relative_change(next, out.theta);
    out.theta = next;
    out.iterations = it;
    if (change < config.theta_fp_tol) {
      out.converged = true;
      break;
    }
  }
  out.alpha = alpha_from_means(m.means, out.theta);
  out.sigma = sigma_at(data, gamma, out.theta, out.alpha, counts);
  out.residual = relative_change(weighted_solve(m, out.sigma.cwiseInverse()), out.theta);
  return out;
}

GroupParameters params_from(const Vector& theta, Matrix alpha, Vector sigma, const GroupAssignment& gamma,
                            int n_units) {
  GroupParameters p;
  p.theta = theta;
  p.alpha = std::move(alpha);
  p.sigma = std::move(sigma);
  const auto counts = gamma.counts();
  p.weights.resize(gamma.n_groups());
  for (int g = 0; g < gamma.n_groups(); ++g) {
    p.weights(g) = static_cast<double>(counts[static_cast<std::size_t>(g)]) / n_units;
  }
  return p;
}

// Score of unit i in its group under the mode's assignment rule.
double unit_score(const Matrix& dist, const Vector& sigma, int i, int g, const SolverConfig& config,
                  int n_periods) {
  if (config.mode == Mode::GFE) return dist(i, g);
  return detail::assignment_score(dist(i, g), sigma(g), n_periods, config.assignment_rule);
}

// Moves the worst-fitting unit of a group with spare members into each empty
// group until none remain.
void repair_empty_groups(GroupAssignment& gamma, const Matrix& dist, const Vector& sigma,
                         const SolverConfig& config, int n_periods) {
  auto empty = gamma.empty_groups();
  if (empty.empty()) return;
  if (config.empty_group_policy == EmptyGroupPolicy::Fail) throw EmptyGroupError(empty);
  while (!empty.empty()) {
    auto counts = gamma.counts();
    int worst = -1;
    double worst_score = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < gamma.n_units(); ++i) {
      if (counts[static_cast<std::size_t>(gamma[i])] < 2) continue;
      const double s = unit_score(dist, sigma, i, gamma[i], config, n_periods);
      if (s > worst_score) {
        worst_score = s;
        worst = i;
      }
    }
    if (worst < 0) throw EmptyGroupError(empty);
    gamma.set(worst, empty.front());
    empty = gamma.empty_groups();
  }
}

GroupAssignment assign_step(const Matrix& dist, const Vector& sigma, const SolverConfig& config,
                            int n_periods) {
  if (config.mode == Mode::GFE) return detail::assign_gfe(dist, config.n_groups);
  return detail::assign_wgfe(dist, sigma, n_periods, config.assignment_rule);
}

// Per-group contribution to the objective from sufficient statistics.
double group_term(double sumsq, double sum_norm2, int count, const SolverConfig& config, int n_units,
                  int n_periods) {
  if (count == 0) return 0.0;
  const double ssr = std::max(sumsq - sum_norm2 / count, 0.0);
  if (config.mode == Mode::GFE) return ssr / (static_cast<double>(n_units) * n_periods);
  return (static_cast<double>(count) / n_units) * std::sqrt(ssr / (static_cast<double>(n_periods) * count));
}

// Single-unit relocation search with theta held at the incumbent value and
// alpha at the group means; each accepted pass is followed by an exact update.
EstimationResult local_search(const PanelDataset& data, const SolverConfig& config, EstimationResult cur) {
  const int n = data.n_units();
  const int t = data.n_periods();
  const auto tz = static_cast<std::size_t>(t);
  const int groups = config.n_groups;
  if (groups < 2) return cur;
  constexpr int kMaxPasses = 100;
  for (int pass = 0; pass < kMaxPasses; ++pass) {
    GroupAssignment gamma = cur.assignment;
    const Matrix v = residuals(data, cur.params.theta);
    detail::GroupSums s = detail::group_sums(v, gamma);
    Vector norm2(groups);
    Vector term(groups);
    for (int g = 0; g < groups; ++g) {
      norm2(g) = s.sums.row(g).squaredNorm();
      term(g) = group_term(s.sumsq(g), norm2(g), s.counts[static_cast<std::size_t>(g)], config, n, t);
    }
    double value = term.sum();
    bool improved = false;
    for (int i = 0; i < n; ++i) {
      const double* vi = v.row(i).data();
      const double vi2 = kernels::dot(vi, vi, tz);
      for (int g = 0; g < groups; ++g) {
        const int a = gamma[i];
        if (g == a || s.counts[static_cast<std::size_t>(a)] < 2) continue;
        const double na2 = norm2(a) - 2.0 * kernels::dot(s.sums.row(a).data(), vi, tz) + vi2;
        const double ng2 = norm2(g) + 2.0 * kernels::dot(s.sums.row(g).data(), vi, tz) + vi2;
        const int ca = s.counts[static_cast<std::size_t>(a)] - 1;
        const int cg = s.counts[static_cast<std::size_t>(g)] + 1;
        const double ta = group_term(s.sumsq(a) - vi2, na2, ca, config, n, t);
        const double tg = group_term(s.sumsq(g) + vi2, ng2, cg, config, n, t);
        const double candidate = value - term(a) - term(g) + ta + tg;
        if (candidate < value - 1e-13 * std::abs(value)) {
          s.sums.row(a) -= v.row(i);
          s.sums.row(g) += v.row(i);
          s.sumsq(a) -= vi2;
          s.sumsq(g) += vi2;
          s.counts[static_cast<std::size_t>(a)] = ca;
          s.counts[static_cast<std::size_t>(g)] = cg;
          norm2(a) = na2;
          norm2(g) = ng2;
          term(a) = ta;
          term(g) = tg;
          value = candidate;
          gamma.set(i, g);
          improved = true;
        }
      }
    }
    if (!improved) break;
    EstimationResult next = score_partition(data, gamma, config, cur.params.theta);
    if (!(next.objective < cur.objective)) break;
    next.n_lloyd_iters = cur.n_lloyd_iters;
    next.converged = cur.converged;
    next.trace = cur.trace;
    cur = std::move(next);
  }
  return cur;
}

Vector ols(const Eigen::MatrixXd& x, const Vector& y) {
  const Eigen::MatrixXd gram = x.transpose() * x;
  detail::check_gram(gram);
  return gram.ldlt().solve(x.transpose() * y);
}

}  // namespace

Rng substream(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream + 0xD1B54A32D192ED03ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)};
  return Rng(seq);
}

FixedPointResult solve_theta_fixed_point(const PanelDataset& data, const GroupAssignment& gamma,
                                         const Vector& theta_init, const SolverConfig& config) {
  if (theta_init.size() != data.n_covariates()) {
    throw Error(ErrorCode::InvalidInput, "theta_init length does not match number of covariates");
  }
  FixedPointResult r = fixed_point_impl(data, gamma, theta_init, config);
  if (!r.converged) {
    throw NonConvergenceError("theta fixed point did not converge within " +
                                  std::to_string(config.theta_fp_max_iters) +
                                  " iterations (residual " + std::to_string(r.residual) + ")",
                              r.residual, r.iterations);
  }
  return r;
}

EstimationResult score_partition(const PanelDataset& data, const GroupAssignment& gamma,
                                 const SolverConfig& config, const std::optional<Vector>& theta_start) {
  EstimationResult out;
  out.mode = config.mode;
  out.assignment = gamma;
  if (config.mode == Mode::GFE) {
    SlopeUpdate u = gfe_update(data, gamma);
    out.breakdown = gfe_objective(data, u.theta, u.alpha, gamma);
    Vector sigma = detail::clamp_sigma(out.breakdown.per_group_ssr.cwiseSqrt(), data.sigma_floor());
    out.params = params_from(u.theta, std::move(u.alpha), std::move(sigma), gamma, data.n_units());
  } else {
    Vector start;
    if (theta_start && theta_start->size() == data.n_covariates()) {
      start = *theta_start;
    } else {
      start = gfe_update(data, gamma).theta;
    }
    FixedPointResult fp = fixed_point_impl(data, gamma, start, config);
    out.breakdown = wgfe_objective(data, fp.theta, fp.alpha, gamma);
    out.params = params_from(fp.theta, std::move(fp.alpha), std::move(fp.sigma), gamma, data.n_units());
  }
  out.objective = out.breakdown.value;
  out.converged = true;
  return out;
}

EstimationResult lloyd(const PanelDataset& data, const SolverConfig& config, const GroupParameters& init) {
  config.validate(data);
  const int t = data.n_periods();
  Vector theta = init.theta;
  Matrix alpha = init.alpha;
  Vector sigma = detail::clamp_sigma(init.sigma, data.sigma_floor());
  std::optional<EstimationResult> current;
  std::vector<double> trace;
  bool converged = false;
  int iters = 0;
  for (int it = 1; it <= config.max_lloyd_iters; ++it) {
    const Matrix v = residuals(data, theta);
    const Matrix dist = detail::squared_distances(v, alpha);
    GroupAssignment gamma = assign_step(dist, sigma, config, t);
    repair_empty_groups(gamma, dist, sigma, config, t);
    if (current && gamma == current->assignment) {
      converged = true;
      break;
    }
    EstimationResult next =
        score_partition(data, gamma, config, current ? current->params.theta : init.theta);
    // The Standard and PerPeriod rules do not majorize the WGFE criterion, so a
    // reassignment can raise it; keep the incumbent and stop in that case.
    if (current && next.objective > current->objective + 1e-10) break;
    iters = it;
    theta = next.params.theta;
    alpha = next.params.alpha;
    sigma = next.params.sigma;
    if (config.record_trace) trace.push_back(next.objective);
    current = std::move(next);
  }
  EstimationResult out = std::move(*current);
  out.n_lloyd_iters = iters;
  out.converged = converged;
  out.n_restarts_used = 1;
  out.trace = std::move(trace);
  return out;
}

GroupParameters initialize(const PanelDataset& data, const SolverConfig& config, Rng& rng) {
  config.validate(data);
  const int p = data.n_covariates();
  Vector theta = Vector::Zero(p);
  auto ols_or_zero = [&](auto&& estimator, const char* name) {
    try {
      return Vector(estimator(data));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularDesign) throw;
      std::clog << "warning: " << name << " initialization is singular; using theta = 0\n";
      return Vector(Vector::Zero(p));
    }
  };
  switch (config.init_strategy) {
    case InitStrategy::PooledOLS:
      theta = ols_or_zero(pooled_ols, "pooled OLS");
      break;
    case InitStrategy::TwoWayFE:
      theta = ols_or_zero(two_way_fe, "two-way FE");
      break;
    case InitStrategy::RandomDraw: {
      const Vector center = ols_or_zero(pooled_ols, "pooled OLS");
      std::normal_distribution<double> normal(0.0, 1.0);
      for (int k = 0; k < p; ++k) theta(k) = center(k) + (0.5 * std::abs(center(k)) + 0.1) * normal(rng);
      break;
    }
    case InitStrategy::Provided:
      theta = config.theta_init;
      break;
  }
  const int n = data.n_units();
  const int groups = config.n_groups;
  const int t = data.n_periods();
  // Partial Fisher-Yates: the first G entries are distinct uniform draws.
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int g = 0; g < groups; ++g) {
    std::uniform_int_distribution<int> pick(g, n - 1);
    std::swap(order[static_cast<std::size_t>(g)], order[static_cast<std::size_t>(pick(rng))]);
  }
  const Matrix v = residuals(data, theta);
  Matrix alpha(groups, t);
  for (int g = 0; g < groups; ++g) alpha.row(g) = v.row(order[static_cast<std::size_t>(g)]);

  const Matrix dist = detail::squared_distances(v, alpha);
  GroupAssignment gamma = detail::assign_gfe(dist, groups);
  SolverConfig nearest = config;
  nearest.mode = Mode::GFE;
  repair_empty_groups(gamma, dist, Vector::Ones(groups), nearest, t);
  const Vector sq = detail::group_sq_residuals(v, alpha, gamma);
  const auto counts = gamma.counts();
  Vector sigma(groups);
  for (int g = 0; g < groups; ++g) {
    sigma(g) = std::sqrt(sq(g) / (static_cast<double>(t) * counts[static_cast<std::size_t>(g)]));
  }
  sigma = detail::clamp_sigma(std::move(sigma), data.sigma_floor());
  return params_from(theta, alpha, sigma, gamma, n);
}

EstimationResult vns(const PanelDataset& data, const SolverConfig& config) {
  Rng rng = substream(config.seed, 0);
  return vns(data, config, rng);
}

EstimationResult vns(const PanelDataset& data, const SolverConfig& config, Rng& rng) {
  config.validate(data);
  const int n = data.n_units();
  const int t = data.n_periods();
  const int groups = config.n_groups;
  EstimationResult best = lloyd(data, config, initialize(data, config, rng));
  std::vector<double> best_trace = best.trace;
  int total_iters = best.n_lloyd_iters;
  if (groups < 2) return best;
  std::uniform_int_distribution<int> other_group(1, groups - 1);
  for (int j = 1; j <= config.vns_iter_max; ++j) {
    int neighborhood = 1;
    while (neighborhood <= config.vns_neigh_max) {
      // Neighborhood jump: relocate `neighborhood` distinct random units.
      GroupAssignment jumped = best.assignment;
      std::vector<int> order(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      const int moves = std::min(neighborhood, n);
      for (int m = 0; m < moves; ++m) {
        std::uniform_int_distribution<int> pick(m, n - 1);
        std::swap(order[static_cast<std::size_t>(m)], order[static_cast<std::size_t>(pick(rng))]);
        const int i = order[static_cast<std::size_t>(m)];
        jumped.set(i, (jumped[i] + other_group(rng)) % groups);
      }
      if (jumped.has_empty_group()) {
        const Matrix dist =
            detail::squared_distances(residuals(data, best.params.theta), best.params.alpha);
        repair_empty_groups(jumped, dist, best.params.sigma, config, t);
      }
      const EstimationResult updated = score_partition(data, jumped, config, best.params.theta);
      EstimationResult candidate = lloyd(data, config, updated.params);
      total_iters += candidate.n_lloyd_iters;
      candidate = local_search(data, config, std::move(candidate));
      if (candidate.objective < best.objective - 1e-13 * std::abs(best.objective)) {
        best_trace = candidate.trace;
        best = std::move(candidate);
        neighborhood = 1;
      } else {
        ++neighborhood;
      }
    }
  }
  best.trace = std::move(best_trace);
  best.n_lloyd_iters = total_iters;
  best.n_restarts_used = 1;
  return best;
}

EstimationResult multi_start(const PanelDataset& data, const SolverConfig& config) {
  config.validate(data);
  const int restarts = config.n_restarts;
  std::vector<std::optional<EstimationResult>> results(static_cast<std::size_t>(restarts));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(restarts));
  auto run = [&](int k) {
    try {
      Rng rng = substream(config.seed, static_cast<std::uint64_t>(k));
      if (config.algorithm == SearchAlgorithm::VNS) {
        results[static_cast<std::size_t>(k)] = vns(data, config, rng);
      } else {
        results[static_cast<std::size_t>(k)] = lloyd(data, config, initialize(data, config, rng));
      }
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  };
  int workers = config.threads == 0 ? static_cast<int>(std::thread::hardware_concurrency()) : config.threads;
  workers = std::clamp(workers, 1, restarts);
  if (workers == 1) {
    for (int k = 0; k < restarts; ++k) run(k);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int k = next.fetch_add(1); k < restarts; k = next.fetch_add(1)) run(k);
      });
    }
    for (auto& th : pool) th.join();
  }
  int best = -1;
  int used = 0;
  for (int k = 0; k < restarts; ++k) {
    const auto& r = results[static_cast<std::size_t>(k)];
    if (!r) continue;
    ++used;
    if (best < 0 || r->objective < results[static_cast<std::size_t>(best)]->objective) best = k;
  }
  if (best < 0) std::rethrow_exception(errors.front());
  EstimationResult out = std::move(*results[static_cast<std::size_t>(best)]);
  out.n_restarts_used = used;
  return out;
}

Vector pooled_ols(const PanelDataset& data) {
  const int p = data.n_covariates();
  if (p == 0) return Vector();
  const Eigen::Index nt = static_cast<Eigen::Index>(data.n_units()) * data.n_periods();
  Eigen::MatrixXd x(nt, p + 1);
  Vector y(nt);
  x.col(0).setOnes();
  for (int k = 0; k < p; ++k) {
    x.col(k + 1) = Eigen::Map<const Vector>(data.covariate(k).data(), nt);
  }
  y = Eigen::Map<const Vector>(data.outcomes().data(), nt);
  // Center to keep the intercept column from dominating the rank check.
  const Eigen::RowVectorXd xm = x.rightCols(p).colwise().mean();
  Eigen::MatrixXd xc = x.rightCols(p).rowwise() - xm;
  const Vector yc = y.array() - y.mean();
  return ols(xc, yc);
}

Vector two_way_fe(const PanelDataset& data) {
  const int p = data.n_covariates();
  if (p == 0) return Vector();
  auto demean = [](const Matrix& m) {
    const Eigen::VectorXd unit = m.rowwise().mean();
    const Eigen::RowVectorXd period = m.colwise().mean();
    Matrix out = m;
    out.colwise() -= unit;
    out.rowwise() -= period;
    out.array() += m.mean();
    return out;
  };
  const Eigen::Index nt = static_cast<Eigen::Index>(data.n_units()) * data.n_periods();
  Eigen::MatrixXd x(nt, p);
  for (int k = 0; k < p; ++k) {
    const Matrix d = demean(data.covariate(k));
    x.col(k) = Eigen::Map<const Vector>(d.data(), nt);
  }
  const Matrix yd = demean(data.outcomes());
  return ols(x, Eigen::Map<const Vector>(yd.data(), nt));
}

}  // namespace wgfe
