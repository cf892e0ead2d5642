#include "wgfe/simlab.hpp"

#include "wgfe/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace wgfe::simlab {
namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidInput, msg); }

int worker_count(int threads, int tasks) {
  int w = threads == 0 ? static_cast<int>(std::thread::hardware_concurrency()) : threads;
  return std::clamp(w, 1, std::max(tasks, 1));
}

template <typename F>
void parallel_for(int n, int threads, F&& body) {
  const int workers = worker_count(threads, n);
  if (workers == 1) {
    for (int k = 0; k < n; ++k) body(k);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int k = next.fetch_add(1); k < n; k = next.fetch_add(1)) body(k);
    });
  }
  for (auto& th : pool) th.join();
}

int draw_group(const Vector& cdf, double u) {
  for (Eigen::Index g = 0; g + 1 < cdf.size(); ++g) {
    if (u < cdf(g)) return static_cast<int>(g);
  }
  return static_cast<int>(cdf.size() - 1);
}

Matrix draw_covariate(const CovariateLaw& law, int n, int t, Rng& rng) {
  if (const auto* fixed = std::get_if<FixedCovariate>(&law)) return fixed->x;
  const auto& ar = std::get<Ar1Covariate>(law);
  std::normal_distribution<double> z(0.0, 1.0);
  const double sd0 = ar.innovation_sd / std::sqrt(1.0 - ar.rho * ar.rho);
  Matrix x(n, t);
  for (int i = 0; i < n; ++i) {
    double prev = ar.mean + sd0 * z(rng);
    for (int s = 0; s < t; ++s) {
      prev = ar.mean + ar.rho * (prev - ar.mean) + ar.innovation_sd * z(rng);
      x(i, s) = prev;
    }
  }
  return x;
}

double covariate_mean(const CovariateLaw& law) {
  if (const auto* fixed = std::get_if<FixedCovariate>(&law)) return fixed->x.mean();
  return std::get<Ar1Covariate>(law).mean;
}

// Solves the assignment problem max sum_i w(i, perm[i]) on a square matrix.
std::vector<int> hungarian_max(const Eigen::MatrixXd& w) {
  const int n = static_cast<int>(w.rows());
  const double big = w.maxCoeff();
  // Potentials formulation on costs c = big - w, 1-based with a sentinel column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), std::numeric_limits<double>::infinity());
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = std::numeric_limits<double>::infinity();
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = (big - w(i0 - 1, j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) perm[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return perm;
}

Vector broadcast(const Vector& a, int t, const char* name) {
  if (a.size() == 1) return Vector::Constant(t, a(0));
  if (a.size() != t) invalid(std::string(name) + " must have length 1 or T");
  return a;
}

}  // namespace

void SimulationSpec::validate() const {
  if (n_units < 1) invalid("n_units must be >= 1");
  if (n_periods < 1) invalid("n_periods must be >= 1");
  if (n_groups < 1) invalid("n_groups must be >= 1");
  if (alpha_true.rows() != n_groups || alpha_true.cols() != n_periods) invalid("alpha_true must be G x T");
  if (sigma_true.size() != n_groups) invalid("sigma_true must have G entries");
  if (group_probs.size() != n_groups) invalid("group_probs must have G entries");
  if (!alpha_true.allFinite() || !sigma_true.allFinite() || !group_probs.allFinite() || !theta_true.allFinite()) {
    invalid("simulation parameters must be finite");
  }
  if ((sigma_true.array() < 0.0).any()) invalid("sigma_true must be nonnegative");
  if ((group_probs.array() < 0.0).any() || std::abs(group_probs.sum() - 1.0) > 1e-9) {
    invalid("group_probs must lie on the simplex");
  }
  if (dynamic) {
    if (theta_true.size() != 2) invalid("dynamic designs need theta_true = (lag, covariate)");
    if (!(std::abs(theta_true(0)) < 1.0)) invalid("lag coefficient must lie in (-1, 1)");
  } else if (theta_true.size() > 1) {
    invalid("static designs support at most one covariate");
  }
  if (const auto* fixed = std::get_if<FixedCovariate>(&covariate_law)) {
    if (fixed->x.rows() != n_units || fixed->x.cols() != n_periods) invalid("fixed covariate must be N x T");
    if (!fixed->x.allFinite()) invalid("fixed covariate must be finite");
  } else {
    const auto& ar = std::get<Ar1Covariate>(covariate_law);
    if (!(std::abs(ar.rho) < 1.0)) invalid("AR1 rho must lie in (-1, 1)");
    if (!(ar.innovation_sd >= 0.0) || !std::isfinite(ar.mean)) invalid("AR1 parameters out of range");
  }
}

SimulationSpec two_group_spec(std::uint64_t seed) {
  SimulationSpec s;
  s.n_units = 90;
  s.n_periods = 7;
  s.n_groups = 2;
  s.theta_true = Vector(2);
  s.theta_true << 0.5, 0.1;
  s.alpha_true = Matrix(2, 7);
  for (int t = 0; t < 7; ++t) {
    s.alpha_true(0, t) = 0.10 + 0.02 * t;
    s.alpha_true(1, t) = 0.31 + 0.01 * t;
  }
  s.sigma_true = Vector(2);
  s.sigma_true << 0.219, 0.086;
  s.group_probs = Vector(2);
  s.group_probs << 0.64, 0.36;
  s.covariate_law = Ar1Covariate{0.8, 0.3, 1.0};
  s.dynamic = true;
  s.seed = seed;
  return s;
}

GeneratedPanel generate(const SimulationSpec& spec, Rng& rng) {
  spec.validate();
  const int n = spec.n_units;
  const int t = spec.n_periods;
  const int groups = spec.n_groups;

  Vector cdf(groups);
  std::partial_sum(spec.group_probs.begin(), spec.group_probs.end(), cdf.begin());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = draw_group(cdf, unif(rng));

  const bool has_x = spec.dynamic || spec.theta_true.size() == 1;
  Matrix x = has_x ? draw_covariate(spec.covariate_law, n, t, rng) : Matrix();

  std::normal_distribution<double> z(0.0, 1.0);
  Matrix y(n, t);
  Matrix lag(spec.dynamic ? n : 0, spec.dynamic ? t : 0);
  for (int i = 0; i < n; ++i) {
    const int g = labels[static_cast<std::size_t>(i)];
    const double sd = spec.sigma_true(g);
    if (spec.dynamic) {
      const double rho = spec.theta_true(0);
      const double beta = spec.theta_true(1);
      const double mu = (beta * covariate_mean(spec.covariate_law) + spec.alpha_true.row(g).mean()) / (1.0 - rho);
      double prev = mu + sd / std::sqrt(1.0 - rho * rho) * z(rng);
      for (int s = 0; s < t; ++s) {
        lag(i, s) = prev;
        prev = rho * prev + beta * x(i, s) + spec.alpha_true(g, s) + sd * z(rng);
        y(i, s) = prev;
      }
    } else {
      for (int s = 0; s < t; ++s) {
        double v = spec.alpha_true(g, s) + sd * z(rng);
        if (has_x) v += spec.theta_true(0) * x(i, s);
        y(i, s) = v;
      }
    }
  }

  std::vector<Matrix> covs;
  if (spec.dynamic) covs.push_back(std::move(lag));
  if (has_x) covs.push_back(std::move(x));

  GroupAssignment truth(std::move(labels), groups);
  GroupParameters params;
  params.theta = spec.theta_true;
  params.alpha = spec.alpha_true;
  params.sigma = spec.sigma_true;
  params.weights = spec.group_probs;
  return GeneratedPanel{PanelDataset(std::move(y), std::move(covs)), std::move(truth), std::move(params)};
}

Misclassification misclassification_rate(const GroupAssignment& estimated, const GroupAssignment& truth) {
  if (estimated.n_groups() != truth.n_groups()) {
    throw Error(ErrorCode::GroupCountMismatch, "estimated and true assignments have different group counts");
  }
  if (estimated.n_units() != truth.n_units()) {
    throw Error(ErrorCode::InvalidInput, "estimated and true assignments have different lengths");
  }
  const int groups = truth.n_groups();
  const int n = truth.n_units();
  Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(groups, groups);
  for (int i = 0; i < n; ++i) confusion(estimated[i], truth[i]) += 1.0;

  std::vector<int> perm(static_cast<std::size_t>(groups));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  if (groups <= 8) {
    double best_hits = -1.0;
    do {
      double hits = 0.0;
      for (int g = 0; g < groups; ++g) hits += confusion(g, perm[static_cast<std::size_t>(g)]);
      if (hits > best_hits) {
        best_hits = hits;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    best = hungarian_max(confusion);
  }
  int wrong = 0;
  for (int i = 0; i < n; ++i) {
    if (best[static_cast<std::size_t>(estimated[i])] != truth[i]) ++wrong;
  }
  return {n == 0 ? 0.0 : static_cast<double>(wrong) / n, std::move(best)};
}

double naive_misclassification_rate(const GroupAssignment& estimated, const GroupAssignment& truth) {
  if (estimated.n_units() != truth.n_units()) {
    throw Error(ErrorCode::InvalidInput, "estimated and true assignments have different lengths");
  }
  int wrong = 0;
  for (int i = 0; i < truth.n_units(); ++i) wrong += estimated[i] != truth[i];
  return truth.n_units() == 0 ? 0.0 : static_cast<double>(wrong) / truth.n_units();
}

double hausdorff_alpha(const Matrix& alpha_hat, const Matrix& alpha_true) {
  if (alpha_hat.rows() != alpha_true.rows() || alpha_hat.cols() != alpha_true.cols()) {
    throw Error(ErrorCode::InvalidInput, "alpha matrices must have equal shapes");
  }
  const auto groups = alpha_true.rows();
  const double t = static_cast<double>(alpha_true.cols());
  Eigen::MatrixXd d(groups, groups);
  for (Eigen::Index a = 0; a < groups; ++a) {
    for (Eigen::Index b = 0; b < groups; ++b) d(a, b) = (alpha_hat.row(a) - alpha_true.row(b)).squaredNorm() / t;
  }
  // Rows of d index alpha_hat, columns alpha_true.
  return std::max(d.colwise().minCoeff().maxCoeff(), d.rowwise().minCoeff().maxCoeff());
}

SimpleCaseResult simple_case_misclass(const Vector& alpha1, const Vector& alpha2, double sigma1, double sigma2,
                                      int n_periods, long long n_draws, Rng& rng) {
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) invalid("simple case needs positive sigmas");
  if (n_draws < 1) invalid("n_draws must be >= 1");
  if (n_periods < 1) invalid("T must be >= 1");
  const Vector a1 = broadcast(alpha1, n_periods, "alpha1");
  const Vector a2 = broadcast(alpha2, n_periods, "alpha2");

  std::normal_distribution<double> z(0.0, 1.0);
  Vector y(n_periods);
  long long wrong_w = 0;
  long long wrong_g = 0;
  long long agree = 0;
  for (long long k = 0; k < n_draws; ++k) {
    for (int s = 0; s < n_periods; ++s) y(s) = a1(s) + sigma1 * z(rng);
    const double d1 = (y - a1).squaredNorm();
    const double d2 = (y - a2).squaredNorm();
    // Ties go to group 1 under both rules.
    const bool w = d2 / sigma2 + sigma2 < d1 / sigma1 + sigma1;
    const bool g = d2 < d1;
    wrong_w += w;
    wrong_g += g;
    agree += w == g;
  }
  SimpleCaseResult out;
  out.n_draws = n_draws;
  out.n_agree = agree;
  const double nd = static_cast<double>(n_draws);
  out.mc_wgfe = wrong_w / nd;
  out.mc_gfe = wrong_g / nd;
  out.se_wgfe = std::sqrt(out.mc_wgfe * (1.0 - out.mc_wgfe) / nd);
  out.se_gfe = std::sqrt(out.mc_gfe * (1.0 - out.mc_gfe) / nd);

  if (a1 == a2) {
    // With equal means the WGFE event is sum u^2 (1/sigma2 - 1/sigma1) < sigma1 - sigma2,
    // i.e. sum u^2 < sigma1 sigma2 when sigma1 > sigma2 and > when sigma1 < sigma2.
    const boost::math::chi_squared chi2(n_periods);
    const boost::math::normal phi;
    const double root = std::sqrt(2.0 * n_periods);
    const double z_thr = (sigma1 * sigma2 - n_periods) / root;
    if (sigma1 > sigma2) {
      out.exact = boost::math::cdf(chi2, sigma2 / sigma1);
      out.unit_variance = boost::math::cdf(chi2, sigma1 * sigma2);
      out.normal_approx = boost::math::cdf(phi, z_thr);
    } else if (sigma1 < sigma2) {
      out.exact = boost::math::cdf(boost::math::complement(chi2, sigma2 / sigma1));
      out.unit_variance = boost::math::cdf(boost::math::complement(chi2, sigma1 * sigma2));
      out.normal_approx = boost::math::cdf(boost::math::complement(phi, z_thr));
    } else {
      out.exact = 0.0;
      out.unit_variance = 0.0;
      out.normal_approx = 0.0;
    }
  }
  return out;
}

std::vector<CurvePoint> simple_case_curves(double alpha1, double alpha2, double sigma1, double sigma2,
                                           const std::vector<int>& t_grid, long long n_draws,
                                           std::uint64_t seed) {
  std::vector<CurvePoint> out;
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    Rng rng = substream(seed, k);
    const SimpleCaseResult r = simple_case_misclass(Vector::Constant(1, alpha1), Vector::Constant(1, alpha2),
                                                    sigma1, sigma2, t_grid[k], n_draws, rng);
    out.push_back({t_grid[k], "wgfe", r.mc_wgfe});
    out.push_back({t_grid[k], "gfe", r.mc_gfe});
  }
  return out;
}

std::string curves_csv(const std::vector<CurvePoint>& points) {
  std::string out = "T,estimator,probability\n";
  char buf[32];
  for (const auto& p : points) {
    const auto res = std::to_chars(buf, buf + sizeof(buf), p.probability);
    out += std::to_string(p.n_periods) + ',' + p.estimator + ',' + std::string(buf, res.ptr) + '\n';
  }
  return out;
}

const char* estimator_name(Estimator e) {
  switch (e) {
    case Estimator::WGFE: return "wgfe";
    case Estimator::GFE: return "gfe";
    case Estimator::TwoWayFE: return "twoway_fe";
  }
  return "unknown";
}

const EstimatorSummary& StudyReport::summary(Estimator e) const {
  for (const auto& s : estimators) {
    if (s.estimator == e) return s;
  }
  throw Error(ErrorCode::InvalidInput, std::string("estimator not in study: ") + estimator_name(e));
}

StudyReport run_study(const SimulationSpec& spec, const std::set<Estimator>& estimators, int n_replications,
                      const StudyOptions& options) {
  spec.validate();
  if (n_replications < 1) invalid("n_replications must be >= 1");
  if (estimators.empty()) invalid("at least one estimator required");
  const auto start = std::chrono::steady_clock::now();
  const std::vector<Estimator> list(estimators.begin(), estimators.end());
  const std::size_t e_count = list.size();
  const std::size_t reps = static_cast<std::size_t>(n_replications);
  const Eigen::Index p = spec.theta_true.size();

  struct Cell {
    bool ok = false;
    Vector error;
    double misclass = std::numeric_limits<double>::quiet_NaN();
    std::string failure;
  };
  std::vector<std::vector<Cell>> cells(e_count, std::vector<Cell>(reps));

  parallel_for(n_replications, options.threads, [&](int r) {
    Rng rng = substream(spec.seed, static_cast<std::uint64_t>(r));
    const GeneratedPanel panel = generate(spec, rng);
    const std::uint64_t solver_seed = rng();
    for (std::size_t e = 0; e < e_count; ++e) {
      Cell& cell = cells[e][static_cast<std::size_t>(r)];
      try {
        if (list[e] == Estimator::TwoWayFE) {
          cell.error = two_way_fe(panel.data) - spec.theta_true;
        } else {
          SolverConfig c = options.solver;
          c.mode = list[e] == Estimator::WGFE ? Mode::WGFE : Mode::GFE;
          c.n_groups = spec.n_groups;
          c.seed = solver_seed;
          c.threads = 1;
          c.record_trace = false;
          const EstimationResult fit = multi_start(panel.data, c);
          cell.error = fit.params.theta - spec.theta_true;
          cell.misclass = misclassification_rate(fit.assignment, panel.truth).rate;
        }
        cell.ok = true;
      } catch (const std::exception& ex) {
        cell.failure = "replication " + std::to_string(r) + ": " + ex.what();
      }
    }
  });

  StudyReport report;
  report.n_replications = n_replications;
  for (std::size_t e = 0; e < e_count; ++e) {
    EstimatorSummary s;
    s.estimator = list[e];
    Vector sq = Vector::Zero(p);
    double m_sum = 0.0;
    double m_sq = 0.0;
    std::vector<double> rates(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      const Cell& cell = cells[e][r];
      rates[r] = cell.misclass;
      if (!cell.ok) {
        ++s.n_failed;
        s.failures.push_back(cell.failure);
        continue;
      }
      ++s.n_ok;
      sq += cell.error.array().square().matrix();
      m_sum += cell.misclass;
      m_sq += cell.misclass * cell.misclass;
    }
    s.rmse = s.n_ok > 0 ? Vector((sq / s.n_ok).cwiseSqrt()) : Vector::Constant(p, std::numeric_limits<double>::quiet_NaN());
    if (list[e] != Estimator::TwoWayFE && s.n_ok > 0) {
      const double mean = m_sum / s.n_ok;
      s.misclass_mean = mean;
      s.misclass_sd = s.n_ok > 1 ? std::sqrt(std::max(0.0, (m_sq - s.n_ok * mean * mean) / (s.n_ok - 1))) : 0.0;
    }
    report.misclass.push_back(std::move(rates));
    report.estimators.push_back(std::move(s));
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace wgfe::simlab
