#include "wgfe/ggfe.hpp"

#include "wgfe/errors.hpp"
#include "wgfe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wgfe::ggfe {
namespace {

using Eigen::MatrixXd;
using Eigen::SelfAdjointEigenSolver;

// Solves X E + E X = Y for E given the eigendecomposition X = U diag(e) U'.
struct SylvesterInverse {
  MatrixXd u;
  Vector e;

  MatrixXd apply(const MatrixXd& y) const {
    MatrixXd z = u.transpose() * y * u;
    for (Eigen::Index a = 0; a < z.rows(); ++a) {
      for (Eigen::Index b = 0; b < z.cols(); ++b) z(a, b) /= e(a) + e(b);
    }
    return u * z * u.transpose();
  }
};

MatrixXd sym(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

MatrixXd spectral(const SelfAdjointEigenSolver<MatrixXd>& es, auto&& f) {
  Vector d = es.eigenvalues().unaryExpr(f);
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

struct BarycenterState {
  MatrixXd sqrt_omega;
  MatrixXd inv_sqrt_omega;
  MatrixXd mean_root;  // sum_g P_g (Omega^1/2 Sigma_g Omega^1/2)^1/2
};

BarycenterState barycenter_state(const std::vector<MatrixXd>& sigmas, const Vector& weights,
                                 const MatrixXd& omega) {
  SelfAdjointEigenSolver<MatrixXd> es(sym(omega));
  const double tiny = std::numeric_limits<double>::min();
  BarycenterState s;
  s.sqrt_omega = spectral(es, [&](double x) { return std::sqrt(std::max(x, tiny)); });
  s.inv_sqrt_omega = spectral(es, [&](double x) { return 1.0 / std::sqrt(std::max(x, tiny)); });
  s.mean_root = MatrixXd::Zero(omega.rows(), omega.cols());
  for (std::size_t g = 0; g < sigmas.size(); ++g) {
    const double w = weights(static_cast<Eigen::Index>(g));
    if (w == 0.0) continue;
    SelfAdjointEigenSolver<MatrixXd> m(sym(s.sqrt_omega * sigmas[g] * s.sqrt_omega));
    s.mean_root += w * spectral(m, [](double x) { return std::sqrt(std::max(x, 0.0)); });
  }
  return s;
}

std::vector<MatrixXd> clamped_inputs(const std::vector<SpdMatrix>& covariances) {
  const double floor = eigen_floor(covariances);
  std::vector<MatrixXd> out;
  out.reserve(covariances.size());
  for (const auto& c : covariances) {
    if (!c.is_psd()) {
      throw Error(ErrorCode::NonSpdInput, "barycenter input is not positive semidefinite (min eigenvalue " +
                                              std::to_string(c.min_eigenvalue()) + ")");
    }
    out.push_back(c.clamped(floor).matrix());
  }
  return out;
}

void check_inputs(const std::vector<SpdMatrix>& covariances, const Vector& weights) {
  if (covariances.empty()) throw Error(ErrorCode::InvalidInput, "barycenter needs at least one covariance");
  if (static_cast<Eigen::Index>(covariances.size()) != weights.size()) {
    throw Error(ErrorCode::InvalidInput, "one weight per covariance required");
  }
  const auto t = covariances.front().dim();
  for (const auto& c : covariances) {
    if (c.dim() != t) throw Error(ErrorCode::InvalidInput, "covariances must share a dimension");
  }
  if ((weights.array() < 0.0).any() || !(weights.sum() > 0.0)) {
    throw Error(ErrorCode::InvalidInput, "barycenter weights must be nonnegative with positive mass");
  }
}

// Residual v_ig = y_i - x_i theta - alpha_g.
Matrix unit_residuals(const PanelDataset& data, const Vector& theta) { return residuals(data, theta); }

GroupCovariances covariances_from(const Matrix& v, const Matrix& alpha, const Eigen::MatrixXd& member) {
  const auto n = v.rows();
  const auto t = v.cols();
  const auto groups = member.cols();
  GroupCovariances out;
  out.weights = Vector::Zero(groups);
  for (Eigen::Index g = 0; g < groups; ++g) {
    MatrixXd acc = MatrixXd::Zero(t, t);
    double mass = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = member(i, g);
      if (w == 0.0) continue;
      const Eigen::VectorXd r = (v.row(i) - alpha.row(g)).transpose();
      acc.selfadjointView<Eigen::Lower>().rankUpdate(r, w);
      mass += w;
    }
    if (!(mass > 0.0)) throw EmptyGroupError({static_cast<int>(g)});
    acc = MatrixXd(acc.selfadjointView<Eigen::Lower>()) / mass;
    out.weights(g) = mass / static_cast<double>(n);
    SpdMatrix c(acc);
    const double tr = c.trace();
    out.is_spd.push_back(tr > 0.0 && c.min_eigenvalue() > 1e-10 * tr / static_cast<double>(t));
    out.covariances.push_back(std::move(c));
  }
  return out;
}

}  // namespace

SpdMatrix::SpdMatrix(Eigen::MatrixXd m) {
  if (m.rows() != m.cols()) throw Error(ErrorCode::InvalidInput, "SpdMatrix must be square");
  const double scale = std::max(m.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::InvalidInput, "SpdMatrix input is not symmetric");
  }
  m_ = sym(m);
}

double SpdMatrix::min_eigenvalue() const {
  SelfAdjointEigenSolver<MatrixXd> es(m_, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool SpdMatrix::is_psd() const {
  const double tr = std::abs(m_.trace());
  return min_eigenvalue() >= -1e-10 * tr;
}

Eigen::MatrixXd SpdMatrix::sqrt(double floor) const {
  SelfAdjointEigenSolver<MatrixXd> es(m_);
  return spectral(es, [&](double x) { return std::sqrt(std::max(x, std::max(floor, 0.0))); });
}

Eigen::MatrixXd SpdMatrix::inv_sqrt(double floor) const {
  SelfAdjointEigenSolver<MatrixXd> es(m_);
  return spectral(es, [&](double x) { return 1.0 / std::sqrt(std::max(x, floor)); });
}

SpdMatrix SpdMatrix::clamped(double floor) const {
  SelfAdjointEigenSolver<MatrixXd> es(m_);
  if (es.eigenvalues().minCoeff() >= floor) return *this;
  return SpdMatrix(sym(spectral(es, [&](double x) { return std::max(x, floor); })));
}

SoftAssignment::SoftAssignment(Eigen::MatrixXd weights) : w_(std::move(weights)) {
  if (w_.rows() < 1 || w_.cols() < 1) throw Error(ErrorCode::InvalidInput, "soft assignment must be non-empty");
  for (Eigen::Index i = 0; i < w_.rows(); ++i) {
    if ((w_.row(i).array() < 0.0).any() || (w_.row(i).array() > 1.0).any() ||
        std::abs(w_.row(i).sum() - 1.0) > 1e-12) {
      throw Error(ErrorCode::InvalidInput, "soft assignment rows must lie on the simplex");
    }
  }
}

SoftAssignment SoftAssignment::from_hard(const GroupAssignment& gamma) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(gamma.n_units(), gamma.n_groups());
  for (int i = 0; i < gamma.n_units(); ++i) w(i, gamma[i]) = 1.0;
  return SoftAssignment(std::move(w));
}

GroupCovariances group_covariances(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                                   const GroupAssignment& gamma) {
  if (gamma.n_units() != data.n_units()) throw Error(ErrorCode::InvalidInput, "assignment length mismatch");
  const auto empty = gamma.empty_groups();
  if (!empty.empty()) throw EmptyGroupError(empty);
  return covariances_from(unit_residuals(data, theta), alpha, SoftAssignment::from_hard(gamma).weights());
}

GroupCovariances soft_group_covariances(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                                        const SoftAssignment& soft) {
  if (soft.n_units() != data.n_units()) throw Error(ErrorCode::InvalidInput, "assignment length mismatch");
  return covariances_from(unit_residuals(data, theta), alpha, soft.weights());
}

double eigen_floor(const std::vector<SpdMatrix>& covariances) {
  if (covariances.empty()) return 1e-12;
  double tr = 0.0;
  for (const auto& c : covariances) tr += std::max(c.trace(), 0.0);
  tr /= static_cast<double>(covariances.size());
  const double t = static_cast<double>(covariances.front().dim());
  return tr > 0.0 ? 1e-10 * tr / t : 1e-12;
}

double barycenter_residual(const std::vector<SpdMatrix>& covariances, const Vector& weights,
                           const Eigen::MatrixXd& omega) {
  std::vector<MatrixXd> sigmas;
  for (const auto& c : covariances) sigmas.push_back(c.matrix());
  const BarycenterState s = barycenter_state(sigmas, weights, omega);
  return (omega - s.mean_root).norm() / omega.norm();
}

BarycenterResult barycenter_fixed_point(const std::vector<SpdMatrix>& covariances, const Vector& weights,
                                        const BarycenterOptions& options) {
  check_inputs(covariances, weights);
  const std::vector<MatrixXd> sigmas = clamped_inputs(covariances);
  const auto t = covariances.front().dim();
  MatrixXd omega = MatrixXd::Identity(t, t);
  BarycenterResult out;
  for (int it = 0; it <= options.max_iters; ++it) {
    const BarycenterState s = barycenter_state(sigmas, weights, omega);
    out.residual = (omega - s.mean_root).norm() / omega.norm();
    out.iterations = it;
    if (out.residual < options.tol) {
      out.omega = SpdMatrix(sym(omega));
      return out;
    }
    if (it == options.max_iters) break;
    omega = sym(s.inv_sqrt_omega * s.mean_root * s.mean_root * s.inv_sqrt_omega);
  }
  throw NonConvergenceError("barycenter iteration did not converge (residual " +
                                std::to_string(out.residual) + ")",
                            out.residual, out.iterations);
}

double ggfe_objective(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                      const GroupAssignment& gamma, const BarycenterOptions& options) {
  const GroupCovariances c = group_covariances(data, theta, alpha, gamma);
  return barycenter_fixed_point(c.covariances, c.weights, options).omega.trace();
}

double soft_ggfe_objective(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                           const SoftAssignment& soft, const BarycenterOptions& options) {
  const GroupCovariances c = soft_group_covariances(data, theta, alpha, soft);
  return barycenter_fixed_point(c.covariances, c.weights, options).omega.trace();
}

// Implicit differentiation of F(Omega, Sigma, P) = Omega - sum_g P_g S_g = 0
// with S_g = (R Sigma_g R)^1/2 and R = Omega^1/2. Writing L_X(E) = X E + E X,
//   dR   = L_R^-1(dOmega)
//   dS_g = L_{S_g}^-1(dR Sigma_g R + R Sigma_g dR + R dSigma_g R)
// so (I - J) vec(dOmega) = sum_g dP_g vec(S_g) + P_g vec(L_{S_g}^-1(R dSigma_g R)),
// J = sum_g P_g dS_g/dOmega. With (I - J)' lambda = vec(I) and Lambda the
// matrix form of lambda, tr(dOmega) = <Lambda, rhs>, and the adjoint of
// X -> L_{S_g}^-1(R X R) is X -> R L_{S_g}^-1(X) R.
Eigen::MatrixXd assignment_gradient(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                                    const SoftAssignment& soft, const BarycenterOptions& options) {
  const GroupCovariances cov = soft_group_covariances(data, theta, alpha, soft);
  const BarycenterResult bary = barycenter_fixed_point(cov.covariances, cov.weights, options);
  const std::vector<MatrixXd> sigmas = clamped_inputs(cov.covariances);
  const MatrixXd& omega = bary.omega.matrix();
  const auto t = omega.rows();
  const auto groups = static_cast<Eigen::Index>(sigmas.size());
  const int n = data.n_units();

  SelfAdjointEigenSolver<MatrixXd> es_omega(omega);
  SylvesterInverse l_r{es_omega.eigenvectors(), es_omega.eigenvalues().cwiseMax(0.0).cwiseSqrt()};
  const MatrixXd r = l_r.u * l_r.e.asDiagonal() * l_r.u.transpose();

  std::vector<SylvesterInverse> l_s;
  std::vector<MatrixXd> roots;
  for (Eigen::Index g = 0; g < groups; ++g) {
    SelfAdjointEigenSolver<MatrixXd> es(sym(r * sigmas[static_cast<std::size_t>(g)] * r));
    const Vector d = es.eigenvalues();
    if (!(d.minCoeff() > 0.0) || d.maxCoeff() / d.minCoeff() > 1e14) {
      throw Error(ErrorCode::IllConditioned,
                  "group " + std::to_string(g + 1) + " covariance spectrum is numerically singular");
    }
    l_s.push_back({es.eigenvectors(), d.cwiseSqrt()});
    roots.push_back(l_s.back().u * l_s.back().e.asDiagonal() * l_s.back().u.transpose());
  }

  // Dense (I - J) over column-major vec of T x T matrices.
  const auto t2 = t * t;
  MatrixXd system = MatrixXd::Identity(t2, t2);
  MatrixXd basis = MatrixXd::Zero(t, t);
  for (Eigen::Index col = 0; col < t2; ++col) {
    basis.setZero();
    basis(col % t, col / t) = 1.0;
    const MatrixXd d_r = l_r.apply(basis);
    MatrixXd d_omega_image = MatrixXd::Zero(t, t);
    for (Eigen::Index g = 0; g < groups; ++g) {
      const MatrixXd& sg = sigmas[static_cast<std::size_t>(g)];
      const MatrixXd d_m = d_r * sg * r + r * sg * d_r;
      d_omega_image += cov.weights(g) * l_s[static_cast<std::size_t>(g)].apply(d_m);
    }
    system.col(col) -= Eigen::Map<const Eigen::VectorXd>(d_omega_image.data(), t2);
  }
  const MatrixXd identity = MatrixXd::Identity(t, t);
  const Eigen::VectorXd lambda =
      system.transpose().partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(identity.data(), t2));
  const MatrixXd big_lambda = sym(Eigen::Map<const MatrixXd>(lambda.data(), t, t));

  const Matrix v = unit_residuals(data, theta);
  const Eigen::MatrixXd& member = soft.weights();
  Eigen::MatrixXd grad(n, groups);
  for (Eigen::Index g = 0; g < groups; ++g) {
    const MatrixXd m_g = sym(r * l_s[static_cast<std::size_t>(g)].apply(big_lambda) * r);
    const double mass = member.col(g).sum();
    // P_g / n_g = 1/N for soft counts n_g = N P_g.
    const double per_unit = (cov.weights(g) / mass);
    const double base = (big_lambda.cwiseProduct(roots[static_cast<std::size_t>(g)])).sum() /
                            static_cast<double>(n) -
                        per_unit * (m_g.cwiseProduct(cov.covariances[static_cast<std::size_t>(g)].matrix())).sum();
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd res = (v.row(i) - alpha.row(g)).transpose();
      grad(i, g) = base + per_unit * res.dot(m_g * res);
    }
  }
  return grad;
}

namespace {

struct InnerState {
  Vector theta;
  Matrix alpha;
  double objective = std::numeric_limits<double>::infinity();
};

InnerState evaluate(const PanelDataset& data, const GroupAssignment& gamma, const Vector& theta,
                    const BarycenterOptions& options) {
  InnerState s;
  s.theta = theta;
  s.alpha = update_alpha(data, theta, gamma);
  s.objective = ggfe_objective(data, theta, s.alpha, gamma, options);
  return s;
}

// Compass search over theta with alpha profiled out.
InnerState inner_update(const PanelDataset& data, const GroupAssignment& gamma, const Vector& theta_prev,
                        const SolverConfig& config, const DescentOptions& options) {
  SolverConfig wgfe_config = config;
  wgfe_config.mode = Mode::WGFE;
  int evals = 0;
  InnerState best = evaluate(data, gamma, theta_prev, options.barycenter);
  ++evals;
  const int p = data.n_covariates();
  if (p == 0) return best;
  try {
    const EstimationResult seed = score_partition(data, gamma, wgfe_config, theta_prev);
    InnerState s = evaluate(data, gamma, seed.params.theta, options.barycenter);
    ++evals;
    if (s.objective < best.objective) best = std::move(s);
  } catch (const Error&) {
    // Singular weighted design: keep the previous slope as the seed.
  }
  Vector step(p);
  for (int k = 0; k < p; ++k) step(k) = 0.05 * (std::abs(best.theta(k)) + 0.05);
  while (evals < options.inner_budget) {
    bool moved = false;
    for (int k = 0; k < p && evals < options.inner_budget; ++k) {
      for (double dir : {1.0, -1.0}) {
        if (evals >= options.inner_budget) break;
        Vector trial = best.theta;
        trial(k) += dir * step(k);
        InnerState s = evaluate(data, gamma, trial, options.barycenter);
        ++evals;
        if (s.objective < best.objective) {
          best = std::move(s);
          moved = true;
          break;
        }
      }
    }
    if (!moved) step *= 0.5;
  }
  return best;
}

// Moves the unit with the largest gradient entry in a group with spare members
// into each empty group.
void repair(GroupAssignment& gamma, const Eigen::MatrixXd& score, EmptyGroupPolicy policy) {
  auto empty = gamma.empty_groups();
  if (empty.empty()) return;
  if (policy == EmptyGroupPolicy::Fail) throw EmptyGroupError(empty);
  while (!empty.empty()) {
    const auto counts = gamma.counts();
    int worst = -1;
    double worst_score = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < gamma.n_units(); ++i) {
      if (counts[static_cast<std::size_t>(gamma[i])] < 2) continue;
      if (score(i, gamma[i]) > worst_score) {
        worst_score = score(i, gamma[i]);
        worst = i;
      }
    }
    if (worst < 0) throw EmptyGroupError(empty);
    gamma.set(worst, empty.front());
    empty = gamma.empty_groups();
  }
}

EstimationResult descent_run(const PanelDataset& data, const SolverConfig& config, const DescentOptions& options,
                             Rng& rng) {
  SolverConfig init_config = config;
  init_config.mode = Mode::WGFE;
  const GroupParameters init = initialize(data, init_config, rng);
  const int groups = config.n_groups;

  GroupAssignment gamma = gfe_assign(data, init.theta, init.alpha);
  repair(gamma, detail::squared_distances(residuals(data, init.theta), init.alpha), config.empty_group_policy);
  InnerState state{init.theta, init.alpha, ggfe_objective(data, init.theta, init.alpha, gamma, options.barycenter)};

  std::vector<double> trace;
  bool converged = false;
  bool fitted = false;
  int iters = 0;
  for (int it = 1; it <= config.max_lloyd_iters; ++it) {
    GroupAssignment next = gamma;
    if (fitted) {
      Eigen::MatrixXd grad;
      try {
        grad = assignment_gradient(data, state.theta, state.alpha, SoftAssignment::from_hard(gamma),
                                   options.barycenter);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::IllConditioned) throw;
        break;
      }
      for (int i = 0; i < data.n_units(); ++i) {
        Eigen::Index best = 0;
        grad.row(i).minCoeff(&best);
        next.set(i, static_cast<int>(best));
      }
      repair(next, grad, config.empty_group_policy);
      if (next == gamma) {
        converged = true;
        break;
      }
    }
    InnerState updated = inner_update(data, next, state.theta, config, options);
    if (fitted && updated.objective > state.objective + 1e-8 * std::abs(state.objective)) break;
    iters = it;
    gamma = std::move(next);
    state = std::move(updated);
    fitted = true;
    if (config.record_trace) trace.push_back(state.objective);
  }

  EstimationResult out;
  out.mode = Mode::GGFE;
  out.assignment = gamma;
  out.params.theta = state.theta;
  out.params.alpha = state.alpha;
  const Vector q = group_ssr(data, state.theta, state.alpha, gamma);
  out.params.sigma = detail::clamp_sigma(q.cwiseSqrt(), data.sigma_floor());
  const auto counts = gamma.counts();
  out.params.weights.resize(groups);
  for (int g = 0; g < groups; ++g) {
    out.params.weights(g) = static_cast<double>(counts[static_cast<std::size_t>(g)]) / data.n_units();
  }
  out.breakdown.per_group_ssr = q;
  out.breakdown.weights = out.params.weights;
  out.breakdown.value = state.objective;
  out.objective = state.objective;
  out.n_lloyd_iters = iters;
  out.converged = converged;
  out.n_restarts_used = 1;
  out.trace = std::move(trace);
  return out;
}

}  // namespace

EstimationResult ggfe_descent(const PanelDataset& data, const SolverConfig& config, const DescentOptions& options) {
  SolverConfig checked = config;
  checked.mode = Mode::WGFE;
  checked.validate(data);
  std::optional<EstimationResult> best;
  int used = 0;
  std::exception_ptr first_error;
  for (int k = 0; k < config.n_restarts; ++k) {
    try {
      Rng rng = substream(config.seed, static_cast<std::uint64_t>(k));
      EstimationResult r = descent_run(data, config, options, rng);
      ++used;
      if (!best || r.objective < best->objective) best = std::move(r);
    } catch (const Error&) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (!best) std::rethrow_exception(first_error);
  best->n_restarts_used = used;
  return std::move(*best);
}

}  // namespace wgfe::ggfe
