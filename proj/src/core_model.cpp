#include "wgfe/core_model.hpp"

#include "wgfe/errors.hpp"
#include "wgfe/kernels.hpp"

#include <cmath>
#include <limits>

namespace wgfe {
namespace {

void check_assignment(const PanelDataset& data, const GroupAssignment& gamma) {
  if (gamma.n_units() != data.n_units()) {
    throw Error(ErrorCode::InvalidInput, "assignment length does not match number of units");
  }
}

void check_params(const PanelDataset& data, const Vector& theta, const Matrix& alpha, int n_groups) {
  if (theta.size() != data.n_covariates()) {
    throw Error(ErrorCode::InvalidInput, "theta length does not match number of covariates");
  }
  if (alpha.rows() != n_groups || alpha.cols() != data.n_periods()) {
    throw Error(ErrorCode::InvalidInput, "alpha must be G x T");
  }
}

void throw_if_empty(const std::vector<int>& counts) {
  std::vector<int> empty;
  for (std::size_t g = 0; g < counts.size(); ++g) {
    if (counts[g] == 0) empty.push_back(static_cast<int>(g));
  }
  if (!empty.empty()) throw EmptyGroupError(std::move(empty));
}

}  // namespace

namespace detail {

GroupSums group_sums(const Matrix& v, const GroupAssignment& gamma) {
  const int g_count = gamma.n_groups();
  const auto t = static_cast<std::size_t>(v.cols());
  GroupSums out{Matrix::Zero(g_count, v.cols()), Vector::Zero(g_count),
                std::vector<int>(static_cast<std::size_t>(g_count), 0)};
  for (int i = 0; i < v.rows(); ++i) {
    const int g = gamma[i];
    const double* row = v.row(i).data();
    kernels::accumulate(row, out.sums.row(g).data(), t);
    out.sumsq(g) += kernels::dot(row, row, t);
    ++out.counts[static_cast<std::size_t>(g)];
  }
  return out;
}

Matrix squared_distances(const Matrix& v, const Matrix& alpha) {
  const auto t = static_cast<std::size_t>(v.cols());
  Matrix dist(v.rows(), alpha.rows());
  for (int i = 0; i < v.rows(); ++i) {
    for (int g = 0; g < alpha.rows(); ++g) {
      dist(i, g) = kernels::squared_distance(v.row(i).data(), alpha.row(g).data(), t);
    }
  }
  return dist;
}

GroupAssignment assign_gfe(const Matrix& dist, int n_groups) {
  std::vector<int> labels(static_cast<std::size_t>(dist.rows()), 0);
  for (int i = 0; i < dist.rows(); ++i) {
    int best = 0;
    for (int g = 1; g < n_groups; ++g) {
      if (dist(i, g) < dist(i, best)) best = g;
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
  return GroupAssignment(std::move(labels), n_groups);
}

double assignment_score(double sq_dist, double sigma, int n_periods, AssignmentRule rule) {
  switch (rule) {
    case AssignmentRule::Standard:
      return sq_dist / sigma + sigma;
    case AssignmentRule::PerPeriod: {
      const double inv_t = 1.0 / static_cast<double>(n_periods);
      return inv_t * sq_dist / sigma + inv_t * sigma;
    }
    case AssignmentRule::ScaledPenalty:
      return sq_dist / sigma + static_cast<double>(n_periods) * sigma;
  }
  return sq_dist / sigma + sigma;
}

GroupAssignment assign_wgfe(const Matrix& dist, const Vector& sigma, int n_periods,
                            AssignmentRule rule) {
  const int n_groups = static_cast<int>(sigma.size());
  std::vector<int> labels(static_cast<std::size_t>(dist.rows()), 0);
  for (int i = 0; i < dist.rows(); ++i) {
    int best = 0;
    double best_score = assignment_score(dist(i, 0), sigma(0), n_periods, rule);
    for (int g = 1; g < n_groups; ++g) {
      const double s = assignment_score(dist(i, g), sigma(g), n_periods, rule);
      if (s < best_score) {
        best = g;
        best_score = s;
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
  return GroupAssignment(std::move(labels), n_groups);
}

Vector group_sq_residuals(const Matrix& v, const Matrix& alpha, const GroupAssignment& gamma) {
  const auto t = static_cast<std::size_t>(v.cols());
  Vector out = Vector::Zero(gamma.n_groups());
  for (int i = 0; i < v.rows(); ++i) {
    const int g = gamma[i];
    out(g) += kernels::squared_distance(v.row(i).data(), alpha.row(g).data(), t);
  }
  return out;
}

Vector clamp_sigma(Vector sigma, double floor) {
  for (Eigen::Index g = 0; g < sigma.size(); ++g) {
    if (!(sigma(g) >= floor)) sigma(g) = floor;
  }
  return sigma;
}

void check_gram(const Eigen::MatrixXd& gram) {
  const auto p = gram.rows();
  if (p == 0) return;
  const double trace = gram.trace();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const double min_eig = es.eigenvalues().minCoeff();
  const double tol = 1e-10 * trace / static_cast<double>(p);
  if (!(trace > 0.0) || !(min_eig >= tol)) {
    throw Error(ErrorCode::SingularDesign,
                "within-group demeaned covariate Gram matrix is singular (min eigenvalue " +
                    std::to_string(min_eig) + ")");
  }
}

}  // namespace detail

GroupMeans within_group_means(const PanelDataset& data, const GroupAssignment& gamma) {
  check_assignment(data, gamma);
  const int n_groups = gamma.n_groups();
  const int t = data.n_periods();
  const auto tz = static_cast<std::size_t>(t);
  GroupMeans out;
  out.outcomes = Matrix::Zero(n_groups, t);
  out.covariates.assign(static_cast<std::size_t>(data.n_covariates()), Matrix::Zero(n_groups, t));
  out.counts = gamma.counts();
  for (int i = 0; i < data.n_units(); ++i) {
    const int g = gamma[i];
    kernels::accumulate(data.outcomes().row(i).data(), out.outcomes.row(g).data(), tz);
    for (int k = 0; k < data.n_covariates(); ++k) {
      kernels::accumulate(data.covariate(k).row(i).data(),
                          out.covariates[static_cast<std::size_t>(k)].row(g).data(), tz);
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int g = 0; g < n_groups; ++g) {
    const int c = out.counts[static_cast<std::size_t>(g)];
    if (c == 0) {
      out.empty_groups.push_back(g);
      out.outcomes.row(g).setConstant(nan);
      for (auto& x : out.covariates) x.row(g).setConstant(nan);
      continue;
    }
    const double inv = 1.0 / c;
    out.outcomes.row(g) *= inv;
    for (auto& x : out.covariates) x.row(g) *= inv;
  }
  return out;
}

Matrix residuals(const PanelDataset& data, const Vector& theta) {
  if (theta.size() != data.n_covariates()) {
    throw Error(ErrorCode::InvalidInput, "theta length does not match number of covariates");
  }
  Matrix v = data.outcomes();
  const auto n = static_cast<std::size_t>(v.size());
  for (int k = 0; k < data.n_covariates(); ++k) {
    kernels::axpy(-theta(k), data.covariate(k).data(), v.data(), n);
  }
  return v;
}

Vector group_ssr(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                 const GroupAssignment& gamma) {
  check_assignment(data, gamma);
  check_params(data, theta, alpha, gamma.n_groups());
  const auto counts = gamma.counts();
  throw_if_empty(counts);
  const Matrix v = residuals(data, theta);
  Vector q = detail::group_sq_residuals(v, alpha, gamma);
  for (int g = 0; g < gamma.n_groups(); ++g) {
    q(g) /= static_cast<double>(data.n_periods()) * counts[static_cast<std::size_t>(g)];
  }
  return q;
}

ObjectiveBreakdown wgfe_objective(const PanelDataset& data, const Vector& theta,
                                  const Matrix& alpha, const GroupAssignment& gamma) {
  ObjectiveBreakdown out;
  out.per_group_ssr = group_ssr(data, theta, alpha, gamma);
  const auto counts = gamma.counts();
  out.weights.resize(gamma.n_groups());
  out.value = 0.0;
  for (int g = 0; g < gamma.n_groups(); ++g) {
    out.weights(g) = static_cast<double>(counts[static_cast<std::size_t>(g)]) / data.n_units();
    out.value += out.weights(g) * std::sqrt(out.per_group_ssr(g));
  }
  return out;
}

ObjectiveBreakdown gfe_objective(const PanelDataset& data, const Vector& theta,
                                 const Matrix& alpha, const GroupAssignment& gamma) {
  check_assignment(data, gamma);
  check_params(data, theta, alpha, gamma.n_groups());
  const Matrix v = residuals(data, theta);
  const Vector sq = detail::group_sq_residuals(v, alpha, gamma);
  const auto counts = gamma.counts();
  ObjectiveBreakdown out;
  out.per_group_ssr = Vector::Zero(gamma.n_groups());
  out.weights = Vector::Zero(gamma.n_groups());
  const double t = data.n_periods();
  for (int g = 0; g < gamma.n_groups(); ++g) {
    const int c = counts[static_cast<std::size_t>(g)];
    out.weights(g) = static_cast<double>(c) / data.n_units();
    if (c > 0) out.per_group_ssr(g) = sq(g) / (t * c);
  }
  out.value = sq.sum() / (static_cast<double>(data.n_units()) * t);
  return out;
}

GroupAssignment wgfe_assign(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                            const Vector& sigma, AssignmentRule rule) {
  check_params(data, theta, alpha, static_cast<int>(sigma.size()));
  const Vector s = detail::clamp_sigma(sigma, data.sigma_floor());
  const Matrix v = residuals(data, theta);
  return detail::assign_wgfe(detail::squared_distances(v, alpha), s, data.n_periods(), rule);
}

GroupAssignment gfe_assign(const PanelDataset& data, const Vector& theta, const Matrix& alpha) {
  check_params(data, theta, alpha, static_cast<int>(alpha.rows()));
  const Matrix v = residuals(data, theta);
  return detail::assign_gfe(detail::squared_distances(v, alpha), static_cast<int>(alpha.rows()));
}

Matrix update_alpha(const PanelDataset& data, const Vector& theta, const GroupAssignment& gamma) {
  check_assignment(data, gamma);
  if (theta.size() != data.n_covariates()) {
    throw Error(ErrorCode::InvalidInput, "theta length does not match number of covariates");
  }
  GroupMeans means = within_group_means(data, gamma);
  if (!means.empty_groups.empty()) throw EmptyGroupError(means.empty_groups);
  Matrix alpha = std::move(means.outcomes);
  for (int k = 0; k < data.n_covariates(); ++k) {
    alpha -= theta(k) * means.covariates[static_cast<std::size_t>(k)];
  }
  return alpha;
}

SlopeUpdate weighted_within_update(const PanelDataset& data, const GroupAssignment& gamma,
                                   const Vector& group_weights) {
  check_assignment(data, gamma);
  if (group_weights.size() != gamma.n_groups()) {
    throw Error(ErrorCode::InvalidInput, "one weight per group required");
  }
  const GroupMeans means = within_group_means(data, gamma);
  if (!means.empty_groups.empty()) throw EmptyGroupError(means.empty_groups);
  const int p = data.n_covariates();
  const int t_count = data.n_periods();
  SlopeUpdate out;
  out.theta = Vector::Zero(p);
  if (p > 0) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Vector rhs = Vector::Zero(p);
    Vector xt(p);
    for (int i = 0; i < data.n_units(); ++i) {
      const int g = gamma[i];
      const double w = group_weights(g);
      for (int t = 0; t < t_count; ++t) {
        for (int k = 0; k < p; ++k) {
          xt(k) = data.covariate(k)(i, t) - means.covariates[static_cast<std::size_t>(k)](g, t);
        }
        const double yt = data.outcomes()(i, t) - means.outcomes(g, t);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(xt, w);
        rhs += w * yt * xt;
      }
    }
    gram = gram.selfadjointView<Eigen::Lower>();
    detail::check_gram(gram);
    out.theta = gram.ldlt().solve(rhs);
  }
  Matrix alpha = means.outcomes;
  for (int k = 0; k < p; ++k) alpha -= out.theta(k) * means.covariates[static_cast<std::size_t>(k)];
  out.alpha = std::move(alpha);
  return out;
}

SlopeUpdate gfe_update(const PanelDataset& data, const GroupAssignment& gamma) {
  return weighted_within_update(data, gamma, Vector::Ones(gamma.n_groups()));
}

}  // namespace wgfe
