#include "wgfe/inference.hpp"

#include "wgfe/errors.hpp"

#include <cmath>
#include <limits>

namespace wgfe {

double pooled_ssr(const PanelDataset& data, const EstimationResult& result) {
  const Matrix v = residuals(data, result.params.theta);
  return detail::group_sq_residuals(v, result.params.alpha, result.assignment).sum();
}

InferenceResult variance_estimates(const PanelDataset& data, const EstimationResult& result,
                                   const InferenceOptions& options) {
  const GroupAssignment& gamma = result.assignment;
  const int n = data.n_units();
  const int t_count = data.n_periods();
  const int p = data.n_covariates();
  const int groups = gamma.n_groups();
  const auto counts = gamma.counts();
  for (int g = 0; g < groups; ++g) {
    if (counts[static_cast<std::size_t>(g)] == 0) throw EmptyGroupError(gamma.empty_groups());
  }
  const Matrix u = [&] {
    Matrix v = residuals(data, result.params.theta);
    for (int i = 0; i < n; ++i) v.row(i) -= result.params.alpha.row(gamma[i]);
    return v;
  }();

  InferenceResult out;
  out.dof_correction = options.dof_correction;
  out.sigma2_hat = Vector::Zero(groups);
  out.var_alpha = Matrix::Zero(groups, t_count);
  for (int i = 0; i < n; ++i) {
    const int g = gamma[i];
    out.var_alpha.row(g) += u.row(i).array().square().matrix();
    out.sigma2_hat(g) += u.row(i).squaredNorm();
  }
  for (int g = 0; g < groups; ++g) {
    const double c = counts[static_cast<std::size_t>(g)];
    out.sigma2_hat(g) /= t_count * c;
    out.var_alpha.row(g) /= c * c;
  }

  // Observation weights: 1/sigma_g for WGFE, 1 for GFE.
  Vector w = Vector::Ones(groups);
  if (result.mode == Mode::WGFE) {
    w = detail::clamp_sigma(out.sigma2_hat.cwiseSqrt(), data.sigma_floor()).cwiseInverse();
  }

  const double nt = static_cast<double>(n) * t_count;
  out.bread = Eigen::MatrixXd::Zero(p, p);
  out.meat = Eigen::MatrixXd::Zero(p, p);
  out.var_theta = Eigen::MatrixXd::Zero(p, p);
  out.se_theta = Vector::Zero(p);
  if (p == 0) return out;

  const GroupMeans means = within_group_means(data, gamma);
  Vector xt(p);
  Vector score(p);
  for (int i = 0; i < n; ++i) {
    const int g = gamma[i];
    score.setZero();
    for (int t = 0; t < t_count; ++t) {
      for (int k = 0; k < p; ++k) {
        xt(k) = data.covariate(k)(i, t) - means.covariates[static_cast<std::size_t>(k)](g, t);
      }
      out.bread.selfadjointView<Eigen::Lower>().rankUpdate(xt, w(g));
      score += u(i, t) * xt;
    }
    out.meat.selfadjointView<Eigen::Lower>().rankUpdate(score, w(g) * w(g));
  }
  out.bread = Eigen::MatrixXd(out.bread.selfadjointView<Eigen::Lower>()) / nt;
  out.meat = Eigen::MatrixXd(out.meat.selfadjointView<Eigen::Lower>()) / nt;
  detail::check_gram(out.bread);
  const Eigen::MatrixXd b_inv = out.bread.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd sandwich = b_inv * out.meat * b_inv;
  sandwich = 0.5 * (sandwich + sandwich.transpose());
  double scale = 1.0 / nt;
  if (options.dof_correction && nt > p) scale *= nt / (nt - p);
  out.var_theta = scale * sandwich;
  out.se_theta = out.var_theta.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

HomoskedasticityTest homoskedasticity_test(const PanelDataset& data, const EstimationResult& result,
                                           std::optional<double> d_nt) {
  const ObjectiveBreakdown gfe =
      gfe_objective(data, result.params.theta, result.params.alpha, result.assignment);
  const ObjectiveBreakdown wgfe =
      wgfe_objective(data, result.params.theta, result.params.alpha, result.assignment);
  HomoskedasticityTest out;
  out.scale_d_nt = d_nt.value_or(static_cast<double>(data.n_units()) * data.n_periods());
  out.q_gfe = gfe.value;
  out.q_wgfe = wgfe.value;
  // Q_GFE - Q_WGFE^2 = sum_g P_g (s_g - m)^2 with s_g = sqrt(Q_g) and
  // m = sum_g P_g s_g, since the P_g sum to one. Centering on s_0 keeps the
  // equal-Q case exactly zero.
  const Vector s = wgfe.per_group_ssr.cwiseSqrt();
  const Vector& pg = wgfe.weights;
  const double shift = (pg.array() * (s.array() - s(0))).sum() / pg.sum();
  double gap = 0.0;
  for (Eigen::Index g = 0; g < s.size(); ++g) {
    const double d = (s(g) - s(0)) - shift;
    gap += pg(g) * d * d;
  }
  out.tau = out.scale_d_nt * gap;
  return out;
}

GroupCountSelection select_n_groups(const PanelDataset& data, const SolverConfig& config, int g_max,
                                    const BicOptions& options) {
  if (g_max < 1) throw Error(ErrorCode::InvalidInput, "g_max must be >= 1");
  if (g_max > data.n_units()) throw Error(ErrorCode::InvalidInput, "g_max exceeds number of units");
  const int n = data.n_units();
  const int t = data.n_periods();
  const int p = data.n_covariates();
  const double nt = static_cast<double>(n) * t;
  GroupCountSelection out;
  out.rows.resize(static_cast<std::size_t>(g_max));
  for (int g = 1; g <= g_max; ++g) {
    GroupCountRow& row = out.rows[static_cast<std::size_t>(g - 1)];
    row.n_groups = g;
    try {
      SolverConfig c = config;
      c.n_groups = g;
      const EstimationResult r = multi_start(data, c);
      row.objective = r.objective;
      row.ssr = pooled_ssr(data, r);
      row.ok = true;
    } catch (const Error& e) {
      row.error = std::string(error_code_name(e.code())) + ": " + e.what();
    }
  }
  const GroupCountRow& top = out.rows.back();
  if (!top.ok) {
    out.g_hat = 0;
    return out;
  }
  double dof = nt - static_cast<double>(g_max) * t - n - p;
  if (dof <= 0.0) dof = nt;
  out.sigma2_gmax = top.ssr / dof;
  const double log_nt = std::log(nt);
  double best = std::numeric_limits<double>::infinity();
  for (auto& row : out.rows) {
    if (!row.ok) continue;
    row.bic = options.penalty_scale * out.sigma2_gmax * (row.n_groups * t + n + p) * log_nt / nt +
              row.ssr / nt;
    best = std::min(best, row.bic);
  }
  const double var_y = data.outcome_sd() * data.outcome_sd();
  const double tol = 1e-10 * std::max(std::abs(best), var_y);
  for (const auto& row : out.rows) {
    if (row.ok && row.bic <= best + tol) {
      out.g_hat = row.n_groups;
      break;
    }
  }
  return out;
}

}  // namespace wgfe
