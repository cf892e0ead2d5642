#pragma once

#include "wgfe/solvers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace wgfe {

struct InferenceResult {
  Vector sigma2_hat;       // G
  Matrix var_alpha;        // G x T
  Eigen::MatrixXd bread;   // B, p x p
  Eigen::MatrixXd meat;    // V, p x p (unit-clustered)
  Eigen::MatrixXd var_theta;  // B^-1 V B^-1 / NT, optionally dof-corrected
  Vector se_theta;
  bool dof_correction = true;
};

struct InferenceOptions {
  /// Multiply var_theta by NT / (NT - p).
  bool dof_correction = true;
};

/// White variances of the group variances and time effects, and the
/// unit-clustered sandwich for theta. GFE results use unit weights; WGFE
/// results weight each observation by 1/sigma_g.
InferenceResult variance_estimates(const PanelDataset& data, const EstimationResult& result,
                                   const InferenceOptions& options = {});

struct HomoskedasticityTest {
  double tau = 0.0;
  double scale_d_nt = 0.0;
  double q_gfe = 0.0;
  double q_wgfe = 0.0;
};

/// tau = d_NT (Q_GFE - Q_WGFE^2) at the fitted point; d_NT defaults to NT.
HomoskedasticityTest homoskedasticity_test(const PanelDataset& data, const EstimationResult& result,
                                           std::optional<double> d_nt = std::nullopt);

struct BicOptions {
  /// Multiplies the penalty term.
  double penalty_scale = 1.0;
};

struct GroupCountRow {
  int n_groups = 0;
  bool ok = false;
  double objective = 0.0;
  double ssr = 0.0;
  double bic = 0.0;
  std::string error;
};

struct GroupCountSelection {
  int g_hat = 0;
  /// Residual variance SSR(g_max) / (NT - g_max T - N - p).
  double sigma2_gmax = 0.0;
  std::vector<GroupCountRow> rows;
};

/// BIC(G) = c * sigma2_gmax * (GT + N + p) ln(NT) / NT + SSR(G) / NT, each G
/// fitted by multi_start. Values within 1e-10 * max(|min BIC|, var(y)) of the
/// minimum count as ties and resolve to the smallest G.
GroupCountSelection select_n_groups(const PanelDataset& data, const SolverConfig& config, int g_max,
                                    const BicOptions& options = {});

/// Pooled sum of squared residuals at a fitted result.
double pooled_ssr(const PanelDataset& data, const EstimationResult& result);

}  // namespace wgfe
