#pragma once

// Criterion functions, assignment rules and closed-form parameter updates for
// the grouped fixed-effects model y_it = x_it' theta + alpha_{g_i t} + u_it.

#include "wgfe/panel.hpp"

#include <vector>

namespace wgfe {

/// Within-group averages of outcomes and covariates. Rows of empty groups are
/// NaN and the group index is listed in `empty_groups`.
struct GroupMeans {
  Matrix outcomes;                  // G x T
  std::vector<Matrix> covariates;   // p matrices, G x T
  std::vector<int> counts;          // G
  std::vector<int> empty_groups;
};

GroupMeans within_group_means(const PanelDataset& data, const GroupAssignment& gamma);

/// v = y - x theta, N x T.
Matrix residuals(const PanelDataset& data, const Vector& theta);

/// Q_g = sum_{i in g, t} (y_it - x_it' theta - alpha_gt)^2 / (T n_g).
/// Throws EmptyGroupError if any group has no members.
Vector group_ssr(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                 const GroupAssignment& gamma);

/// sum_g P_g sqrt(Q_g). Throws EmptyGroupError on empty groups.
ObjectiveBreakdown wgfe_objective(const PanelDataset& data, const Vector& theta,
                                  const Matrix& alpha, const GroupAssignment& gamma);

/// Pooled mean squared residual (1/NT) sum (y - x theta - alpha)^2 = sum_g P_g Q_g.
/// Empty groups contribute zero.
ObjectiveBreakdown gfe_objective(const PanelDataset& data, const Vector& theta,
                                 const Matrix& alpha, const GroupAssignment& gamma);

enum class AssignmentRule {
  /// ||v_i - alpha_g||^2 / sigma_g + sigma_g
  Standard,
  /// (1/T) ||v_i - alpha_g||^2 / sigma_g + sigma_g / T; same argmin as Standard.
  PerPeriod,
  /// ||v_i - alpha_g||^2 / sigma_g + T sigma_g. Majorizes the WGFE criterion
  /// at sigma_g = sqrt(Q_g), so a Lloyd pass under this rule never raises it.
  ScaledPenalty,
};

/// Variance-penalized assignment. Ties go to the lowest group index.
GroupAssignment wgfe_assign(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                            const Vector& sigma, AssignmentRule rule = AssignmentRule::Standard);

/// Nearest group effect path. Ties go to the lowest group index.
GroupAssignment gfe_assign(const PanelDataset& data, const Vector& theta, const Matrix& alpha);

/// alpha_gt = ybar_gt - xbar_gt' theta. Throws EmptyGroupError.
Matrix update_alpha(const PanelDataset& data, const Vector& theta, const GroupAssignment& gamma);

struct SlopeUpdate {
  Vector theta;
  Matrix alpha;
};

/// Closed-form GFE update for a fixed grouping. Throws SingularDesign when the
/// demeaned Gram matrix is rank deficient.
SlopeUpdate gfe_update(const PanelDataset& data, const GroupAssignment& gamma);

/// Within-group weighted least squares with one weight per group
/// (group_weights(g) multiplies every observation of group g).
SlopeUpdate weighted_within_update(const PanelDataset& data, const GroupAssignment& gamma,
                                   const Vector& group_weights);

namespace detail {

// Residual-matrix forms shared by the solvers, which cache v = y - x theta.

struct GroupSums {
  Matrix sums;           // G x T, sum of v over members
  Vector sumsq;          // G, sum of ||v_i||^2 over members
  std::vector<int> counts;
};

GroupSums group_sums(const Matrix& v, const GroupAssignment& gamma);

/// Squared distances ||v_i - alpha_g||^2, N x G.
Matrix squared_distances(const Matrix& v, const Matrix& alpha);

GroupAssignment assign_gfe(const Matrix& dist, int n_groups);
GroupAssignment assign_wgfe(const Matrix& dist, const Vector& sigma, int n_periods,
                            AssignmentRule rule);

/// Value of the rule's criterion for unit i in group g.
double assignment_score(double sq_dist, double sigma, int n_periods, AssignmentRule rule);

/// sum_{i in g} ||v_i - alpha_g||^2, G-vector.
Vector group_sq_residuals(const Matrix& v, const Matrix& alpha, const GroupAssignment& gamma);

Vector clamp_sigma(Vector sigma, double floor);

/// Minimum Gram eigenvalue tolerance: 1e-10 * trace / p.
void check_gram(const Eigen::MatrixXd& gram);

}  // namespace detail

}  // namespace wgfe
