#pragma once

// Generalized grouped fixed effects: every group carries a full T x T residual
// covariance and the criterion is the trace of their Wasserstein barycenter.

#include "wgfe/solvers.hpp"

#include <vector>

namespace wgfe::ggfe {

/// Dense symmetric matrix with eigen-based functional calculus.
class SpdMatrix {
 public:
  SpdMatrix() = default;
  /// Symmetrizes `m`; throws Error(InvalidInput) if it is not square or is
  /// asymmetric beyond 1e-12 relative.
  explicit SpdMatrix(Eigen::MatrixXd m);

  const Eigen::MatrixXd& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }
  double trace() const { return m_.trace(); }
  double min_eigenvalue() const;
  /// PSD within -1e-10 * trace.
  bool is_psd() const;

  /// Principal square root with eigenvalues clamped below at `floor`.
  Eigen::MatrixXd sqrt(double floor = 0.0) const;
  Eigen::MatrixXd inv_sqrt(double floor) const;
  /// Copy with eigenvalues clamped below at `floor`.
  SpdMatrix clamped(double floor) const;

 private:
  Eigen::MatrixXd m_;
};

/// Soft memberships, N x G, rows on the simplex.
class SoftAssignment {
 public:
  explicit SoftAssignment(Eigen::MatrixXd weights);
  static SoftAssignment from_hard(const GroupAssignment& gamma);

  const Eigen::MatrixXd& weights() const { return w_; }
  int n_units() const { return static_cast<int>(w_.rows()); }
  int n_groups() const { return static_cast<int>(w_.cols()); }

 private:
  Eigen::MatrixXd w_;
};

struct GroupCovariances {
  std::vector<SpdMatrix> covariances;
  Vector weights;             // P_g
  std::vector<bool> is_spd;   // false for rank-deficient groups
};

/// Sigma_g = mean over members of v_i v_i' with v_i = y_i - x_i theta - alpha_g.
GroupCovariances group_covariances(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                                   const GroupAssignment& gamma);

/// Soft version: Sigma_g = sum_i P_ig v_ig v_ig' / sum_i P_ig, P_g = mean_i P_ig.
GroupCovariances soft_group_covariances(const PanelDataset& data, const Vector& theta,
                                        const Matrix& alpha, const SoftAssignment& soft);

/// Eigenvalue floor 1e-10 * (mean trace) / T, or 1e-12 when every input is zero.
double eigen_floor(const std::vector<SpdMatrix>& covariances);

struct BarycenterOptions {
  double tol = 1e-11;
  int max_iters = 500;
};

struct BarycenterResult {
  SpdMatrix omega;
  int iterations = 0;
  double residual = 0.0;
};

/// Fixed point Omega = sum_g P_g (Omega^1/2 Sigma_g Omega^1/2)^1/2 by the
/// iteration Omega <- Omega^-1/2 (sum_g P_g (Omega^1/2 Sigma_g Omega^1/2)^1/2)^2 Omega^-1/2
/// from the identity. Throws NonSpdInput for indefinite inputs and
/// NonConvergenceError at the cap.
BarycenterResult barycenter_fixed_point(const std::vector<SpdMatrix>& covariances, const Vector& weights,
                                        const BarycenterOptions& options = {});

/// Relative Frobenius residual of the barycenter equation at `omega`.
double barycenter_residual(const std::vector<SpdMatrix>& covariances, const Vector& weights,
                           const Eigen::MatrixXd& omega);

/// tr(Omega) for a hard grouping.
double ggfe_objective(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                      const GroupAssignment& gamma, const BarycenterOptions& options = {});

/// tr(Omega) for a soft grouping.
double soft_ggfe_objective(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                           const SoftAssignment& soft, const BarycenterOptions& options = {});

/// Partial derivatives d tr(Omega) / d P_ig, N x G, treating every entry of
/// the membership matrix as a free coordinate. Throws IllConditioned when a
/// D_g spectrum is numerically singular.
Eigen::MatrixXd assignment_gradient(const PanelDataset& data, const Vector& theta, const Matrix& alpha,
                                    const SoftAssignment& soft, const BarycenterOptions& options = {});

struct DescentOptions {
  BarycenterOptions barycenter;
  /// Objective evaluations per inner (theta, alpha) update.
  int inner_budget = 50;
};

/// Alternates gradient-argmin assignment with an inner minimization of
/// tr(Omega) over theta (alpha profiled as the group mean of residuals),
/// over config.n_restarts starts. Stops at an assignment fixed point, at the
/// iteration cap, or when a step would raise the objective.
EstimationResult ggfe_descent(const PanelDataset& data, const SolverConfig& config,
                              const DescentOptions& options = {});

}  // namespace wgfe::ggfe
