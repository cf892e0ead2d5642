#pragma once

// Data-generating processes, label-matched classification metrics and Monte
// Carlo studies.

#include "wgfe/solvers.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace wgfe::simlab {

/// Covariate held fixed across replications, N x T.
struct FixedCovariate {
  Matrix x;
};

/// x_it = mean + rho (x_i,t-1 - mean) + e_it, e_it ~ N(0, innovation_sd^2),
/// started from the stationary law.
struct Ar1Covariate {
  double rho = 0.5;
  double innovation_sd = 1.0;
  double mean = 0.0;
};

using CovariateLaw = std::variant<FixedCovariate, Ar1Covariate>;

enum class ErrorLaw { GaussianGrouped };

/// Static designs use theta_true of length 0 or 1 (one covariate drawn from
/// covariate_law). Dynamic designs use theta_true = (lag, covariate) and
/// regress y_it on (y_i,t-1, x_it); y_i0 is drawn from the stationary law of
/// the group with alpha averaged over time.
struct SimulationSpec {
  int n_units = 90;
  int n_periods = 7;
  int n_groups = 2;
  Vector theta_true;
  Matrix alpha_true;   // G x T
  Vector sigma_true;   // G, zero allowed (noiseless)
  Vector group_probs;  // G, on the simplex
  CovariateLaw covariate_law = Ar1Covariate{};
  bool dynamic = false;
  ErrorLaw error_law = ErrorLaw::GaussianGrouped;
  std::uint64_t seed = 0;

  /// Throws Error(InvalidInput).
  void validate() const;
};

/// Group-heteroskedastic two-group dynamic design with sigma = (0.219, 0.086)
/// and P = (0.64, 0.36), N = 90, T = 7.
SimulationSpec two_group_spec(std::uint64_t seed = 0);

struct GeneratedPanel {
  PanelDataset data;
  GroupAssignment truth;
  GroupParameters params;
};

GeneratedPanel generate(const SimulationSpec& spec, Rng& rng);

struct Misclassification {
  double rate = 0.0;
  /// permutation[estimated label] = matched true label.
  std::vector<int> permutation;
};

/// Minimum over relabelings of the estimated groups of the share of units
/// whose relabeled group differs from the truth. Exhaustive for G <= 8,
/// Hungarian on the confusion matrix above. Throws GroupCountMismatch.
Misclassification misclassification_rate(const GroupAssignment& estimated, const GroupAssignment& truth);

/// Rate without relabeling.
double naive_misclassification_rate(const GroupAssignment& estimated, const GroupAssignment& truth);

/// Symmetric Hausdorff distance between the row sets of two G x T matrices
/// under the time-mean squared distance.
double hausdorff_alpha(const Matrix& alpha_hat, const Matrix& alpha_true);

/// Two groups without covariates, unit from group 1, u ~ N(0, sigma1^2).
/// alpha vectors of length 1 broadcast to T.
struct SimpleCaseResult {
  double mc_wgfe = 0.0;
  double mc_gfe = 0.0;
  double se_wgfe = 0.0;
  double se_gfe = 0.0;
  /// Units where the WGFE and GFE rules choose the same group.
  long long n_agree = 0;
  long long n_draws = 0;
  /// Exact probability when alpha1 == alpha2: P(chi2_T < sigma2/sigma1) for
  /// sigma1 > sigma2, the complement for sigma1 < sigma2, 0 when equal.
  std::optional<double> exact;
  /// Same event read with unit-variance errors: threshold sigma1 * sigma2.
  std::optional<double> unit_variance;
  /// Normal approximation of unit_variance.
  std::optional<double> normal_approx;
};

SimpleCaseResult simple_case_misclass(const Vector& alpha1, const Vector& alpha2, double sigma1, double sigma2,
                                      int n_periods, long long n_draws, Rng& rng);

struct CurvePoint {
  int n_periods = 0;
  std::string estimator;  // "wgfe" or "gfe"
  double probability = 0.0;
};

/// Misclassification curves over a grid of T, alpha values constant in t.
/// Periods k use substream (seed, k).
std::vector<CurvePoint> simple_case_curves(double alpha1, double alpha2, double sigma1, double sigma2,
                                           const std::vector<int>& t_grid, long long n_draws,
                                           std::uint64_t seed);

/// Writes "T,estimator,probability" rows.
std::string curves_csv(const std::vector<CurvePoint>& points);

enum class Estimator { WGFE, GFE, TwoWayFE };
const char* estimator_name(Estimator e);

struct StudyOptions {
  /// Solver knobs for WGFE and GFE fits; n_groups and seed are set per replication.
  SolverConfig solver;
  /// Replication workers; 0 means hardware concurrency.
  int threads = 1;
};

struct EstimatorSummary {
  Estimator estimator = Estimator::WGFE;
  Vector rmse;  // per theta component
  /// Mean and standard deviation across replications of the matched rate;
  /// absent for TwoWayFE.
  std::optional<double> misclass_mean;
  std::optional<double> misclass_sd;
  int n_ok = 0;
  int n_failed = 0;
  std::vector<std::string> failures;
};

struct StudyReport {
  std::vector<EstimatorSummary> estimators;
  int n_replications = 0;
  double runtime_seconds = 0.0;
  /// Per-replication matched rates, replication order, NaN for failures.
  std::vector<std::vector<double>> misclass;

  const EstimatorSummary& summary(Estimator e) const;
};

/// Replication r draws data from substream (spec.seed, r) and fits with
/// solver seed derived from the same pair, so the report does not depend on
/// thread scheduling.
StudyReport run_study(const SimulationSpec& spec, const std::set<Estimator>& estimators, int n_replications,
                      const StudyOptions& options = {});

}  // namespace wgfe::simlab
