#pragma once

// Heuristic minimizers of the WGFE and GFE criteria.

#include "wgfe/core_model.hpp"
#include "wgfe/panel.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace wgfe {

/// GGFE results come from ggfe::ggfe_descent; the Lloyd/VNS solvers accept
/// WGFE and GFE only.
enum class Mode { WGFE, GFE, GGFE };
enum class InitStrategy { PooledOLS, TwoWayFE, RandomDraw, Provided };
enum class EmptyGroupPolicy { ReseedFarthest, Fail };
enum class SearchAlgorithm { Lloyd, VNS };

const char* mode_name(Mode m);

struct SolverConfig {
  Mode mode = Mode::WGFE;
  int n_groups = 2;
  int max_lloyd_iters = 100;
  double theta_fp_tol = 1e-8;
  int theta_fp_max_iters = 500;
  int n_restarts = 20;
  int vns_neigh_max = 10;
  int vns_iter_max = 10;
  std::uint64_t seed = 0;
  InitStrategy init_strategy = InitStrategy::PooledOLS;
  EmptyGroupPolicy empty_group_policy = EmptyGroupPolicy::ReseedFarthest;
  SearchAlgorithm algorithm = SearchAlgorithm::VNS;
  AssignmentRule assignment_rule = AssignmentRule::Standard;
  /// Worker threads for restarts; 0 means hardware concurrency.
  int threads = 1;
  /// Starting slope vector for InitStrategy::Provided.
  Vector theta_init;
  bool record_trace = true;

  /// Throws Error(InvalidInput) when a knob violates its precondition.
  void validate(const PanelDataset& data) const;
};

struct EstimationResult {
  Mode mode = Mode::WGFE;
  GroupParameters params;
  GroupAssignment assignment;
  double objective = 0.0;
  ObjectiveBreakdown breakdown;
  int n_lloyd_iters = 0;
  int n_restarts_used = 0;
  bool converged = false;
  /// Objective after each update step of the (last) Lloyd run.
  std::vector<double> trace;
};

using Rng = std::mt19937_64;

/// Independent generator for restart `stream` derived from (seed, stream) by
/// a counter-based hash, so results do not depend on scheduling.
Rng substream(std::uint64_t seed, std::uint64_t stream);

struct FixedPointResult {
  Vector theta;
  Matrix alpha;
  Vector sigma;
  int iterations = 0;
  /// Relative max-norm gap between theta and the weighted LS solve at the
  /// returned sigma.
  double residual = 0.0;
  bool converged = false;
};

/// Successive substitution for the WGFE slope equation at a fixed grouping:
/// sigma <- sqrt(Q_g), alpha <- update_alpha, theta <- group-weighted LS with
/// weights 1/sigma_g. Throws NonConvergenceError at the iteration cap.
FixedPointResult solve_theta_fixed_point(const PanelDataset& data, const GroupAssignment& gamma,
                                         const Vector& theta_init, const SolverConfig& config);

/// Objective, breakdown and exact parameters of a grouping under the mode's
/// update (closed form for GFE, fixed point for WGFE).
EstimationResult score_partition(const PanelDataset& data, const GroupAssignment& gamma,
                                 const SolverConfig& config,
                                 const std::optional<Vector>& theta_start = std::nullopt);

/// Lloyd-type alternation of assignment and update from `init`. Stops at an
/// assignment fixed point (converged), at the iteration cap, or before a step
/// that would raise the objective by more than 1e-10 (not converged).
EstimationResult lloyd(const PanelDataset& data, const SolverConfig& config,
                       const GroupParameters& init);

/// Variable neighborhood search seeded from restart substream 0.
EstimationResult vns(const PanelDataset& data, const SolverConfig& config);
EstimationResult vns(const PanelDataset& data, const SolverConfig& config, Rng& rng);

GroupParameters initialize(const PanelDataset& data, const SolverConfig& config, Rng& rng);

/// Runs n_restarts searches (config.algorithm) on substreams 0..n-1 and keeps
/// the lowest objective; ties resolve to the lowest restart index.
EstimationResult multi_start(const PanelDataset& data, const SolverConfig& config);

/// Pooled OLS of y on x with a common intercept.
Vector pooled_ols(const PanelDataset& data);
/// Two-way (unit and period) within estimator.
Vector two_way_fe(const PanelDataset& data);

}  // namespace wgfe
