#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace wgfe {

/// Row-major so that a unit's time profile is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Balanced N x T panel: outcomes y_it and p covariate matrices x_it,k.
class PanelDataset {
 public:
  PanelDataset() = default;
  PanelDataset(Matrix outcomes, std::vector<Matrix> covariates,
               std::vector<std::string> unit_labels = {},
               std::vector<std::string> period_labels = {});

  int n_units() const { return static_cast<int>(outcomes_.rows()); }
  int n_periods() const { return static_cast<int>(outcomes_.cols()); }
  int n_covariates() const { return static_cast<int>(covariates_.size()); }

  const Matrix& outcomes() const { return outcomes_; }
  const Matrix& covariate(int k) const { return covariates_[static_cast<std::size_t>(k)]; }
  const std::vector<Matrix>& covariates() const { return covariates_; }
  const std::vector<std::string>& unit_labels() const { return unit_labels_; }
  const std::vector<std::string>& period_labels() const { return period_labels_; }

  /// Sample standard deviation of all outcomes (zero for constant data).
  double outcome_sd() const { return outcome_sd_; }
  /// Lower bound applied to every group standard deviation.
  double sigma_floor() const;

 private:
  Matrix outcomes_;
  std::vector<Matrix> covariates_;
  std::vector<std::string> unit_labels_;
  std::vector<std::string> period_labels_;
  double outcome_sd_ = 0.0;
};

/// Hard group labels, zero-based internally (serialized one-based).
class GroupAssignment {
 public:
  GroupAssignment() = default;
  GroupAssignment(std::vector<int> labels, int n_groups);

  int n_units() const { return static_cast<int>(labels_.size()); }
  int n_groups() const { return n_groups_; }
  int operator[](int i) const { return labels_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& labels() const { return labels_; }
  void set(int i, int g);

  std::vector<int> counts() const;
  std::vector<int> empty_groups() const;
  bool has_empty_group() const { return !empty_groups().empty(); }

  bool operator==(const GroupAssignment&) const = default;

 private:
  std::vector<int> labels_;
  int n_groups_ = 0;
};

struct GroupParameters {
  Vector theta;  // p
  Matrix alpha;  // G x T
  Vector sigma;  // G, group root mean squared residual
  Vector weights;  // G, group shares
};

struct ObjectiveBreakdown {
  Vector per_group_ssr;  // Q_g, per-observation mean squared residual of group g
  Vector weights;        // P_g
  double value = 0.0;
};

}  // namespace wgfe
