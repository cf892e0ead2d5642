#include "wgfe/panel.hpp"

#include "wgfe/errors.hpp"

#include <cmath>
#include <sstream>

namespace wgfe {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput:
      return "InvalidInput";
    case ErrorCode::EmptyGroup:
      return "EmptyGroup";
    case ErrorCode::SingularDesign:
      return "SingularDesign";
    case ErrorCode::NonConvergence:
      return "NonConvergence";
    case ErrorCode::NonSpdInput:
      return "NonSpdInput";
    case ErrorCode::IllConditioned:
      return "IllConditioned";
    case ErrorCode::GroupCountMismatch:
      return "GroupCountMismatch";
    case ErrorCode::ParseError:
      return "ParseError";
    case ErrorCode::UnbalancedPanel:
      return "UnbalancedPanel";
    case ErrorCode::DuplicateCell:
      return "DuplicateCell";
  }
  return "Unknown";
}

bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput:
    case ErrorCode::GroupCountMismatch:
    case ErrorCode::ParseError:
    case ErrorCode::UnbalancedPanel:
    case ErrorCode::DuplicateCell:
      return true;
    default:
      return false;
  }
}

namespace {
std::string empty_group_message(const std::vector<int>& groups) {
  std::ostringstream os;
  os << "empty group(s):";
  for (int g : groups) os << ' ' << (g + 1);
  return os.str();
}
}  // namespace

EmptyGroupError::EmptyGroupError(std::vector<int> groups)
    : Error(ErrorCode::EmptyGroup, empty_group_message(groups)), groups_(std::move(groups)) {}

PanelDataset::PanelDataset(Matrix outcomes, std::vector<Matrix> covariates,
                           std::vector<std::string> unit_labels,
                           std::vector<std::string> period_labels)
    : outcomes_(std::move(outcomes)),
      covariates_(std::move(covariates)),
      unit_labels_(std::move(unit_labels)),
      period_labels_(std::move(period_labels)) {
  const auto n = outcomes_.rows();
  const auto t = outcomes_.cols();
  if (n < 1 || t < 1) throw Error(ErrorCode::InvalidInput, "panel needs N >= 1 and T >= 1");
  if (!outcomes_.allFinite()) throw Error(ErrorCode::InvalidInput, "outcomes contain non-finite values");
  for (std::size_t k = 0; k < covariates_.size(); ++k) {
    const Matrix& x = covariates_[k];
    if (x.rows() != n || x.cols() != t) {
      throw Error(ErrorCode::InvalidInput, "covariate " + std::to_string(k + 1) + " has wrong shape");
    }
    if (!x.allFinite()) {
      throw Error(ErrorCode::InvalidInput,
                  "covariate " + std::to_string(k + 1) + " contains non-finite values");
    }
  }
  if (unit_labels_.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) unit_labels_.push_back(std::to_string(i + 1));
  }
  if (period_labels_.empty()) {
    for (Eigen::Index s = 0; s < t; ++s) period_labels_.push_back(std::to_string(s + 1));
  }
  if (static_cast<Eigen::Index>(unit_labels_.size()) != n ||
      static_cast<Eigen::Index>(period_labels_.size()) != t) {
    throw Error(ErrorCode::InvalidInput, "label vectors do not match panel dimensions");
  }
  const double count = static_cast<double>(outcomes_.size());
  if (count > 1) {
    const double mean = outcomes_.mean();
    outcome_sd_ = std::sqrt((outcomes_.array() - mean).square().sum() / (count - 1.0));
  }
}

double PanelDataset::sigma_floor() const {
  return 1e-8 * (outcome_sd_ > 0.0 ? outcome_sd_ : 1.0);
}

GroupAssignment::GroupAssignment(std::vector<int> labels, int n_groups)
    : labels_(std::move(labels)), n_groups_(n_groups) {
  if (n_groups_ < 1) throw Error(ErrorCode::InvalidInput, "number of groups must be >= 1");
  for (int g : labels_) {
    if (g < 0 || g >= n_groups_) throw Error(ErrorCode::InvalidInput, "group label out of range");
  }
}

void GroupAssignment::set(int i, int g) {
  if (g < 0 || g >= n_groups_) throw Error(ErrorCode::InvalidInput, "group label out of range");
  labels_[static_cast<std::size_t>(i)] = g;
}

std::vector<int> GroupAssignment::counts() const {
  std::vector<int> c(static_cast<std::size_t>(n_groups_), 0);
  for (int g : labels_) ++c[static_cast<std::size_t>(g)];
  return c;
}

std::vector<int> GroupAssignment::empty_groups() const {
  std::vector<int> out;
  const auto c = counts();
  for (int g = 0; g < n_groups_; ++g) {
    if (c[static_cast<std::size_t>(g)] == 0) out.push_back(g);
  }
  return out;
}

}  // namespace wgfe
