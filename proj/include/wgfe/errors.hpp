#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace wgfe {

enum class ErrorCode {
  InvalidInput,
  EmptyGroup,
  SingularDesign,
  NonConvergence,
  NonSpdInput,
  IllConditioned,
  GroupCountMismatch,
  ParseError,
  UnbalancedPanel,
  DuplicateCell,
};

const char* error_code_name(ErrorCode code);

/// True for codes caused by bad user input rather than numerics.
bool is_input_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class EmptyGroupError : public Error {
 public:
  explicit EmptyGroupError(std::vector<int> groups);
  /// Zero-based indices of the empty groups.
  const std::vector<int>& groups() const noexcept { return groups_; }

 private:
  std::vector<int> groups_;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, double residual, int iterations)
      : Error(ErrorCode::NonConvergence, what), residual_(residual), iterations_(iterations) {}
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

}  // namespace wgfe
