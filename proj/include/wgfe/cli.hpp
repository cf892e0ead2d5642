#pragma once

// Command implementations behind the `wgfe` executable. Each returns the
// process exit status and writes one JSON document.

#include "wgfe/solvers.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace wgfe::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kInputError = 2, kNumericError = 3 };

struct RunConfig {
  std::string command;
  std::string input;        // panel CSV
  std::string out;          // JSON path; empty writes to the stream
  std::string curves;       // curve CSV path (simulate)
  std::string truth;        // optional `unit,group` CSV (estimate)
  std::string spec;         // optional simulation spec JSON (simulate)
  Mode mode = Mode::WGFE;
  int groups = 2;
  int gmax = 5;
  int restarts = 20;
  std::uint64_t seed = 0;
  /// 0 means hardware concurrency.
  int threads = 0;
  double tol = 1e-8;
  int max_iters = 100;
  AssignmentRule rule = AssignmentRule::Standard;
  int replications = 200;
  double bic_penalty = 1.0;
};

/// Solver knobs shared by every command.
SolverConfig solver_config(const RunConfig& cfg);

int cmd_estimate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_select_g(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_test_homoskedasticity(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Dispatches on cfg.command.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace wgfe::cli
