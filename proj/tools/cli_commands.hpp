#pragma once

// Subcommands of the rfusion tool. Each returns a process exit code:
//   0  all computations converged and all files were written
//   1  a computation failed (solver, singular or infeasible input)
//   2  invalid arguments or input documents
//   3  an output file could not be written

#include "rfusion/dse_simulator.hpp"
#include "rfusion/minimax_solver.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rfusion::cli {

enum ExitCode : int { kOk = 0, kComputeError = 1, kUsageError = 2, kIoError = 3 };

enum class LogLevel { Off = 0, Info = 1, Trace = 2 };

/// The larger of the -v count (1 = info, 2+ = trace) and RF_LOG (info|trace).
LogLevel resolve_log_level(int verbosity, const char* rf_log);

struct ExamplesOptions {
  double tol = 1e-2;
  std::string out_path = "examples_report.json";
  LogLevel log = LogLevel::Off;
};

struct SimulateOptions {
  std::optional<std::string> config_path;  // defaults when absent
  std::string out_dir = "sim_out";
  std::optional<std::string> estimators;  // "RF,CI"
  std::optional<std::string> seeds;       // "1,2,5-8"
  std::vector<std::string> overrides;     // "key=value"
  LogLevel log = LogLevel::Off;
};

struct FuseOptions {
  std::string x_path;
  std::string y_path;
  std::optional<std::string> model_path;
  std::optional<std::string> z;  // "v1,v2,..."
  std::string method = "rf";
  std::optional<std::string> out_path;  // stdout when absent
  std::vector<std::string> overrides;   // solver.key=value
  LogLevel log = LogLevel::Off;
};

int cmd_examples(const ExamplesOptions& opts, std::ostream& out, std::ostream& err);
int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err);
int cmd_fuse(const FuseOptions& opts, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches to the subcommands above.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

std::vector<dse::EstimatorKind> parse_estimator_list(const std::string& text);
/// Comma-separated seeds; "a-b" expands to the inclusive range.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::vector<double> parse_number_list(const std::string& text);

/// JSON-lines observer writing {outer_t, iter, residual_norm, payoff} to `err`.
IterationObserver trace_observer(std::ostream& err, const std::string& context);

}  // namespace rfusion::cli
