#pragma once

// JSON encoding of matrices, estimates, models, solver and simulation
// configs. Matrices are row-major nested arrays; covariances are objects
// {"dim": n, "data": [[...]]}.

#include "rfusion/dse_simulator.hpp"
#include "rfusion/estimate_core.hpp"
#include "rfusion/fusion.hpp"
#include "rfusion/minimax_solver.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>

namespace rfusion {

using Json = nlohmann::json;

/// Bad input document; the message starts with the offending field path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& msg)
      : std::runtime_error(field + ": " + msg), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j, const std::string& field = "matrix");
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j, const std::string& field = "vector");

Json covariance_to_json(const CovarianceMatrix& c);
/// Accepts {"dim", "data"} or a bare nested array.
CovarianceMatrix covariance_from_json(const Json& j, const std::string& field = "cov");

Json estimate_to_json(const Estimate& e);
Estimate estimate_from_json(const Json& j, const std::string& field = "estimate");

Json model_to_json(const LinearMeasurementModel& m);
/// {"C": [[...]], "D": [[...]], "noise_cov": cov}
LinearMeasurementModel model_from_json(const Json& j, const std::string& field = "model");

Json fusion_result_to_json(const FusionResult& r, FusionMethod method);

Json solver_config_to_json(const SolverConfig& cfg);
/// Keys missing from `j` keep the values in `base`; unknown keys are errors.
SolverConfig solver_config_from_json(const Json& j, SolverConfig base = {},
                                     const std::string& field = "solver");

Json sim_config_to_json(const dse::SimConfig& cfg);
dse::SimConfig sim_config_from_json(const Json& j, const std::string& field = "config");

/// Applies "dotted.key=value" with a JSON scalar value, e.g. "steps=100",
/// "solver.mu=20", "inject_noise=false". Matrix and list fields are rejected.
void apply_override(dse::SimConfig& cfg, const std::string& assignment);
void apply_override(SolverConfig& cfg, const std::string& assignment);

}  // namespace rfusion
