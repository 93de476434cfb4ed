#pragma once

// Fusion and update rules for two estimates with unknown cross-correlation:
// Robust Fusion (minimax gain), Covariance Intersection and Naive Fusion.

#include "rfusion/estimate_core.hpp"
#include "rfusion/minimax_solver.hpp"

#include <functional>
#include <optional>

namespace rfusion {

enum class FusionMethod { Robust, CovarianceIntersection, Naive };

const char* to_string(FusionMethod method);
/// Accepts "rf", "ci", "nf" (case-insensitive). Throws std::invalid_argument.
FusionMethod parse_fusion_method(const std::string& name);

struct FusionResult {
  Estimate estimate;
  Matrix gain;                                // K
  std::optional<Matrix> worst_case_cross;     // RF only
  std::optional<double> ci_omega;             // CI only
  std::optional<GameSolution> game;           // RF only
};

/// Minimax fusion z = (I - K) x + K y of two estimates of the same quantity.
FusionResult robust_fuse(const Estimate& ex, const Estimate& ey, const SolverConfig& cfg = {},
                         const IterationObserver& observer = {});

/// x+ = x + K (z - C x - D y) with the minimax gain; covariance is Sigma_xx^+ at
/// the saddle point.
FusionResult robust_linear_update(const Estimate& ex, const Estimate& ey, const Vector& z,
                                  const LinearMeasurementModel& model,
                                  const SolverConfig& cfg = {},
                                  const IterationObserver& observer = {});

/// Trace-optimal Covariance Intersection of two estimates.
FusionResult covariance_intersection(const Estimate& ex, const Estimate& ey);

/// Covariance Intersection between the prior on x and the information that
/// the measurement carries about x once y is substituted:
///   P+^{-1} = w Sxx^{-1} + (1 - w) C^T Sw^{-1} C,   Sw = D Syy D^T + Seta.
FusionResult ci_linear_update(const Estimate& ex, const Estimate& ey, const Vector& z,
                              const LinearMeasurementModel& model);

/// Same update as ci_linear_update for a fixed weight w in [0, 1].
FusionResult ci_linear_update_fixed(const Estimate& ex, const Estimate& ey, const Vector& z,
                                    const LinearMeasurementModel& model, double omega);

/// Minimum-variance update that assumes Sigma_xy = 0.
FusionResult naive_linear_update(const Estimate& ex, const Estimate& ey, const Vector& z,
                                 const LinearMeasurementModel& model);

/// Argmin of a unimodal f on [lo, hi] by golden-section search, with both
/// endpoints compared against the interior minimizer.
double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                               double tol = 1e-10);

}  // namespace rfusion
