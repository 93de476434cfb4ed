#pragma once

// Barrier method with an infeasible-start Newton inner loop for the game
//
//   min_X  max_Q  trace([I - X^T C, -X^T D] [[Sxx, Q], [Q^T, Syy]] [...]^T + X^T Seta X)
//   s.t.   Syy^{-1/2} Q^T Sxx^{-1} Q Syy^{-1/2} <= I
//
// where X = K^T is the transposed gain and Q the unknown cross-covariance.
// Unknowns are flattened as [vec(X); vec(Q)], each block in row-major order.

#include "rfusion/estimate_core.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace rfusion {

struct GamePoint {
  Matrix X;  // m x n,  X = K^T
  Matrix Q;  // n x q,  candidate Sigma_xy
};

struct SolverConfig {
  double t_init = 1.0;
  double mu = 10.0;
  double gap_tol = 1e-8;       // outer stop: q / t < gap_tol
  double residual_tol = 1e-10;  // inner stop on ||r|| / max(1, t)
  // When the line search can no longer reduce ||r|| (round-off floor near the
  // boundary at large t), the point is accepted if ||r|| / max(1, t) <= stall_tol
  // or the relative Newton step is <= stall_tol.
  double stall_tol = 1e-6;
  double alpha = 0.1;
  double beta = 0.5;
  int max_inner_iters = 100;
  int max_outer_iters = 20;

  /// Throws std::invalid_argument on out-of-range parameters.
  void validate() const;
};

/// One accepted inner iteration (emitted to an optional observer).
struct IterationRecord {
  double outer_t = 0.0;
  int iter = 0;
  double residual_norm = 0.0;
  double payoff = 0.0;
};

using IterationObserver = std::function<void(const IterationRecord&)>;

struct GameSolution {
  Matrix K_star;             // n x m
  Matrix Q_star;             // n x q
  CovarianceMatrix cov_out;  // Sigma_xx^+ at (K*, Q*)
  double payoff = 0.0;       // trace(cov_out)
  double residual_norm = 0.0;  // ||r|| / t at the final barrier weight
  int iterations = 0;          // accepted Newton steps over all barrier stages
  double final_t = 0.0;
  std::vector<double> stage_payoffs;  // payoff after each barrier stage
};

/// A fixed instance (Sxx, Syy, model) with the factorizations it needs cached.
/// All members are const after construction.
class GameProblem {
 public:
  GameProblem(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
              const LinearMeasurementModel& model);

  Index n() const noexcept { return sxx_.rows(); }
  Index q() const noexcept { return syy_.rows(); }
  Index m() const noexcept { return c_.rows(); }
  /// Length of the flattened unknown / residual vector, m*n + n*q.
  Index num_unknowns() const noexcept { return m() * n() + n() * q(); }

  double payoff(const Matrix& x, const Matrix& q) const;
  /// Sigma_xx^+ for gain K = X^T and cross-covariance Q (symmetrized).
  Matrix posterior_covariance(const Matrix& x, const Matrix& q) const;

  /// I - Syy^{-1/2} Q^T Sxx^{-1} Q Syy^{-1/2}, i.e. -f1(Q).
  Matrix barrier_argument(const Matrix& q) const;
  bool strictly_feasible(const Matrix& q) const;

  /// t * payoff + log det(-f1(Q)). Throws InfeasibleError outside the barrier domain.
  double barrier_payoff(const Matrix& x, const Matrix& q, double t) const;

  /// Gradients of the barrier payoff with respect to X and Q.
  std::pair<Matrix, Matrix> gradients(const Matrix& x, const Matrix& q, double t) const;
  /// [vec(grad_X); vec(grad_Q)].
  Vector residual(const Matrix& x, const Matrix& q, double t) const;
  /// Residual in whitened cross-covariance coordinates Q = Lx P Syy^{1/2}
  /// (Lx Lx^T = Sxx): [vec(grad_X); vec(Lx^T grad_Q Syy^{1/2})]. Same zeros as
  /// `residual`, but far less round-off when Sxx is ill-conditioned. The inner
  /// loop tests and backtracks on this norm.
  Vector scaled_residual(const Matrix& x, const Matrix& q, double t) const;

  /// Differential of the residual at (X, Q) along (dX, dQ), evaluated from
  /// the matrix expressions directly.
  std::pair<Matrix, Matrix> apply_differential(const Matrix& x, const Matrix& q, double t,
                                               const Matrix& dx, const Matrix& dq) const;
  /// Dense Jacobian of `residual`, consistent with apply_differential.
  Matrix jacobian(const Matrix& x, const Matrix& q, double t) const;

  /// Solves Dr[dX, dQ] = -r (assembled in whitened coordinates). Throws
  /// SingularityError when the system is singular.
  std::pair<Matrix, Matrix> newton_step(const Matrix& x, const Matrix& q, double t) const;

  /// Q0 = 0 and (C Sxx C^T + D Syy D^T + Seta) X0 = C Sxx.
  GamePoint initial_point() const;

  GamePoint solve_inner(const GamePoint& start, double t, const SolverConfig& cfg,
                        const IterationObserver& observer = {}, int* iterations = nullptr) const;

  GameSolution solve(const SolverConfig& cfg = {}, const IterationObserver& observer = {}) const;

  const Matrix& sxx() const noexcept { return sxx_; }
  const Matrix& syy() const noexcept { return syy_; }
  const LinearMeasurementModel& model() const noexcept { return model_; }

  Vector flatten(const Matrix& x, const Matrix& q) const;
  std::pair<Matrix, Matrix> unflatten(const Vector& v) const;

 private:
  struct BarrierTerms {
    Matrix p;   // Sxx^{-1} Q
    Matrix g1;  // Syy^{-1/2} f1(Q)^{-1} Syy^{-1/2}
  };
  BarrierTerms barrier_terms(const Matrix& q) const;
  Matrix whitened_cross(const Matrix& q) const;  // Lx^{-1} Q Syy^{-1/2}
  Matrix mixed_innovation_cov(const Matrix& q) const;

  LinearMeasurementModel model_;
  Matrix sxx_, syy_, seta_, c_, d_;
  Matrix sxx_inv_;
  Matrix sxx_chol_;  // lower Cholesky factor Lx
  Matrix syy_inv_sqrt_;
  Matrix syy_sqrt_;
  Matrix c_sxx_;      // C Sxx
  Matrix base_innov_;  // C Sxx C^T + D Syy D^T + Seta
};

double payoff(const Matrix& x, const Matrix& q, const CovarianceMatrix& sxx,
              const CovarianceMatrix& syy, const LinearMeasurementModel& model);
double barrier_payoff(const Matrix& x, const Matrix& q, double t, const CovarianceMatrix& sxx,
                      const CovarianceMatrix& syy, const LinearMeasurementModel& model);
Vector residual(const Matrix& x, const Matrix& q, double t, const CovarianceMatrix& sxx,
                const CovarianceMatrix& syy, const LinearMeasurementModel& model);
std::pair<Matrix, Matrix> newton_step(const Matrix& x, const Matrix& q, double t,
                                      const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                                      const LinearMeasurementModel& model);
GamePoint solve_inner(const GamePoint& start, double t, const CovarianceMatrix& sxx,
                      const CovarianceMatrix& syy, const LinearMeasurementModel& model,
                      const SolverConfig& cfg, const IterationObserver& observer = {});
GamePoint initial_point(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                        const LinearMeasurementModel& model);
GameSolution solve_game(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                        const LinearMeasurementModel& model, const SolverConfig& cfg = {},
                        const IterationObserver& observer = {});

}  // namespace rfusion
