#include "rfusion/minimax_solver.hpp"

#include <Eigen/QR>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace rfusion {

void SolverConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("SolverConfig: " + msg); };
  if (!(t_init > 0.0)) fail("t_init must be > 0");
  if (!(mu > 1.0)) fail("mu must be > 1");
  if (!(gap_tol > 0.0)) fail("gap_tol must be > 0");
  if (!(residual_tol > 0.0)) fail("residual_tol must be > 0");
  if (!(stall_tol >= residual_tol)) fail("stall_tol must be >= residual_tol");
  if (!(alpha > 0.0 && alpha < 0.5)) fail("alpha must lie in (0, 0.5)");
  if (!(beta > 0.0 && beta < 1.0)) fail("beta must lie in (0, 1)");
  if (max_inner_iters < 1) fail("max_inner_iters must be >= 1");
  if (max_outer_iters < 1) fail("max_outer_iters must be >= 1");
}

namespace {

// The equilibrated Newton system is routinely very ill-conditioned near the
// boundary at large t and still yields usable directions (the line search
// guards every step), so LU is only bypassed on exact breakdown.
constexpr double kSingularRcond = std::numeric_limits<double>::min();

// Adds s * (dA -> A op(dA) B) to J, where dA is dr x dc and op is the identity
// or the transpose. Rows and columns use row-major vectorization.
void add_sandwich(Matrix& jac, Index r0, Index c0, const Matrix& a, const Matrix& b, double s,
                  bool transposed, Index dr, Index dc) {
  const Index out_cols = b.cols();
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < out_cols; ++j) {
      const Index row = r0 + i * out_cols + j;
      if (!transposed) {
        for (Index k = 0; k < dr; ++k) {
          const double aik = s * a(i, k);
          if (aik == 0.0) continue;
          for (Index l = 0; l < dc; ++l) jac(row, c0 + k * dc + l) += aik * b(l, j);
        }
      } else {
        for (Index k = 0; k < dc; ++k) {
          const double aik = s * a(i, k);
          if (aik == 0.0) continue;
          for (Index l = 0; l < dr; ++l) jac(row, c0 + l * dc + k) += aik * b(l, j);
        }
      }
    }
  }
}

void flatten_into(Vector& out, Index offset, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out(offset + i * m.cols() + j) = m(i, j);
}

Matrix unflatten_from(const Vector& v, Index offset, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = v(offset + i * cols + j);
  return m;
}

}  // namespace

GameProblem::GameProblem(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                         const LinearMeasurementModel& model)
    : model_(model),
      sxx_(sxx.data()),
      syy_(syy.data()),
      seta_(model.noise_cov.data()),
      c_(model.C),
      d_(model.D) {
  model.check_dims(sxx.dim(), syy.dim());
  if (!sxx.is_strictly_pd() || !syy.is_strictly_pd()) {
    throw SingularityError("GameProblem: prior covariances must be strictly positive definite");
  }
  Eigen::LLT<Matrix> llt(sxx_);
  sxx_inv_ = symmetrize(llt.solve(Matrix::Identity(n(), n())));
  sxx_chol_ = llt.matrixL();
  syy_inv_sqrt_ = inv_sqrt(syy);
  syy_sqrt_ = sqrtm(syy);
  c_sxx_ = c_ * sxx_;
  base_innov_ = symmetrize(c_sxx_ * c_.transpose() + d_ * syy_ * d_.transpose() + seta_);
}

Vector GameProblem::flatten(const Matrix& x, const Matrix& q) const {
  Vector v(num_unknowns());
  flatten_into(v, 0, x);
  flatten_into(v, m() * n(), q);
  return v;
}

std::pair<Matrix, Matrix> GameProblem::unflatten(const Vector& v) const {
  if (v.size() != num_unknowns()) throw DimensionError("GameProblem::unflatten: wrong length");
  return {unflatten_from(v, 0, m(), n()), unflatten_from(v, m() * n(), n(), q())};
}

Matrix GameProblem::mixed_innovation_cov(const Matrix& q) const {
  Matrix cqd = c_ * q * d_.transpose();
  return base_innov_ + cqd + cqd.transpose();
}

Matrix GameProblem::posterior_covariance(const Matrix& x, const Matrix& q) const {
  if (x.rows() != m() || x.cols() != n() || q.rows() != n() || q.cols() != this->q()) {
    throw DimensionError("GameProblem: X or Q has the wrong shape");
  }
  const Matrix kt = x.transpose();  // K
  const Matrix left = Matrix::Identity(n(), n()) - kt * c_;
  const Matrix right = -kt * d_;
  Matrix lqr = left * q * right.transpose();
  Matrix cov = left * sxx_ * left.transpose() + lqr + lqr.transpose() +
               right * syy_ * right.transpose() + kt * seta_ * x;
  return symmetrize(cov);
}

double GameProblem::payoff(const Matrix& x, const Matrix& q) const {
  return posterior_covariance(x, q).trace();
}

Matrix GameProblem::barrier_argument(const Matrix& q) const {
  if (q.rows() != n() || q.cols() != this->q()) throw DimensionError("GameProblem: Q has the wrong shape");
  const Matrix p = whitened_cross(q);
  return symmetrize(Matrix::Identity(this->q(), this->q()) - p.transpose() * p);
}

Matrix GameProblem::whitened_cross(const Matrix& q) const {
  Matrix p = sxx_chol_.triangularView<Eigen::Lower>().solve(q);
  return p * syy_inv_sqrt_;
}

bool GameProblem::strictly_feasible(const Matrix& q) const {
  if (this->q() == 0) return true;
  if (!q.allFinite()) return false;
  Eigen::LLT<Matrix> llt(barrier_argument(q));
  if (llt.info() != Eigen::Success) return false;
  return llt.matrixLLT().diagonal().minCoeff() > 0.0;
}

double GameProblem::barrier_payoff(const Matrix& x, const Matrix& q, double t) const {
  double logdet = 0.0;
  if (this->q() > 0) {
    Eigen::LLT<Matrix> llt(barrier_argument(q));
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
      throw InfeasibleError("barrier_payoff: Q is on or outside the feasible boundary");
    }
    logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
  return t * payoff(x, q) + logdet;
}

GameProblem::BarrierTerms GameProblem::barrier_terms(const Matrix& q) const {
  BarrierTerms terms;
  terms.p = sxx_inv_ * q;
  if (this->q() == 0) {
    terms.g1 = Matrix(0, 0);
    return terms;
  }
  Eigen::LLT<Matrix> llt(barrier_argument(q));
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
    throw InfeasibleError("GameProblem: Q is on or outside the feasible boundary");
  }
  // f1^{-1} = -(I - S Q^T Sxx^{-1} Q S)^{-1}
  Matrix f1_inv = -llt.solve(Matrix::Identity(this->q(), this->q()));
  terms.g1 = symmetrize(syy_inv_sqrt_ * f1_inv * syy_inv_sqrt_);
  return terms;
}

std::pair<Matrix, Matrix> GameProblem::gradients(const Matrix& x, const Matrix& q, double t) const {
  if (x.rows() != m() || x.cols() != n()) throw DimensionError("GameProblem: X has the wrong shape");
  const BarrierTerms bt = barrier_terms(q);
  Matrix grad_x = 2.0 * t * (mixed_innovation_cov(q) * x - (c_sxx_ + d_ * q.transpose()));
  Matrix xtd = x.transpose() * d_;
  Matrix grad_q = 2.0 * t * (c_.transpose() * x * xtd - xtd) + 2.0 * bt.p * bt.g1;
  return {std::move(grad_x), std::move(grad_q)};
}

Vector GameProblem::residual(const Matrix& x, const Matrix& q, double t) const {
  auto [gx, gq] = gradients(x, q, t);
  return flatten(gx, gq);
}

Vector GameProblem::scaled_residual(const Matrix& x, const Matrix& q, double t) const {
  if (x.rows() != m() || x.cols() != n()) throw DimensionError("GameProblem: X has the wrong shape");
  Matrix grad_x = 2.0 * t * (mixed_innovation_cov(q) * x - (c_sxx_ + d_ * q.transpose()));
  const Matrix xtd = x.transpose() * d_;
  Matrix grad_p = sxx_chol_.transpose() * (2.0 * t * (c_.transpose() * x * xtd - xtd)) * syy_sqrt_;
  if (this->q() > 0) {
    const Matrix p = whitened_cross(q);
    Eigen::LLT<Matrix> llt(symmetrize(Matrix::Identity(this->q(), this->q()) - p.transpose() * p));
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
      throw InfeasibleError("GameProblem: Q is on or outside the feasible boundary");
    }
    // Lx^T (2 Sxx^{-1} Q g1) Syy^{1/2} = 2 P f1^{-1}
    grad_p -= 2.0 * llt.solve(p.transpose()).transpose();
  }
  return flatten(grad_x, grad_p);
}

std::pair<Matrix, Matrix> GameProblem::apply_differential(const Matrix& x, const Matrix& q, double t,
                                                          const Matrix& dx, const Matrix& dq) const {
  const BarrierTerms bt = barrier_terms(q);
  const Matrix w = Matrix::Identity(n(), n()) - c_.transpose() * x;
  Matrix out_x = 2.0 * t * (mixed_innovation_cov(q) * dx) +
                 2.0 * t * (c_ * dq * d_.transpose() * x - d_ * dq.transpose() * w);
  Matrix inner = dq.transpose() * sxx_inv_ * q + q.transpose() * sxx_inv_ * dq;
  Matrix out_q = 2.0 * t * (c_.transpose() * dx * x.transpose() * d_ - w * dx.transpose() * d_) -
                 2.0 * bt.p * bt.g1 * inner * bt.g1 + 2.0 * sxx_inv_ * dq * bt.g1;
  return {std::move(out_x), std::move(out_q)};
}

Matrix GameProblem::jacobian(const Matrix& x, const Matrix& q, double t) const {
  const BarrierTerms bt = barrier_terms(q);
  const Index nx = m() * n();
  const Index nn = n(), mm = m(), qq = this->q();
  const Matrix w = Matrix::Identity(nn, nn) - c_.transpose() * x;
  const Matrix dtx = d_.transpose() * x;  // q x n
  const Matrix xtd = dtx.transpose();     // n x q
  const Matrix pg = bt.p * bt.g1;         // n x q

  Matrix jac = Matrix::Zero(num_unknowns(), num_unknowns());
  // d(grad_X) / dX : 2t M dX
  add_sandwich(jac, 0, 0, mixed_innovation_cov(q), Matrix::Identity(nn, nn), 2.0 * t, false, mm, nn);
  // d(grad_X) / dQ : 2t (C dQ D^T X - D dQ^T (I - C^T X))
  add_sandwich(jac, 0, nx, c_, dtx, 2.0 * t, false, nn, qq);
  add_sandwich(jac, 0, nx, d_, w, -2.0 * t, true, nn, qq);
  // d(grad_Q) / dX : 2t (C^T dX X^T D - (I - C^T X) dX^T D)
  add_sandwich(jac, nx, 0, c_.transpose(), xtd, 2.0 * t, false, mm, nn);
  add_sandwich(jac, nx, 0, w, d_, -2.0 * t, true, mm, nn);
  // d(grad_Q) / dQ : -2 P g1 (dQ^T P + P^T dQ) g1 + 2 Sxx^{-1} dQ g1
  add_sandwich(jac, nx, nx, pg, pg, -2.0, true, nn, qq);
  add_sandwich(jac, nx, nx, pg * bt.p.transpose(), bt.g1, -2.0, false, nn, qq);
  add_sandwich(jac, nx, nx, sxx_inv_, bt.g1, 2.0, false, nn, qq);
  return jac;
}

std::pair<Matrix, Matrix> GameProblem::newton_step(const Matrix& x, const Matrix& q, double t) const {
  // Congruence T = blockdiag(I, Lx (x) Syy^{1/2}) maps whitened steps dP to
  // dQ = Lx dP Syy^{1/2}; the Newton direction itself is unchanged.
  const Index nx = m() * n();
  const Index qq = this->q();
  Matrix tmat = Matrix::Identity(num_unknowns(), num_unknowns());
  for (Index i = 0; i < n(); ++i)
    for (Index k = 0; k < n(); ++k) {
      const double lik = sxx_chol_(i, k);
      if (lik == 0.0) continue;
      tmat.block(nx + i * qq, nx + k * qq, qq, qq) = lik * syy_sqrt_;
    }
  const Vector r = scaled_residual(x, q, t);
  const Matrix jac = tmat.transpose() * jacobian(x, q, t) * tmat;
  // Symmetric diagonal equilibration; the Hessian blocks scale very differently
  // once Q approaches the boundary.
  Vector scale(jac.rows());
  for (Index i = 0; i < jac.rows(); ++i) {
    const double dii = std::abs(jac(i, i));
    scale(i) = dii > 0.0 ? 1.0 / std::sqrt(dii) : 1.0;
  }
  const Matrix scaled = scale.asDiagonal() * jac * scale.asDiagonal();
  const Vector rhs = -(scale.asDiagonal() * r);
  Eigen::PartialPivLU<Matrix> lu(scaled);
  const double rcond = lu.rcond();
  Vector y;
  if (rcond > kSingularRcond) y = lu.solve(rhs);
  if (y.size() == 0 || !y.allFinite()) {
    // Numerically rank-deficient at large t: fall back to the minimum-norm
    // least-squares direction; the line search still decides acceptance.
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(scaled);
    if (cod.rank() == 0) {
      std::ostringstream os;
      os << "newton_step: Newton system is singular (reciprocal condition estimate " << rcond << ")";
      throw SingularityError(os.str());
    }
    y = cod.solve(rhs);
  }
  Vector step = tmat * (scale.asDiagonal() * y);
  if (!step.allFinite()) throw SingularityError("newton_step: non-finite Newton direction");
  return unflatten(step);
}

GamePoint GameProblem::initial_point() const {
  Eigen::SelfAdjointEigenSolver<Matrix> es(base_innov_);
  if (m() > 0 && es.eigenvalues().minCoeff() < kStrictPdFloor) {
    throw SingularityError(
        "initial_point: C Sxx C^T + D Syy D^T + Seta is singular; add measurement noise to the model");
  }
  GamePoint pt;
  pt.X = base_innov_.ldlt().solve(c_sxx_);
  pt.Q = Matrix::Zero(n(), q());
  return pt;
}

GamePoint GameProblem::solve_inner(const GamePoint& start, double t, const SolverConfig& cfg,
                                   const IterationObserver& observer, int* iterations) const {
  if (!strictly_feasible(start.Q)) {
    throw InfeasibleError("solve_inner: starting Q is not strictly feasible");
  }
  const double tol = cfg.residual_tol * std::max(1.0, t);
  GamePoint pt = start;
  Vector r = scaled_residual(pt.X, pt.Q, t);
  double norm = r.norm();
  for (int iter = 0; iter < cfg.max_inner_iters; ++iter) {
    if (norm <= tol) return pt;
    auto [dx, dq] = newton_step(pt.X, pt.Q, t);

    double s = 1.0;
    GamePoint trial;
    Vector r_trial;
    double norm_trial = std::numeric_limits<double>::infinity();
    bool accepted = false;
    while (s > 1e-14) {
      trial.X = pt.X + s * dx;
      trial.Q = pt.Q + s * dq;
      if (strictly_feasible(trial.Q)) {
        r_trial = scaled_residual(trial.X, trial.Q, t);
        norm_trial = r_trial.norm();
        if (norm_trial <= (1.0 - cfg.alpha * s) * norm) {
          accepted = true;
          break;
        }
      }
      s *= cfg.beta;
    }
    if (!accepted) {
      // Round-off floor: either the residual is already small, or the full
      // Newton step no longer moves the iterate beyond working precision.
      const double rel_step = std::max(dx.norm() / (1.0 + pt.X.norm()), dq.norm() / (1.0 + pt.Q.norm()));
      if (norm <= cfg.stall_tol * std::max(1.0, t) || rel_step <= cfg.stall_tol) return pt;
      std::ostringstream os;
      os << "solve_inner: line search stalled at t = " << t << " with residual norm " << norm;
      throw ConvergenceError(os.str(), norm);
    }
    pt = std::move(trial);
    r = std::move(r_trial);
    norm = norm_trial;
    if (iterations) ++*iterations;
    if (observer) observer({t, iter + 1, norm, payoff(pt.X, pt.Q)});
  }
  if (norm <= tol) return pt;
  std::ostringstream os;
  os << "solve_inner: no convergence after " << cfg.max_inner_iters << " iterations at t = " << t
     << " (residual norm " << norm << ")";
  throw ConvergenceError(os.str(), norm);
}

GameSolution GameProblem::solve(const SolverConfig& cfg, const IterationObserver& observer) const {
  cfg.validate();
  GamePoint pt = initial_point();
  GameSolution sol;
  double t = cfg.t_init;
  bool done = false;
  for (int outer = 0; outer < cfg.max_outer_iters; ++outer) {
    pt = solve_inner(pt, t, cfg, observer, &sol.iterations);
    sol.stage_payoffs.push_back(payoff(pt.X, pt.Q));
    if (static_cast<double>(q()) / t < cfg.gap_tol) {
      done = true;
      break;
    }
    t *= cfg.mu;
  }
  const double last_norm = residual(pt.X, pt.Q, t).norm() / std::max(1.0, t);
  if (!done) {
    throw ConvergenceError("solve_game: barrier gap not reached within max_outer_iters", last_norm);
  }
  sol.K_star = pt.X.transpose();
  sol.Q_star = pt.Q;
  sol.cov_out = CovarianceMatrix(posterior_covariance(pt.X, pt.Q));
  sol.payoff = sol.cov_out.trace();
  sol.residual_norm = last_norm;
  sol.final_t = t;
  return sol;
}

double payoff(const Matrix& x, const Matrix& q, const CovarianceMatrix& sxx,
              const CovarianceMatrix& syy, const LinearMeasurementModel& model) {
  return GameProblem(sxx, syy, model).payoff(x, q);
}

double barrier_payoff(const Matrix& x, const Matrix& q, double t, const CovarianceMatrix& sxx,
                      const CovarianceMatrix& syy, const LinearMeasurementModel& model) {
  return GameProblem(sxx, syy, model).barrier_payoff(x, q, t);
}

Vector residual(const Matrix& x, const Matrix& q, double t, const CovarianceMatrix& sxx,
                const CovarianceMatrix& syy, const LinearMeasurementModel& model) {
  return GameProblem(sxx, syy, model).residual(x, q, t);
}

std::pair<Matrix, Matrix> newton_step(const Matrix& x, const Matrix& q, double t,
                                      const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                                      const LinearMeasurementModel& model) {
  return GameProblem(sxx, syy, model).newton_step(x, q, t);
}

GamePoint solve_inner(const GamePoint& start, double t, const CovarianceMatrix& sxx,
                      const CovarianceMatrix& syy, const LinearMeasurementModel& model,
                      const SolverConfig& cfg, const IterationObserver& observer) {
  cfg.validate();
  return GameProblem(sxx, syy, model).solve_inner(start, t, cfg, observer);
}

GamePoint initial_point(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                        const LinearMeasurementModel& model) {
  return GameProblem(sxx, syy, model).initial_point();
}

GameSolution solve_game(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                        const LinearMeasurementModel& model, const SolverConfig& cfg,
                        const IterationObserver& observer) {
  return GameProblem(sxx, syy, model).solve(cfg, observer);
}

}  // namespace rfusion
