#include "rfusion/fusion.hpp"
#include "rfusion/minimax_solver.hpp"

#include "support/instances.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace rfusion;

namespace {

Matrix diag(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v(i++) = x;
  return v.asDiagonal();
}

GameProblem problem_of(const oracle::GameInstance& inst) {
  return GameProblem(CovarianceMatrix(inst.sxx), CovarianceMatrix(inst.syy), inst.model);
}

// A strictly feasible random (X, Q) for the instance.
GamePoint random_point(oracle::Gen& g, const oracle::GameInstance& inst, double max_rho = 0.9) {
  GamePoint pt;
  pt.X = g.normal_matrix(inst.model.C.rows(), inst.sxx.rows()) * 0.5;
  pt.Q = oracle::cross_with_correlation(g, inst.sxx, inst.syy, g.uniform(0.0, max_rho));
  return pt;
}

LinearMeasurementModel example2_model() {
  Matrix c(1, 2);
  c << 1, 0;
  return LinearMeasurementModel(c, Matrix::Identity(1, 1), CovarianceMatrix::zero(1));
}

}  // namespace

TEST_CASE("SolverConfig validation") {
  SolverConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha = 0.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.beta = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.mu = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.gap_tol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.residual_tol = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.max_inner_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("payoff matches the posterior covariance oracle") {
  oracle::Gen g(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = oracle::random_game(g);
    const auto pt = random_point(g, inst);
    const GameProblem p = problem_of(inst);
    const Matrix expected = oracle::posterior_cov(pt.X.transpose(), inst.model.C, inst.model.D, inst.sxx,
                                                  inst.syy, pt.Q, inst.model.noise_cov.data());
    CHECK(oracle::max_abs_diff(p.posterior_covariance(pt.X, pt.Q), expected) < 1e-10 * (1 + expected.norm()));
    CHECK(p.payoff(pt.X, pt.Q) == doctest::Approx(expected.trace()).epsilon(1e-12));
  }
}

TEST_CASE("payoff at the first example's saddle is 8") {
  const GameProblem p(CovarianceMatrix(diag({5, 5})), CovarianceMatrix(diag({3, 7})),
                      LinearMeasurementModel::simple_fusion(2));
  // K = diag(1, 0) picks y's first and x's second coordinate; with Q = 0 the
  // trace is 3 + 5.
  CHECK(p.payoff(diag({1, 0}), Matrix::Zero(2, 2)) == doctest::Approx(8.0));
}

TEST_CASE("scalar barrier payoff") {
  const CovarianceMatrix one(Matrix::Identity(1, 1));
  const GameProblem p(one, one, LinearMeasurementModel::simple_fusion(1));
  // K = 1/2, Sxy = -1/2: variance 1/4 + 1/4 - 1/4, log det(1 - 1/4).
  const Matrix x = Matrix::Constant(1, 1, 0.5), q = Matrix::Constant(1, 1, -0.5);
  CHECK(p.barrier_payoff(x, q, 1.0) == doctest::Approx(0.25 + std::log(0.75)).epsilon(1e-14));
  CHECK(p.barrier_payoff(x, q, 3.0) == doctest::Approx(0.75 + std::log(0.75)).epsilon(1e-14));
  CHECK_THROWS_AS(p.barrier_payoff(x, Matrix::Constant(1, 1, 1.0), 1.0), InfeasibleError);
  CHECK_FALSE(p.strictly_feasible(Matrix::Constant(1, 1, 1.0)));
  CHECK(p.strictly_feasible(Matrix::Constant(1, 1, 0.999)));
}

TEST_CASE("barrier payoff matches the eigen-decomposition oracle") {
  oracle::Gen g(22);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = oracle::random_game(g);
    const auto pt = random_point(g, inst);
    const double t = std::exp(g.uniform(0.0, std::log(100.0)));
    const double expected = oracle::barrier_value(pt.X, pt.Q, t, inst.sxx, inst.syy, inst.model.C,
                                                  inst.model.D, inst.model.noise_cov.data());
    CHECK(problem_of(inst).barrier_payoff(pt.X, pt.Q, t) ==
          doctest::Approx(expected).epsilon(1e-10).scale(1.0));
  }
}

TEST_CASE("residual equals central differences of the barrier payoff") {
  oracle::Gen g(23);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = oracle::random_game(g);
    const auto pt = random_point(g, inst, 0.8);
    const double t = g.uniform(0.5, 5.0);
    auto f = [&](const Matrix& x, const Matrix& q) {
      return oracle::barrier_value(x, q, t, inst.sxx, inst.syy, inst.model.C, inst.model.D,
                                   inst.model.noise_cov.data());
    };
    const Matrix fd_x = oracle::central_difference([&](const Matrix& x) { return f(x, pt.Q); }, pt.X, 1e-6);
    const Matrix fd_q = oracle::central_difference([&](const Matrix& q) { return f(pt.X, q); }, pt.Q, 1e-6);
    const auto [gx, gq] = problem_of(inst).gradients(pt.X, pt.Q, t);
    for (Index i = 0; i < gx.size(); ++i) {
      CHECK(std::abs(gx(i) - fd_x(i)) <= 1e-5 * std::max({1.0, std::abs(gx(i)), std::abs(fd_x(i))}));
    }
    for (Index i = 0; i < gq.size(); ++i) {
      CHECK(std::abs(gq(i) - fd_q(i)) <= 1e-5 * std::max({1.0, std::abs(gq(i)), std::abs(fd_q(i))}));
    }
  }
}

TEST_CASE("jacobian agrees with apply_differential and with differences of the residual") {
  oracle::Gen g(24);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = oracle::random_game(g);
    const auto pt = random_point(g, inst, 0.8);
    const double t = g.uniform(0.5, 20.0);
    const GameProblem p = problem_of(inst);
    const Matrix jac = p.jacobian(pt.X, pt.Q, t);
    REQUIRE(jac.rows() == p.num_unknowns());

    const Matrix dx = g.normal_matrix(pt.X.rows(), pt.X.cols());
    const Matrix dq = g.normal_matrix(pt.Q.rows(), pt.Q.cols());
    const auto [ax, aq] = p.apply_differential(pt.X, pt.Q, t, dx, dq);
    const Vector via_jac = jac * p.flatten(dx, dq);
    const Vector direct = p.flatten(ax, aq);
    CHECK((via_jac - direct).norm() <= 1e-10 * (1.0 + direct.norm()));

    const double h = 1e-6;
    const Vector rp = p.residual(pt.X + h * dx, pt.Q + h * dq, t);
    const Vector rm = p.residual(pt.X - h * dx, pt.Q - h * dq, t);
    const Vector fd = (rp - rm) / (2 * h);
    CHECK((fd - direct).norm() <= 1e-5 * (1.0 + direct.norm()));
  }
}

TEST_CASE("scaled residual is the whitened image of the residual") {
  oracle::Gen g(25);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = oracle::random_game(g);
    const auto pt = random_point(g, inst);
    const double t = g.uniform(0.5, 50.0);
    const GameProblem p = problem_of(inst);
    const auto [gx, gq] = p.gradients(pt.X, pt.Q, t);
    const Matrix lx = Eigen::LLT<Matrix>(inst.sxx).matrixL();
    const Matrix expected_q = lx.transpose() * gq * oracle::sym_sqrt(inst.syy);
    const Vector expected = p.flatten(gx, expected_q);
    CHECK((p.scaled_residual(pt.X, pt.Q, t) - expected).norm() <= 1e-9 * (1.0 + expected.norm()));
  }
}

TEST_CASE("newton_step solves the linearized system") {
  oracle::Gen g(26);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = oracle::random_game(g);
    const auto pt = random_point(g, inst, 0.7);
    const double t = g.uniform(0.5, 10.0);
    const GameProblem p = problem_of(inst);
    const auto [dx, dq] = p.newton_step(pt.X, pt.Q, t);
    const Vector r = p.residual(pt.X, pt.Q, t);
    const Vector lin = p.jacobian(pt.X, pt.Q, t) * p.flatten(dx, dq) + r;
    CHECK(lin.norm() <= 1e-8 * (1.0 + r.norm()));
  }
}

TEST_CASE("initial point solves the normal equations with Q = 0") {
  SUBCASE("partial measurement example") {
    const GameProblem p(CovarianceMatrix(diag({5, 5})), CovarianceMatrix(Matrix::Identity(1, 1)),
                        example2_model());
    const GamePoint pt = p.initial_point();
    // (5 + 1) X0 = [5 0]
    CHECK(pt.X(0, 0) == doctest::Approx(5.0 / 6.0));
    CHECK(pt.X(0, 1) == doctest::Approx(0.0));
    CHECK(pt.Q.isZero());
  }
  SUBCASE("equal covariances") {
    const Matrix s = diag({2, 3});
    const GameProblem p(CovarianceMatrix{s}, CovarianceMatrix{s}, LinearMeasurementModel::simple_fusion(2));
    const GamePoint pt = p.initial_point();
    CHECK(oracle::max_abs_diff(pt.X, 0.5 * Matrix::Identity(2, 2)) < 1e-14);
  }
  SUBCASE("singular normal matrix is reported") {
    const CovarianceMatrix s(Matrix::Identity(1, 1));
    Matrix c(2, 1), d(2, 1);
    c << 1, 1;
    d << 1, 1;
    const GameProblem p(s, s, LinearMeasurementModel(c, d, CovarianceMatrix::zero(2)));
    CHECK_THROWS_AS(p.initial_point(), SingularityError);
    CHECK_THROWS_AS(p.solve(), SingularityError);
  }
}

TEST_CASE("solve_inner rejects infeasible starts and decreases the residual monotonically") {
  const CovarianceMatrix one(Matrix::Identity(1, 1));
  const LinearMeasurementModel simple = LinearMeasurementModel::simple_fusion(1);
  GamePoint bad{Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 1.5)};
  CHECK_THROWS_AS(solve_inner(bad, 1.0, one, one, simple, SolverConfig{}), InfeasibleError);

  oracle::Gen g(27);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_game(g);
    const GameProblem p = problem_of(inst);
    std::vector<double> norms;
    const GamePoint start = p.initial_point();
    norms.push_back(p.scaled_residual(start.X, start.Q, 1.0).norm());
    p.solve_inner(start, 1.0, SolverConfig{}, [&](const IterationRecord& rec) {
      norms.push_back(rec.residual_norm);
    });
    for (std::size_t k = 1; k < norms.size(); ++k) CHECK(norms[k] < norms[k - 1]);
  }
}

TEST_CASE("solutions are feasible, PSD and consistent") {
  oracle::Gen g(28);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = oracle::random_game(g);
    const GameSolution sol = problem_of(inst).solve();
    CHECK(cross_feasible(CovarianceMatrix(inst.sxx), CovarianceMatrix(inst.syy), sol.Q_star, 1e-6));
    CHECK(is_psd(sol.cov_out.data()));
    CHECK(sol.payoff == doctest::Approx(sol.cov_out.trace()));
    CHECK(sol.K_star.rows() == inst.sxx.rows());
    CHECK(sol.K_star.cols() == inst.model.C.rows());
    CHECK(static_cast<double>(inst.syy.rows()) / sol.final_t < SolverConfig{}.gap_tol);
  }
}

TEST_CASE("barrier stages approach the saddle value from below") {
  // The payoff is linear in Q, so the maximizer moves outward as t grows and
  // the stage payoffs do not decrease.
  oracle::Gen g(29);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = trial % 2 ? oracle::random_game(g) : oracle::random_simple_fusion(g);
    const GameSolution sol = problem_of(inst).solve();
    REQUIRE(sol.stage_payoffs.size() >= 2);
    for (std::size_t k = 1; k < sol.stage_payoffs.size(); ++k) {
      CHECK(sol.stage_payoffs[k] >= sol.stage_payoffs[k - 1] - 1e-9);
    }
  }
}

TEST_CASE("commuting simple fusion has the elementwise-minimum closed form") {
  // With Sxx = U diag(a) U^T and Syy = U diag(b) U^T, the minimax
  // covariance is U diag(min(a, b)) U^T.
  oracle::Gen g(30);
  for (int trial = 0; trial < 25; ++trial) {
    const Index n = g.integer(1, 4);
    const Matrix u = g.orthogonal(n);
    Vector a(n), b(n);
    for (Index i = 0; i < n; ++i) {
      a(i) = g.uniform(0.5, 8.0);
      b(i) = g.uniform(0.5, 8.0);
    }
    const Matrix sxx = symmetrize(u * a.asDiagonal() * u.transpose());
    const Matrix syy = symmetrize(u * b.asDiagonal() * u.transpose());
    const Matrix expected = u * a.cwiseMin(b).asDiagonal() * u.transpose();
    const GameSolution sol =
        solve_game(CovarianceMatrix(sxx), CovarianceMatrix(syy), LinearMeasurementModel::simple_fusion(n));
    CHECK(oracle::max_abs_diff(sol.cov_out.data(), expected) < 1e-6);
  }
}

TEST_CASE("simple-fusion model and robust_fuse agree") {
  oracle::Gen g(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_simple_fusion(g);
    const Index n = inst.sxx.rows();
    const GameSolution sol = solve_game(CovarianceMatrix(inst.sxx), CovarianceMatrix(inst.syy), inst.model);
    const Estimate ex(Vector::Zero(n), CovarianceMatrix(inst.sxx));
    const Estimate ey(Vector::Zero(n), CovarianceMatrix(inst.syy));
    const FusionResult fused = robust_fuse(ex, ey);
    CHECK(oracle::max_abs_diff(sol.K_star, fused.gain) < 1e-8);
    CHECK(oracle::max_abs_diff(sol.cov_out.data(), fused.estimate.cov().data()) < 1e-8);
  }
}

TEST_CASE("degenerate equal scalar variances converge to the common variance") {
  const CovarianceMatrix one(Matrix::Identity(1, 1));
  const GameSolution sol = solve_game(one, one, LinearMeasurementModel::simple_fusion(1));
  CHECK(sol.payoff == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("max_outer_iters too small is a convergence error") {
  SolverConfig cfg;
  cfg.max_outer_iters = 2;
  const CovarianceMatrix s(diag({2, 3}));
  CHECK_THROWS_AS(solve_game(s, s, LinearMeasurementModel::simple_fusion(2), cfg), ConvergenceError);
}

TEST_CASE("observer sees every accepted step") {
  const GameProblem p(CovarianceMatrix(diag({5, 5})), CovarianceMatrix(diag({3, 7})),
                      LinearMeasurementModel::simple_fusion(2));
  int calls = 0;
  double last_t = 0;
  const GameSolution sol = p.solve({}, [&](const IterationRecord& rec) {
    ++calls;
    CHECK(rec.outer_t >= last_t);
    CHECK(rec.iter >= 1);
    last_t = rec.outer_t;
  });
  CHECK(calls == sol.iterations);
  CHECK(sol.payoff == doctest::Approx(8.0).epsilon(1e-6));
}
