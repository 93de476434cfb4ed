// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Usage: acceptance <path-to-rfusion-binary> [work-dir]

#include "rfusion/dse_simulator.hpp"
#include "rfusion/fusion.hpp"
#include "rfusion/json_io.hpp"
#include "rfusion/minimax_solver.hpp"

#include "support/instances.hpp"
#include "support/oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace rfusion;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (!o.pass) ++g_failures;
  std::printf("[%d] %s: %s (%.2fs) %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

Matrix diag2(double a, double b) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

Estimate zero_mean(const Matrix& cov) { return Estimate(Vector::Zero(cov.rows()), CovarianceMatrix(cov)); }

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Symmetric matrix with eigenvalues in [0, 1].
Matrix contraction(oracle::Gen& g, Index n, bool extreme) {
  const Matrix u = g.orthogonal(n);
  Vector ev(n);
  for (Index i = 0; i < n; ++i) ev(i) = extreme ? 1.0 : g.uniform(0.0, 1.0);
  return u * ev.asDiagonal() * u.transpose();
}

Outcome example1() {
  const auto start = Clock::now();
  const Estimate x(Vector::Zero(2), CovarianceMatrix(diag2(5, 5)));
  const Estimate y(Vector::Zero(2), CovarianceMatrix(diag2(3, 7)));
  const Matrix rf = robust_fuse(x, y).estimate.cov().data();
  const Matrix ci = covariance_intersection(x, y).estimate.cov().data();
  const double secs = seconds_since(start);
  const double d_rf = oracle::max_abs_diff(rf, diag2(3, 5));
  const double d_ci = oracle::max_abs_diff(ci, diag2(3.79, 5.79));
  return {d_rf <= 1e-2 && d_ci <= 1e-2 && secs < 1.0,
          fmt("max|RF - diag(3,5)|=%.2e max|CI - diag(3.79,5.79)|=%.2e time=%.3fs", d_rf, d_ci, secs)};
}

Outcome example2() {
  const auto start = Clock::now();
  const Estimate x(Vector::Zero(2), CovarianceMatrix(diag2(5, 5)));
  const Estimate y(Vector::Zero(1), CovarianceMatrix(Matrix::Identity(1, 1)));
  Matrix c(1, 2);
  c << 1, 0;
  const LinearMeasurementModel model(c, Matrix::Identity(1, 1), CovarianceMatrix::zero(1));
  const Vector z = Vector::Zero(1);
  const Matrix rf = robust_linear_update(x, y, z, model).estimate.cov().data();
  const Matrix ci = ci_linear_update(x, y, z, model).estimate.cov().data();
  const double secs = seconds_since(start);
  const double d_rf = oracle::max_abs_diff(rf, diag2(1, 5));
  const double d_ci = oracle::max_abs_diff(ci, diag2(3, 6));
  return {d_rf <= 1e-2 && d_ci <= 1e-2 && secs < 1.0,
          fmt("max|RF - diag(1,5)|=%.2e max|CI - diag(3,6)|=%.2e time=%.3fs", d_rf, d_ci, secs)};
}

Outcome gradient_suite() {
  oracle::Gen g(1001);
  double worst = 0.0;
  int entries = 0, bad = 0;
  for (int p = 0; p < 100; ++p) {
    const auto inst = oracle::random_game(g);
    const Matrix x = 0.5 * g.normal_matrix(inst.model.C.rows(), inst.sxx.rows());
    const Matrix q = oracle::cross_with_correlation(g, inst.sxx, inst.syy, g.uniform(0.0, 0.9));
    const double t = std::exp(g.uniform(std::log(0.5), std::log(50.0)));
    auto f = [&](const Matrix& xx, const Matrix& qq) {
      return oracle::barrier_value(xx, qq, t, inst.sxx, inst.syy, inst.model.C, inst.model.D,
                                   inst.model.noise_cov.data());
    };
    const Matrix fd_x = oracle::central_difference([&](const Matrix& m) { return f(m, q); }, x, 1e-6);
    const Matrix fd_q = oracle::central_difference([&](const Matrix& m) { return f(x, m); }, q, 1e-6);
    const Vector r = residual(x, q, t, CovarianceMatrix(inst.sxx), CovarianceMatrix(inst.syy), inst.model);
    Vector fd(r.size());
    // Row-major flattening of each block.
    Index k = 0;
    for (Index i = 0; i < fd_x.rows(); ++i)
      for (Index j = 0; j < fd_x.cols(); ++j) fd(k++) = fd_x(i, j);
    for (Index i = 0; i < fd_q.rows(); ++i)
      for (Index j = 0; j < fd_q.cols(); ++j) fd(k++) = fd_q(i, j);
    for (Index i = 0; i < r.size(); ++i) {
      const double rel = std::abs(r(i) - fd(i)) / std::max({1.0, std::abs(r(i)), std::abs(fd(i))});
      worst = std::max(worst, rel);
      bad += rel > 1e-5;
      ++entries;
    }
  }
  return {bad == 0, fmt("entries=%.0f worst relative error=%.2e (tol 1e-5) violations=%.0f", entries, worst, bad)};
}

Outcome saddle_suite() {
  oracle::Gen g(1002);
  double worst_q = -1e300, worst_x = -1e300;
  for (int k = 0; k < 50; ++k) {
    const auto inst = k % 2 ? oracle::random_game(g) : oracle::random_simple_fusion(g);
    const CovarianceMatrix sxx(inst.sxx), syy(inst.syy);
    const GameSolution sol = solve_game(sxx, syy, inst.model);
    const Matrix x_star = sol.K_star.transpose();
    const Matrix& seta = inst.model.noise_cov.data();
    auto value = [&](const Matrix& x, const Matrix& q) {
      return oracle::posterior_cov(x.transpose(), inst.model.C, inst.model.D, inst.sxx, inst.syy, q, seta).trace();
    };
    for (int s = 0; s < 40; ++s) {
      // Feasible Q: either anywhere in the set or a local perturbation pulled
      // back into it.
      Matrix q;
      if (s % 2 == 0) {
        q = oracle::cross_with_correlation(g, inst.sxx, inst.syy, g.uniform(0.0, 1.0));
      } else {
        q = sol.Q_star + g.uniform(1e-4, 1e-1) * g.normal_matrix(sol.Q_star.rows(), sol.Q_star.cols());
        const double rho = correlation_norm(sxx, syy, q);
        if (rho > 1.0) q /= rho;
      }
      worst_q = std::max(worst_q, value(x_star, q) - sol.payoff);
      const double scale = s < 20 ? g.uniform(1e-4, 1e-1) : g.uniform(0.1, 2.0);
      const Matrix x = x_star + scale * g.normal_matrix(x_star.rows(), x_star.cols());
      worst_x = std::max(worst_x, sol.payoff - value(x, sol.Q_star));
    }
  }
  return {worst_q <= 1e-4 && worst_x <= 1e-4,
          fmt("max gain from Q deviation=%.2e max drop from X deviation=%.2e (tol 1e-4)", worst_q, worst_x)};
}

Outcome trace_consistency() {
  oracle::Gen g(1003);
  double worst = -1e300;
  for (int k = 0; k < 200; ++k) {
    const bool simple = k < 100;
    const auto inst = simple ? oracle::random_simple_fusion(g) : oracle::random_game(g);
    const FusionResult rf =
        simple ? robust_fuse(zero_mean(inst.sxx), zero_mean(inst.syy))
               : robust_linear_update(zero_mean(inst.sxx), zero_mean(inst.syy), Vector::Zero(inst.model.C.rows()),
                                      inst.model);
    const double claimed = rf.estimate.cov().trace();
    // True covariances below the claimed ones with any admissible correlation.
    for (int s = 0; s < 5; ++s) {
      const bool extreme = s == 0;
      const Matrix sx_half = oracle::sym_sqrt(inst.sxx), sy_half = oracle::sym_sqrt(inst.syy);
      const Matrix txx = sx_half * contraction(g, inst.sxx.rows(), extreme) * sx_half;
      const Matrix tyy = sy_half * contraction(g, inst.syy.rows(), extreme) * sy_half;
      const Matrix u = g.with_spectral_norm(txx.rows(), tyy.rows(), extreme ? 1.0 : g.uniform(0.0, 1.0));
      const Matrix txy = oracle::sym_sqrt(txx) * u * oracle::sym_sqrt(tyy);
      const Matrix truth = oracle::posterior_cov(rf.gain, inst.model.C, inst.model.D, txx, tyy, txy,
                                                 inst.model.noise_cov.data());
      worst = std::max(worst, truth.trace() - claimed);
    }
  }
  return {worst <= 1e-8, fmt("max trace(true) - trace(claimed)=%.2e (tol 1e-8)", worst)};
}

Outcome dominance() {
  oracle::Gen g(1004);
  double worst = -1e300;
  for (int k = 0; k < 200; ++k) {
    const auto inst = oracle::random_simple_fusion(g);
    const double rf = robust_fuse(zero_mean(inst.sxx), zero_mean(inst.syy)).estimate.cov().trace();
    const double ci = covariance_intersection(zero_mean(inst.sxx), zero_mean(inst.syy)).estimate.cov().trace();
    worst = std::max(worst, rf - ci);
  }
  return {worst <= 1e-6, fmt("max trace(RF) - trace(CI)=%.2e (tol 1e-6)", worst)};
}

Outcome scalar_oracle() {
  oracle::Gen g(1005);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const double sx = std::exp(g.uniform(std::log(0.1), std::log(10.0)));
    const double sy = std::exp(g.uniform(std::log(0.1), std::log(10.0)));
    const GameSolution sol = solve_game(CovarianceMatrix(Matrix::Constant(1, 1, sx)),
                                        CovarianceMatrix(Matrix::Constant(1, 1, sy)),
                                        LinearMeasurementModel::simple_fusion(1));
    worst = std::max(worst, std::abs(sol.payoff - oracle::scalar_minimax_grid(sx, sy, 200)));
  }
  return {worst <= 1e-3, fmt("max |payoff - grid min-max|=%.2e (tol 1e-3)", worst)};
}

Outcome simulation_ordering() {
  using namespace rfusion::dse;
  SimConfig cfg;  // ten seeds, 300 steps, default noise
  cfg.threads = 0;
  const auto start = Clock::now();
  const SimResult r = run_simulation(cfg);
  const double secs = seconds_since(start);

  bool pass = secs < 120.0;
  std::ostringstream os;
  os << "seeds=" << cfg.seeds.size() << " steps=" << cfg.steps;
  double rf_lo = 1e300, rf_hi = -1e300;
  for (int agent = 1; agent <= cfg.topology.n_agents; ++agent) {
    const SummaryRow* ckf = r.find_summary(EstimatorKind::CKF, agent);
    const SummaryRow* rf = r.find_summary(EstimatorKind::RF, agent);
    const SummaryRow* ci = r.find_summary(EstimatorKind::CI, agent);
    const bool ok = ckf->mean_pos_error <= rf->mean_pos_error && rf->mean_pos_error <= ci->mean_pos_error;
    pass = pass && ok;
    rf_lo = std::min(rf_lo, rf->mean_pos_error);
    rf_hi = std::max(rf_hi, rf->mean_pos_error);
    char buf[160];
    std::snprintf(buf, sizeof(buf), " | agent%d CKF=%.4f RF=%.4f CI=%.4f%s", agent, ckf->mean_pos_error,
                  rf->mean_pos_error, ci->mean_pos_error, ok ? "" : " (order violated)");
    os << buf;
  }
  const bool magnitude = rf_lo >= 0.1 && rf_hi <= 0.6;
  pass = pass && magnitude;

  // Per seed: NF diverged, or its mean position error over agents at the last
  // step exceeds twice RF's.
  int nf_bad = 0;
  for (std::uint64_t seed : cfg.seeds) {
    bool diverged = false;
    for (const RunInfo& info : r.runs)
      if (info.seed == seed && info.estimator == EstimatorKind::NF) diverged = info.diverged;
    double nf = 0, rf = 0;
    int nf_n = 0, rf_n = 0;
    for (const ErrorRecord& rec : r.records) {
      if (rec.seed != seed || rec.t != cfg.steps) continue;
      if (rec.estimator == EstimatorKind::NF) nf += rec.pos_error, ++nf_n;
      if (rec.estimator == EstimatorKind::RF) rf += rec.pos_error, ++rf_n;
    }
    if (diverged || (nf_n > 0 && rf_n > 0 && nf / nf_n > 2.0 * rf / rf_n)) ++nf_bad;
  }
  const bool nf_ok = 2 * nf_bad > static_cast<int>(cfg.seeds.size());
  pass = pass && nf_ok;
  char buf[200];
  std::snprintf(buf, sizeof(buf), " | RF range [%.4f, %.4f] in [0.1, 0.6]: %s | NF > 2x RF or divergent on %d/%zu seeds"
                " | time=%.1fs (limit 120s)",
                rf_lo, rf_hi, magnitude ? "yes" : "no", nf_bad, cfg.seeds.size(), secs);
  os << buf;
  return {pass, os.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const std::string& tool, const fs::path& work) {
  if (tool.empty()) return {false, "no rfusion binary given"};
  fs::create_directories(work);
  dse::SimConfig cfg;
  cfg.seeds = {1, 2, 3};
  cfg.steps = 100;
  cfg.steady_state_window = 50;
  cfg.threads = 0;
  const fs::path config = work / "config.json";
  std::ofstream(config) << sim_config_to_json(cfg).dump(2) << '\n';
  auto run = [&](const std::string& dir) {
    const std::string cmd = "\"" + tool + "\" simulate --config \"" + config.string() + "\" --out \"" +
                            (work / dir).string() + "\" > \"" + (work / (dir + ".log")).string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  const int rc1 = run("run1");
  const int rc2 = run("run2");
  if (rc1 != 0 || rc2 != 0) return {false, "simulate exited with a nonzero status"};
  const std::string rec1 = slurp(work / "run1" / "records.csv"), rec2 = slurp(work / "run2" / "records.csv");
  const std::string sum1 = slurp(work / "run1" / "summary.csv"), sum2 = slurp(work / "run2" / "summary.csv");
  const bool same = !rec1.empty() && rec1 == rec2 && !sum1.empty() && sum1 == sum2;
  return {same, fmt("records.csv %.0f bytes, summary.csv %.0f bytes, identical=", static_cast<double>(rec1.size()),
                    static_cast<double>(sum1.size())) +
                    (same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string tool = argc > 1 ? argv[1] : "";
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "rfusion_acceptance";

  report(1, "first example (RF diag(3,5), CI diag(3.79,5.79), < 1 s)", example1);
  report(2, "second example (RF diag(1,5), CI diag(3,6), < 1 s)", example2);
  report(3, "gradient suite (100 points, rel tol 1e-5)", gradient_suite);
  report(4, "saddle suite (50 instances, tol 1e-4)", saddle_suite);
  report(5, "trace consistency (200 instances, tol 1e-8)", trace_consistency);
  report(6, "dominance over CI (200 instances, tol 1e-6)", dominance);
  report(7, "scalar grid min-max (20 pairs, tol 1e-3)", scalar_oracle);
  report(8, "simulation ordering (10 seeds, 300 steps, < 120 s)", simulation_ordering);
  report(9, "determinism of simulate CSVs", [&] { return determinism(tool, work); });

  std::printf("%s: %d of 9 criteria failed\n", g_failures ? "FAIL" : "PASS", g_failures);
  return g_failures ? 1 : 0;
}
