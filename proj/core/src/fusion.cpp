#include "rfusion/fusion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace rfusion {

const char* to_string(FusionMethod method) {
  switch (method) {
    case FusionMethod::Robust: return "RF";
    case FusionMethod::CovarianceIntersection: return "CI";
    case FusionMethod::Naive: return "NF";
  }
  return "?";
}

FusionMethod parse_fusion_method(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "rf") return FusionMethod::Robust;
  if (lower == "ci") return FusionMethod::CovarianceIntersection;
  if (lower == "nf") return FusionMethod::Naive;
  throw std::invalid_argument("unknown fusion method '" + name + "' (expected rf, ci or nf)");
}

namespace {

void check_update_inputs(const Estimate& ex, const Estimate& ey, const Vector& z,
                         const LinearMeasurementModel& model) {
  model.check_dims(ex.dim(), ey.dim());
  if (z.size() != model.measurement_dim()) {
    throw DimensionError("measurement z has dimension " + std::to_string(z.size()) +
                         ", model expects " + std::to_string(model.measurement_dim()));
  }
}

Matrix spd_inverse(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
    throw SingularityError(std::string(what) + " is not positive definite");
  }
  return symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

// trace(A^{-1}) for symmetric A, +inf when A is not positive definite.
double trace_of_inverse(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const double min_pivot = llt.matrixLLT().diagonal().minCoeff();
  const double max_pivot = llt.matrixLLT().diagonal().maxCoeff();
  if (!(min_pivot > 1e-12 * max_pivot)) return std::numeric_limits<double>::infinity();
  return llt.solve(Matrix::Identity(a.rows(), a.cols())).trace();
}

}  // namespace

double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                               double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  double best = 0.5 * (a + b);
  double f_best = f(best);
  for (double endpoint : {lo, hi}) {
    const double fe = f(endpoint);
    if (fe < f_best) {
      best = endpoint;
      f_best = fe;
    }
  }
  return best;
}

FusionResult robust_linear_update(const Estimate& ex, const Estimate& ey, const Vector& z,
                                  const LinearMeasurementModel& model, const SolverConfig& cfg,
                                  const IterationObserver& observer) {
  check_update_inputs(ex, ey, z, model);
  GameSolution sol = GameProblem(ex.cov(), ey.cov(), model).solve(cfg, observer);
  const Vector innovation = z - model.C * ex.mean() - model.D * ey.mean();
  Vector mean = ex.mean() + sol.K_star * innovation;
  FusionResult res{Estimate(std::move(mean), sol.cov_out), sol.K_star, sol.Q_star, std::nullopt,
                   std::move(sol)};
  return res;
}

FusionResult robust_fuse(const Estimate& ex, const Estimate& ey, const SolverConfig& cfg,
                         const IterationObserver& observer) {
  if (ex.dim() != ey.dim()) {
    throw DimensionError("robust_fuse: estimates have dimensions " + std::to_string(ex.dim()) +
                         " and " + std::to_string(ey.dim()));
  }
  return robust_linear_update(ex, ey, Vector::Zero(ex.dim()),
                              LinearMeasurementModel::simple_fusion(ex.dim()), cfg, observer);
}

FusionResult covariance_intersection(const Estimate& ex, const Estimate& ey) {
  if (ex.dim() != ey.dim()) {
    throw DimensionError("covariance_intersection: estimates have dimensions " +
                         std::to_string(ex.dim()) + " and " + std::to_string(ey.dim()));
  }
  const Matrix info_x = spd_inverse(ex.cov().data(), "covariance_intersection: Sxx");
  const Matrix info_y = spd_inverse(ey.cov().data(), "covariance_intersection: Syy");
  auto objective = [&](double w) { return trace_of_inverse(w * info_x + (1.0 - w) * info_y); };
  const double omega = golden_section_minimize(objective, 0.0, 1.0);

  const Matrix cov = spd_inverse(omega * info_x + (1.0 - omega) * info_y,
                                 "covariance_intersection: fused information");
  Vector mean = cov * (omega * info_x * ex.mean() + (1.0 - omega) * info_y * ey.mean());
  Matrix gain = (1.0 - omega) * cov * info_y;
  return FusionResult{Estimate(std::move(mean), CovarianceMatrix(cov)), std::move(gain),
                      std::nullopt, omega, std::nullopt};
}

namespace {

struct CiLinearTerms {
  Matrix info_x;     // Sxx^{-1}
  Matrix info_meas;  // C^T Sw^{-1} C
  Matrix ct_sw_inv;  // C^T Sw^{-1}
};

CiLinearTerms ci_linear_terms(const Estimate& ex, const Estimate& ey,
                              const LinearMeasurementModel& model) {
  const Matrix sw = symmetrize(model.D * ey.cov().data() * model.D.transpose() +
                               model.noise_cov.data());
  const Matrix sw_inv = spd_inverse(sw, "ci_linear_update: D Syy D^T + Seta");
  CiLinearTerms terms;
  terms.info_x = spd_inverse(ex.cov().data(), "ci_linear_update: Sxx");
  terms.ct_sw_inv = model.C.transpose() * sw_inv;
  terms.info_meas = symmetrize(terms.ct_sw_inv * model.C);
  return terms;
}

FusionResult ci_linear_apply(const Estimate& ex, const Estimate& ey, const Vector& z,
                             const LinearMeasurementModel& model, const CiLinearTerms& terms,
                             double omega) {
  const Matrix cov = spd_inverse(omega * terms.info_x + (1.0 - omega) * terms.info_meas,
                                 "ci_linear_update: fused information");
  Vector mean = cov * (omega * terms.info_x * ex.mean() +
                       (1.0 - omega) * terms.ct_sw_inv * (z - model.D * ey.mean()));
  Matrix gain = (1.0 - omega) * cov * terms.ct_sw_inv;
  return FusionResult{Estimate(std::move(mean), CovarianceMatrix(cov)), std::move(gain),
                      std::nullopt, omega, std::nullopt};
}

}  // namespace

FusionResult ci_linear_update(const Estimate& ex, const Estimate& ey, const Vector& z,
                              const LinearMeasurementModel& model) {
  check_update_inputs(ex, ey, z, model);
  const CiLinearTerms terms = ci_linear_terms(ex, ey, model);
  auto objective = [&](double w) {
    return trace_of_inverse(w * terms.info_x + (1.0 - w) * terms.info_meas);
  };
  const double omega = golden_section_minimize(objective, 0.0, 1.0);
  return ci_linear_apply(ex, ey, z, model, terms, omega);
}

FusionResult ci_linear_update_fixed(const Estimate& ex, const Estimate& ey, const Vector& z,
                                    const LinearMeasurementModel& model, double omega) {
  if (!(omega >= 0.0 && omega <= 1.0)) {
    throw std::invalid_argument("ci_linear_update_fixed: omega must lie in [0, 1]");
  }
  check_update_inputs(ex, ey, z, model);
  return ci_linear_apply(ex, ey, z, model, ci_linear_terms(ex, ey, model), omega);
}

FusionResult naive_linear_update(const Estimate& ex, const Estimate& ey, const Vector& z,
                                 const LinearMeasurementModel& model) {
  check_update_inputs(ex, ey, z, model);
  const Matrix& sxx = ex.cov().data();
  const Matrix& c = model.C;
  const Matrix& d = model.D;
  const Matrix dsd = d * ey.cov().data() * d.transpose();
  const Matrix s = symmetrize(c * sxx * c.transpose() + dsd + model.noise_cov.data());
  const Matrix s_inv = spd_inverse(s, "naive_linear_update: innovation covariance");
  Matrix gain = sxx * c.transpose() * s_inv;
  Vector mean = ex.mean() + gain * (z - c * ex.mean() - d * ey.mean());
  const Matrix ikc = Matrix::Identity(ex.dim(), ex.dim()) - gain * c;
  Matrix cov = ikc * sxx * ikc.transpose() + gain * (dsd + model.noise_cov.data()) * gain.transpose();
  return FusionResult{Estimate(std::move(mean), CovarianceMatrix(symmetrize(cov))), std::move(gain),
                      std::nullopt, std::nullopt, std::nullopt};
}

}  // namespace rfusion
