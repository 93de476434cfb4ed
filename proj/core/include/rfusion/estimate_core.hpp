#pragma once

// Value types and matrix predicates shared by the solver, the fusion rules
// and the simulator.

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace rfusion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Minimum-eigenvalue tolerance for "positive semidefinite".
inline constexpr double kPsdTol = 1e-9;
/// Minimum eigenvalue required by the strict (positive definite) constructors.
inline constexpr double kStrictPdFloor = 1e-12;
/// Allowed asymmetry max|M - M^T|, relative to max(1, max|M|).
inline constexpr double kSymmetryTol = 1e-9;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InfeasibleError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised by iterative routines that run out of iterations.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_residual)
      : std::runtime_error(what), last_residual_(last_residual) {}
  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

/// (M + M^T) / 2. Throws DimensionError for a non-square input.
Matrix symmetrize(const Matrix& m);

/// Smallest eigenvalue of a symmetric matrix (the input is symmetrized first).
double min_eigenvalue(const Matrix& m);

/// True iff the smallest eigenvalue of the symmetric matrix `m` is >= -tol.
/// Throws DimensionError if `m` is not square or not symmetric.
bool is_psd(const Matrix& m, double tol = kPsdTol);

/// Symmetric positive semidefinite matrix. The stored data is always exactly
/// symmetric; construction symmetrizes and rejects indefinite input.
class CovarianceMatrix {
 public:
  CovarianceMatrix() = default;
  explicit CovarianceMatrix(const Matrix& m, double tol = kPsdTol);

  /// Requires every eigenvalue >= kStrictPdFloor.
  static CovarianceMatrix strict(const Matrix& m);
  static CovarianceMatrix identity(Index n);
  static CovarianceMatrix zero(Index n);

  const Matrix& data() const noexcept { return data_; }
  Index dim() const noexcept { return data_.rows(); }
  double trace() const { return data_.trace(); }
  bool is_strictly_pd(double floor = kStrictPdFloor) const;

  operator const Matrix&() const noexcept { return data_; }

 private:
  Matrix data_;
};

/// Mean vector with its claimed error covariance.
class Estimate {
 public:
  Estimate() = default;
  Estimate(Vector mean, CovarianceMatrix cov);

  const Vector& mean() const noexcept { return mean_; }
  const CovarianceMatrix& cov() const noexcept { return cov_; }
  Index dim() const noexcept { return mean_.size(); }

 private:
  Vector mean_;
  CovarianceMatrix cov_;
};

/// Candidate cross-covariance Sigma_xy (n x q).
class CrossCovariance {
 public:
  CrossCovariance() = default;
  explicit CrossCovariance(Matrix data) : data_(std::move(data)) {}
  static CrossCovariance zero(Index n, Index q) {
    return CrossCovariance(Matrix::Zero(n, q));
  }

  const Matrix& data() const noexcept { return data_; }
  Index rows() const noexcept { return data_.rows(); }
  Index cols() const noexcept { return data_.cols(); }

 private:
  Matrix data_;
};

/// z = C x + D y + eta, eta ~ (0, noise_cov).
struct LinearMeasurementModel {
  Matrix C;  // m x n
  Matrix D;  // m x q
  CovarianceMatrix noise_cov;  // m x m

  LinearMeasurementModel() = default;
  LinearMeasurementModel(Matrix c, Matrix d, CovarianceMatrix noise);

  Index measurement_dim() const noexcept { return C.rows(); }
  Index x_dim() const noexcept { return C.cols(); }
  Index y_dim() const noexcept { return D.cols(); }

  /// Throws DimensionError unless the model acts on an n-vector x and a q-vector y.
  void check_dims(Index n, Index q) const;

  /// C = I, D = -I, no noise: two estimates of the same quantity.
  static LinearMeasurementModel simple_fusion(Index n);
};

/// True iff [[Sxx, Q], [Q^T, Syy]] is PSD within `tol`.
bool cross_feasible(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                    const Matrix& q, double tol = kPsdTol);
inline bool cross_feasible(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                           const CrossCovariance& q, double tol = kPsdTol) {
  return cross_feasible(sxx, syy, q.data(), tol);
}

/// Largest singular value of Sxx^{-1/2} Q Syy^{-1/2}; <= 1 iff Q is feasible.
double correlation_norm(const CovarianceMatrix& sxx, const CovarianceMatrix& syy,
                        const Matrix& q);

/// Symmetric S with S * sigma * S = I. Throws SingularityError unless sigma is
/// strictly positive definite.
Matrix inv_sqrt(const CovarianceMatrix& sigma);

/// Symmetric PSD square root.
Matrix sqrtm(const CovarianceMatrix& sigma);

}  // namespace rfusion
