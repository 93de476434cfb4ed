#include "rfusion/estimate_core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rfusion {

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " + shape(m));
  }
}

double asymmetry(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

void require_symmetric(const Matrix& m, const char* what) {
  double scale = m.size() == 0 ? 1.0 : std::max(1.0, m.cwiseAbs().maxCoeff());
  if (asymmetry(m) > kSymmetryTol * scale) {
    throw DimensionError(std::string(what) + ": matrix is not symmetric");
  }
}

Eigen::SelfAdjointEigenSolver<Matrix> eig(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::ComputeEigenvectors);
}

}  // namespace

Matrix symmetrize(const Matrix& m) {
  require_square(m, "symmetrize");
  return 0.5 * (m + m.transpose());
}

double min_eigenvalue(const Matrix& m) {
  require_square(m, "min_eigenvalue");
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(m), Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

bool is_psd(const Matrix& m, double tol) {
  require_square(m, "is_psd");
  require_symmetric(m, "is_psd");
  return min_eigenvalue(m) >= -tol;
}

CovarianceMatrix::CovarianceMatrix(const Matrix& m, double tol) {
  require_square(m, "CovarianceMatrix");
  require_symmetric(m, "CovarianceMatrix");
  if (!m.allFinite()) throw std::invalid_argument("CovarianceMatrix: non-finite entry");
  data_ = symmetrize(m);
  if (data_.size() > 0 && min_eigenvalue(data_) < -tol) {
    throw InfeasibleError("CovarianceMatrix: matrix is not positive semidefinite (min eigenvalue " +
                          std::to_string(min_eigenvalue(data_)) + ")");
  }
}

CovarianceMatrix CovarianceMatrix::strict(const Matrix& m) {
  CovarianceMatrix c(m);
  if (!c.is_strictly_pd()) {
    throw SingularityError("CovarianceMatrix::strict: matrix is not positive definite");
  }
  return c;
}

CovarianceMatrix CovarianceMatrix::identity(Index n) { return CovarianceMatrix(Matrix::Identity(n, n)); }

CovarianceMatrix CovarianceMatrix::zero(Index n) { return CovarianceMatrix(Matrix::Zero(n, n)); }

bool CovarianceMatrix::is_strictly_pd(double floor) const {
  return data_.size() == 0 || min_eigenvalue(data_) >= floor;
}

Estimate::Estimate(Vector mean, CovarianceMatrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (mean_.size() != cov_.dim()) {
    throw DimensionError("Estimate: mean has dimension " + std::to_string(mean_.size()) +
                         " but covariance is " + shape(cov_.data()));
  }
}

LinearMeasurementModel::LinearMeasurementModel(Matrix c, Matrix d, CovarianceMatrix noise)
    : C(std::move(c)), D(std::move(d)), noise_cov(std::move(noise)) {
  if (C.rows() != D.rows() || C.rows() != noise_cov.dim()) {
    throw DimensionError("LinearMeasurementModel: C is " + shape(C) + ", D is " + shape(D) +
                         ", noise covariance is " + shape(noise_cov.data()));
  }
}

void LinearMeasurementModel::check_dims(Index n, Index q) const {
  if (C.cols() != n || D.cols() != q) {
    throw DimensionError("LinearMeasurementModel: C is " + shape(C) + " and D is " + shape(D) +
                         " but estimates have dimensions " + std::to_string(n) + " and " +
                         std::to_string(q));
  }
}

LinearMeasurementModel LinearMeasurementModel::simple_fusion(Index n) {
  return LinearMeasurementModel(Matrix::Identity(n, n), -Matrix::Identity(n, n),
                                CovarianceMatrix::zero(n));
}

bool cross_feasible(const CovarianceMatrix& sxx, const CovarianceMatrix& syy, const Matrix& q,
                    double tol) {
  const Index n = sxx.dim();
  const Index p = syy.dim();
  if (q.rows() != n || q.cols() != p) {
    throw DimensionError("cross_feasible: cross-covariance is " + shape(q) + ", expected " +
                         std::to_string(n) + "x" + std::to_string(p));
  }
  Matrix block(n + p, n + p);
  block.topLeftCorner(n, n) = sxx.data();
  block.topRightCorner(n, p) = q;
  block.bottomLeftCorner(p, n) = q.transpose();
  block.bottomRightCorner(p, p) = syy.data();
  return min_eigenvalue(block) >= -tol;
}

double correlation_norm(const CovarianceMatrix& sxx, const CovarianceMatrix& syy, const Matrix& q) {
  if (q.rows() != sxx.dim() || q.cols() != syy.dim()) {
    throw DimensionError("correlation_norm: cross-covariance is " + shape(q));
  }
  if (q.size() == 0) return 0.0;
  Matrix normalized = inv_sqrt(sxx) * q * inv_sqrt(syy);
  Eigen::JacobiSVD<Matrix> svd(normalized);
  return svd.singularValues()(0);
}

Matrix inv_sqrt(const CovarianceMatrix& sigma) {
  if (sigma.dim() == 0) return Matrix(0, 0);
  auto es = eig(sigma.data());
  const Vector& lambda = es.eigenvalues();
  if (lambda.minCoeff() < kStrictPdFloor) {
    throw SingularityError("inv_sqrt: matrix is not strictly positive definite (min eigenvalue " +
                           std::to_string(lambda.minCoeff()) + ")");
  }
  const Matrix& v = es.eigenvectors();
  return symmetrize(v * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose());
}

Matrix sqrtm(const CovarianceMatrix& sigma) {
  if (sigma.dim() == 0) return Matrix(0, 0);
  auto es = eig(sigma.data());
  Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Matrix& v = es.eigenvectors();
  return symmetrize(v * root.asDiagonal() * v.transpose());
}

}  // namespace rfusion
