#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "glmpo2pls/error.hpp"

namespace glmpo2pls::linalg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Orthonormal factor U Vᵀ of A = U S Vᵀ; maximizes tr(Gᵀ A) over GᵀG = I.
inline MatrixXd polar_factor(const MatrixXd& a, const char* what) {
  if (a.cols() == 0) return MatrixXd(a.rows(), 0);
  if (!a.allFinite()) {
    throw NumericalError(std::string("non-finite cross-moment for ") + what);
  }
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || !(s(0) > 0.0)) {
    throw NumericalError(std::string("polar factor undefined: zero cross-moment for ") + what);
  }
  return svd.matrixU() * svd.matrixV().transpose();
}

// Thin-QR orthonormalization with column signs fixed so that diag(R) > 0.
inline MatrixXd orthonormalize(const MatrixXd& a) {
  if (a.cols() == 0) return MatrixXd(a.rows(), 0);
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(a.rows(), a.cols());
  const MatrixXd r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    if (r(k, k) < 0) q.col(k) *= -1.0;
  }
  return q;
}

// Frobenius norm of GᵀG - I.
inline double orthonormality_deviation(const MatrixXd& g) {
  if (g.cols() == 0) return 0.0;
  return (g.transpose() * g - MatrixXd::Identity(g.cols(), g.cols())).norm();
}

inline double log_sum_exp(const Eigen::Ref<const VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// log σ(x) without overflow for large |x|.
inline double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Cholesky with a readable failure message.
inline Eigen::LLT<MatrixXd> checked_llt(const MatrixXd& m, const std::string& what) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(what + " is not positive definite (max |entry| = " +
                         std::to_string(m.cwiseAbs().maxCoeff()) + ")");
  }
  return llt;
}

inline double log_det(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace glmpo2pls::linalg
