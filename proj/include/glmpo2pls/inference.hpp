#pragma once

// Louis observed information for alpha = (a, b) and the chi-square
// association tests built on it.

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <string>

#include "glmpo2pls/em_binary.hpp"
#include "glmpo2pls/em_gaussian.hpp"
#include "glmpo2pls/error.hpp"
#include "glmpo2pls/model.hpp"

namespace glmpo2pls {

// Upper tail of the chi-square distribution: Q(df/2, x/2).
inline double chi_square_survival(double x, double df) {
  if (!(x >= 0.0)) throw ValidationError("chi-square statistic must be >= 0, got " + std::to_string(x));
  if (!(df >= 1.0)) throw ValidationError("chi-square degrees of freedom must be >= 1");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

enum class TestKind { full, componentwise };

struct TestResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  TestKind kind = TestKind::full;
  Index component = -1;  // 0-based joint component for componentwise tests
  bool asymptotics_unverified = false;
};

namespace detail {

// Gaussian family: for w_i = (t_i, h_i) ~ N(m, V) given the data,
// E[B_i] = (V + m m^T) / s2 and Cov(S_i) = (A V A^T + V a a^T V + (a^T V a) V) / s2^2
// with A = e0 I - m a^T, e0 = z_i - m a. Rows are conditionally independent,
// so I = sum E[B_i] - sum Cov(S_i).
inline MatrixXd louis_alpha_gaussian(const Theta& th, const LatentMoments& mom, const VectorXd& z) {
  const Index r = th.dims().r, n = mom.n();
  if (z.size() != n) throw ValidationError("outcome length does not match the fitted moments");
  const MatrixXd j = th_transform(th.B);
  const VectorXd alpha = th.alpha();
  const double s2 = th.var_g;
  const Index k = 2 * r;
  MatrixXd expected_b = MatrixXd::Zero(k, k);
  MatrixXd score_cov = MatrixXd::Zero(k, k);
  MatrixXd v;
  const bool shared = mom.shared();
  if (shared) v = j.transpose() * mom.cov.topLeftCorner(k, k) * j;
  for (Index i = 0; i < n; ++i) {
    if (!shared) v = j.transpose() * mom.row_cov[static_cast<std::size_t>(i)].topLeftCorner(k, k) * j;
    const VectorXd m = (mom.mean.row(i).head(k) * j).transpose();
    const double e0 = z(i) - m.dot(alpha);
    const MatrixXd a = e0 * MatrixXd::Identity(k, k) - m * alpha.transpose();
    const VectorXd va = v * alpha;
    expected_b += v + m * m.transpose();
    score_cov += a * v * a.transpose() + va * va.transpose() + alpha.dot(va) * v;
  }
  MatrixXd info = expected_b / s2 - score_cov / (s2 * s2);
  return 0.5 * (info + info.transpose());
}

// Bernoulli family: same construction for beta = (a0, a, b) over the
// posterior grid, then the a0 block is profiled out by a Schur complement.
inline MatrixXd louis_alpha_binary(const Theta& th, const DataSet& data, int m, double budget,
                                   GridCentering centering) {
  const SufficientStats st = e_step_binary(th, data, m, budget, centering);
  const GridDesign g = grid_design(st.centers, st.grid.points, th.B);
  const MatrixXd lin = grid_linear_predictor(g, pack_beta(th));
  const Index n = lin.rows(), kk = lin.cols();
  MatrixXd curv(n, kk), sq(n, kk), resid(n, kk);
  for (Index j = 0; j < kk; ++j) {
    for (Index i = 0; i < n; ++i) {
      const double sg = linalg::sigmoid(lin(i, j)), w = st.weights(i, j), e = data.z(i) - sg;
      curv(i, j) = w * sg * (1.0 - sg);
      sq(i, j) = w * e * e;
      resid(i, j) = w * e;
    }
  }
  const MatrixXd expected_b = design_outer_sum(curv, g);
  const MatrixXd second_sum = design_outer_sum(sq, g);  // sum_i E[S_i S_i^T]
  const MatrixXd mi = resid.rowwise().sum().asDiagonal() * g.row + resid * g.node;  // E[S_i], N x dim
  const MatrixXd mean_outer = mi.transpose() * mi;
  // I = sum E[B_i] - sum Cov(S_i) with Cov(S_i) = E[S_i S_i^T] - m_i m_i^T.
  MatrixXd full = expected_b - second_sum + mean_outer;
  full = 0.5 * (full + full.transpose()).eval();
  const Index k = full.rows() - 1;
  const double i00 = full(0, 0);
  if (!(i00 > 0.0)) throw NumericalError("non-positive intercept information in the bernoulli Louis matrix");
  MatrixXd info = full.bottomRightCorner(k, k) - full.bottomLeftCorner(k, 1) * full.topRightCorner(1, k) / i00;
  return 0.5 * (info + info.transpose());
}

inline void require_pd(const MatrixXd& info) {
  Eigen::LLT<MatrixXd> llt(info);
  if (llt.info() != Eigen::Success || !info.allFinite()) {
    throw NumericalError("information matrix for (a, b) is not positive definite; use a larger N or fewer components");
  }
}

}  // namespace detail

// Observed information for alpha at the fitted theta. `data` must be the
// (centered) data the model was fitted on.
inline MatrixXd louis_information_alpha(const FitResult& fit, const DataSet& data) {
  const Theta& th = fit.theta;
  th.check_shapes();
  if (data.X.cols() != th.W.rows() || data.Y.cols() != th.C.rows()) {
    throw ValidationError("data dimensions do not match the fitted model");
  }
  MatrixXd info;
  if (th.family == Family::gaussian) {
    const LatentMoments mom =
        fit.final_moments.n() == data.n() ? fit.final_moments : conditional_latent_moments(th, data);
    info = detail::louis_alpha_gaussian(th, mom, data.z);
  } else {
    const int m = fit.quad_nodes > 0 ? fit.quad_nodes : 16;
    info = detail::louis_alpha_binary(th, data, m, kDefaultGridBudget, fit.centering);
  }
  detail::require_pd(info);
  return info;
}

// T = alpha^T Pi^-1 alpha with Pi = info^-1, df = 2r.
inline TestResult test_full(const VectorXd& alpha, const MatrixXd& info) {
  if (info.rows() != alpha.size() || info.cols() != alpha.size()) {
    throw ValidationError("information matrix must be " + std::to_string(alpha.size()) + " x " +
                          std::to_string(alpha.size()));
  }
  detail::require_pd(info);
  TestResult res;
  res.kind = TestKind::full;
  res.df = static_cast<int>(alpha.size());
  res.statistic = std::max(0.0, alpha.dot(info * alpha));
  res.p_value = chi_square_survival(res.statistic, res.df);
  return res;
}

inline TestResult test_full(const FitResult& fit, const MatrixXd& info) {
  TestResult res = test_full(fit.theta.alpha(), info);
  res.asymptotics_unverified = fit.theta.family == Family::bernoulli;
  return res;
}

// Uses the (a_k, b_k) sub-block of Pi = info^-1; df = 2.
inline TestResult test_componentwise(const VectorXd& alpha, const MatrixXd& info, Index k) {
  const Index r = alpha.size() / 2;
  if (alpha.size() != 2 * r || r < 1) throw ValidationError("alpha must have length 2r");
  if (k < 0 || k >= r) {
    throw ValidationError("component index " + std::to_string(k + 1) + " out of range 1.." + std::to_string(r));
  }
  if (info.rows() != 2 * r || info.cols() != 2 * r) throw ValidationError("information matrix must be 2r x 2r");
  detail::require_pd(info);
  const MatrixXd pi = Eigen::LLT<MatrixXd>(info).solve(MatrixXd::Identity(2 * r, 2 * r));
  Eigen::Matrix2d sub;
  sub << pi(k, k), pi(k, r + k), pi(r + k, k), pi(r + k, r + k);
  const Eigen::Vector2d ak(alpha(k), alpha(r + k));
  TestResult res;
  res.kind = TestKind::componentwise;
  res.component = k;
  res.df = 2;
  res.statistic = std::max(0.0, ak.dot(sub.llt().solve(ak)));
  res.p_value = chi_square_survival(res.statistic, 2);
  return res;
}

inline TestResult test_componentwise(const FitResult& fit, const MatrixXd& info, Index k) {
  TestResult res = test_componentwise(fit.theta.alpha(), info, k);
  res.asymptotics_unverified = fit.theta.family == Family::bernoulli;
  return res;
}

}  // namespace glmpo2pls
