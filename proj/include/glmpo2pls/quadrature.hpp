#pragma once

// Gauss-Hermite rules and tensor-product grids over nu = (t, u).

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <string>

#include "glmpo2pls/error.hpp"
#include "glmpo2pls/linalg.hpp"
#include "glmpo2pls/model.hpp"

namespace glmpo2pls {

inline constexpr double kDefaultGridBudget = 1e6;

// Physicists' rule: integral of f(x) exp(-x^2) ~ sum w_k f(x_k).
struct HermiteRule {
  VectorXd nodes;
  VectorXd weights;
  Index size() const { return nodes.size(); }
};

// Golub-Welsch: nodes are eigenvalues of the symmetric tridiagonal Jacobi
// matrix with off-diagonal sqrt(k/2); weights are sqrt(pi) v_0k^2.
inline HermiteRule gauss_hermite_rule(int m) {
  if (m < 1 || m > 50) throw ValidationError("Gauss-Hermite node count must be in [1, 50], got " + std::to_string(m));
  HermiteRule rule;
  if (m == 1) {
    rule.nodes = VectorXd::Zero(1);
    rule.weights = VectorXd::Constant(1, std::sqrt(std::numbers::pi));
    return rule;
  }
  VectorXd diag = VectorXd::Zero(m);
  VectorXd sub(m - 1);
  for (int k = 1; k < m; ++k) sub(k - 1) = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) throw NumericalError("Gauss-Hermite eigenproblem failed");
  VectorXd x = es.eigenvalues();
  VectorXd w = std::sqrt(std::numbers::pi) * es.eigenvectors().row(0).transpose().array().square();
  // Symmetrize: x_k = -x_{m-1-k}, w_k = w_{m-1-k}.
  VectorXd xs(m), ws(m);
  for (int k = 0; k < m; ++k) {
    xs(k) = 0.5 * (x(k) - x(m - 1 - k));
    ws(k) = 0.5 * (w(k) + w(m - 1 - k));
  }
  if (m % 2 == 1) xs(m / 2) = 0.0;
  ws *= std::sqrt(std::numbers::pi) / ws.sum();
  rule.nodes = xs;
  rule.weights = ws;
  return rule;
}

// Tensor-product grid for an expectation against N(0, cov):
// points nu_m = sqrt(2) L nu*_m with cov = L L^T, weights prod(w*/sqrt(pi)).
struct QuadratureGrid {
  Index dim = 0;
  MatrixXd points;      // K x dim
  VectorXd logweights;  // K
  Index size() const { return points.rows(); }
};

inline QuadratureGrid build_grid_for_covariance(const MatrixXd& cov, int m, double budget = kDefaultGridBudget) {
  const Index dim = cov.rows();
  const double count = std::pow(static_cast<double>(m), static_cast<double>(dim));
  if (count > budget) {
    throw ResourceError("quadrature grid needs M^(2r) = " + std::to_string(m) + "^" + std::to_string(dim) + " = " +
                        std::to_string(count) + " points, above the budget of " + std::to_string(budget) +
                        "; cost grows as O(M^(2r)), reduce M or r");
  }
  const HermiteRule rule = gauss_hermite_rule(m);
  const auto llt = linalg::checked_llt(cov, "prior covariance of (t, u)");
  const MatrixXd lower = llt.matrixL();
  const VectorXd logw = (rule.weights.array() / std::sqrt(std::numbers::pi)).log();
  const Index k = static_cast<Index>(count);
  QuadratureGrid g;
  g.dim = dim;
  g.points.resize(k, dim);
  g.logweights.resize(k);
  VectorXd node(dim);
  for (Index idx = 0; idx < k; ++idx) {
    Index rem = idx;
    double lw = 0.0;
    for (Index j = dim - 1; j >= 0; --j) {
      const Index digit = rem % m;
      rem /= m;
      node(j) = rule.nodes(digit);
      lw += logw(digit);
    }
    g.points.row(idx) = (std::sqrt(2.0) * (lower * node)).transpose();
    g.logweights(idx) = lw;
  }
  return g;
}

inline QuadratureGrid build_grid(const Theta& th, int m, double budget = kDefaultGridBudget) {
  th.check_shapes();
  return build_grid_for_covariance(th.nu_covariance(), m, budget);
}

}  // namespace glmpo2pls
