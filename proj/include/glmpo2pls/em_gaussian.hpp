#pragma once

// EM for the gaussian-outcome model: initialization, the per-block M-step
// maximizers and the fitting loop.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "glmpo2pls/error.hpp"
#include "glmpo2pls/linalg.hpp"
#include "glmpo2pls/model.hpp"

namespace glmpo2pls {

enum class InitStrategy { svd, random };

// Where the bernoulli quadrature grid is centered: on the conditional law of
// nu given (x, y) (default), or on the prior of nu.
enum class GridCentering { conditional, prior };

inline std::string to_string(GridCentering c) { return c == GridCentering::prior ? "prior" : "conditional"; }

inline GridCentering parse_grid_centering(const std::string& s) {
  if (s == "conditional") return GridCentering::conditional;
  if (s == "prior") return GridCentering::prior;
  throw ValidationError("unknown grid centering '" + s + "' (expected conditional or prior)");
}

struct FitConfig {
  int max_iter = 1000;
  double rel_tol = 1e-6;
  InitStrategy init = InitStrategy::svd;
  std::uint64_t seed = 0;  // used by InitStrategy::random
  bool canonicalize_each_iter = false;
  bool trace_likelihood = true;
  int quad_nodes = 16;               // bernoulli family only
  double grid_budget = 1e6;          // max quadrature points, bernoulli only
  GridCentering centering = GridCentering::conditional;  // bernoulli only

  void validate() const {
    if (max_iter < 1) throw ValidationError("max_iter must be >= 1");
    if (!(rel_tol > 0)) throw ValidationError("rel_tol must be > 0");
    if (quad_nodes < 1 || quad_nodes > 50) throw ValidationError("quad_nodes must be in [1, 50]");
  }
};

struct FitResult {
  Theta theta;
  std::vector<double> loglik_trace;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  LatentMoments final_moments;
  int quad_nodes = 0;        // 0 for gaussian fits
  GridCentering centering = GridCentering::conditional;
  int armijo_failures = 0;   // bernoulli fits: beta steps that found no ascent
};

struct OutcomeUpdate {
  VectorXd a;
  VectorXd b;
  double var_g = 0.0;
};

inline constexpr double kMinB = 1e-8;

namespace detail {

// Sets (a, b) of `next` so that t (a - B b) + u b is the predictor given by
// (a, b) under prev_B, after the B update and the orientation flips of u.
inline void reanchor_outcome(Theta& next, const VectorXd& prev_B, const VectorXd& a, const VectorXd& b,
                             const VectorXd& sign) {
  next.a = a.array() + (sign.array() * next.B.array() - prev_B.array()) * b.array();
  next.b = sign.cwiseProduct(b);
}

inline void check_variance_floor(const Theta& th) {
  auto chk = [](const VectorXd& v, const char* name) {
    for (Index k = 0; k < v.size(); ++k) {
      if (!std::isfinite(v(k)) || v(k) <= kVarianceFloor) {
        throw NumericalError(std::string("variance floor breached: ") + name + "[" + std::to_string(k) +
                             "] = " + std::to_string(v(k)));
      }
    }
  };
  chk(th.var_t, "var_t");
  chk(th.var_h, "var_h");
  chk(th.var_t_perp, "var_t_perp");
  chk(th.var_u_perp, "var_u_perp");
  chk(VectorXd::Constant(1, th.var_e), "var_e");
  chk(VectorXd::Constant(1, th.var_f), "var_f");
  if (th.family == Family::gaussian) chk(VectorXd::Constant(1, th.var_g), "var_g");
}

// (t, u) -> (t, h) as a right-multiplication: (t, u) J = (t, u - t B).
inline MatrixXd th_transform(const VectorXd& B) {
  const Index r = B.size();
  MatrixXd j = MatrixXd::Identity(2 * r, 2 * r);
  j.topRightCorner(r, r) = -B.asDiagonal().toDenseMatrix();
  return j;
}

inline double column_variance(const Eigen::Ref<const VectorXd>& v) {
  return v.squaredNorm() / static_cast<double>(v.size());
}

// Logistic regression of z on [1, S] by Newton steps with a tiny ridge; only
// used to seed the bernoulli fit.
inline VectorXd logistic_seed(const MatrixXd& s, const VectorXd& z) {
  const Index n = s.rows(), k = s.cols() + 1;
  MatrixXd d(n, k);
  d.col(0).setOnes();
  d.rightCols(k - 1) = s;
  VectorXd beta = VectorXd::Zero(k);
  const double zbar = std::clamp(z.mean(), 0.01, 0.99);
  beta(0) = std::log(zbar / (1 - zbar));
  for (int it = 0; it < 50; ++it) {
    const VectorXd eta = d * beta;
    VectorXd mu(n), w(n);
    for (Index i = 0; i < n; ++i) {
      mu(i) = linalg::sigmoid(eta(i));
      w(i) = std::max(mu(i) * (1 - mu(i)), 1e-10);
    }
    MatrixXd h = d.transpose() * w.asDiagonal() * d;
    h.diagonal().array() += 1e-6;
    const VectorXd step = h.ldlt().solve(d.transpose() * (z - mu));
    beta += step;
    if (step.norm() < 1e-10 * (1 + beta.norm())) break;
  }
  return beta;
}

}  // namespace detail

// Theta from fixed loadings: latent variances from score variances, B from
// per-component score regressions, outcome coefficients from a regression of
// z on the (t, h) scores.
inline Theta theta_from_loadings(const DataSet& data, const MatrixXd& W, const MatrixXd& C, const MatrixXd& Wp,
                                 const MatrixXd& Cp) {
  const Index n = data.n(), p = W.rows(), q = C.rows(), r = W.cols();
  const MatrixXd t = data.X * W, u = data.Y * C, tp = data.X * Wp, up = data.Y * Cp;
  const double x_scale = data.X.squaredNorm() / static_cast<double>(n * p);
  const double y_scale = data.Y.squaredNorm() / static_cast<double>(n * q);
  const double floor_x = std::max(1e-6 * x_scale, 1e-8), floor_y = std::max(1e-6 * y_scale, 1e-8);
  Theta th;
  th.W = W;
  th.C = C;
  th.W_perp = Wp;
  th.C_perp = Cp;
  th.family = data.family;
  th.var_t.resize(r);
  th.B.resize(r);
  th.var_h.resize(r);
  MatrixXd h(n, r);
  for (Index k = 0; k < r; ++k) {
    const double tt = t.col(k).squaredNorm();
    th.var_t(k) = std::max(tt / static_cast<double>(n), floor_x);
    th.B(k) = std::max(tt > 0 ? t.col(k).dot(u.col(k)) / tt : 1.0, 1e-2);
    h.col(k) = u.col(k) - th.B(k) * t.col(k);
    th.var_h(k) = std::max(detail::column_variance(h.col(k)), floor_y);
  }
  th.var_t_perp.resize(Wp.cols());
  for (Index k = 0; k < Wp.cols(); ++k) th.var_t_perp(k) = std::max(detail::column_variance(tp.col(k)), floor_x);
  th.var_u_perp.resize(Cp.cols());
  for (Index k = 0; k < Cp.cols(); ++k) th.var_u_perp(k) = std::max(detail::column_variance(up.col(k)), floor_y);
  // Residual variances use the leftover degrees of freedom and are floored at
  // 1% of the per-feature variance so a saturated block does not start degenerate.
  const auto resid_var = [n](const MatrixXd& res, Index cols, Index used, double scale) {
    const Index dof = cols > used ? cols - used : cols;
    return std::max(res.squaredNorm() / static_cast<double>(n * dof), std::max(1e-2 * scale, 1e-8));
  };
  th.var_e = resid_var(data.X - t * W.transpose() - tp * Wp.transpose(), p, r + Wp.cols(), x_scale);
  th.var_f = resid_var(data.Y - u * C.transpose() - up * Cp.transpose(), q, r + Cp.cols(), y_scale);

  MatrixXd scores(n, 2 * r);
  scores << t, h;
  if (data.family == Family::gaussian) {
    MatrixXd gram = scores.transpose() * scores;
    gram.diagonal().array() += 1e-10 * (1.0 + gram.diagonal().maxCoeff());
    const VectorXd coef = gram.ldlt().solve(scores.transpose() * data.z);
    th.a = coef.head(r);
    th.b = coef.tail(r);
    th.a0 = 0.0;
    const double zvar = data.z.squaredNorm() / static_cast<double>(n);
    th.var_g = std::max((data.z - scores * coef).squaredNorm() / static_cast<double>(n), std::max(1e-6 * zvar, 1e-8));
  } else {
    const VectorXd beta = detail::logistic_seed(scores, data.z);
    th.a0 = beta(0);
    th.a = beta.segment(1, r);
    th.b = beta.tail(r);
    th.var_g = 0.0;
  }
  return th;
}

inline Theta init_params(const DataSet& data, const ModelDims& dims, const FitConfig& config) {
  dims.validate();
  if (data.X.cols() != dims.p || data.Y.cols() != dims.q) {
    throw ValidationError("data has p = " + std::to_string(data.X.cols()) + ", q = " + std::to_string(data.Y.cols()) +
                          " but dims declare p = " + std::to_string(dims.p) + ", q = " + std::to_string(dims.q));
  }
  MatrixXd W, C, Wp, Cp;
  if (config.init == InitStrategy::svd) {
    const MatrixXd xty = data.X.transpose() * data.Y;
    Eigen::BDCSVD<MatrixXd> svd(xty, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& s = svd.singularValues();
    if (s.size() < dims.r || !(s(0) > 0) || s(dims.r - 1) <= 1e-10 * s(0)) {
      throw ValidationError("X^T Y has rank below r = " + std::to_string(dims.r) + "; choose a smaller r");
    }
    W = svd.matrixU().leftCols(dims.r);
    C = svd.matrixV().leftCols(dims.r);
    auto specific = [](const MatrixXd& data_block, const MatrixXd& joint, Index k) -> MatrixXd {
      if (k == 0) return MatrixXd(joint.rows(), 0);
      const MatrixXd resid = data_block - data_block * joint * joint.transpose();
      Eigen::BDCSVD<MatrixXd> rs(resid, Eigen::ComputeThinV);
      MatrixXd g = rs.matrixV().leftCols(k);
      // Re-orthogonalize against the joint loadings to remove rounding drift.
      g -= joint * (joint.transpose() * g);
      return linalg::orthonormalize(g);
    };
    Wp = specific(data.X, W, dims.rx);
    Cp = specific(data.Y, C, dims.ry);
  } else {
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    auto draw = [&](Index rows, Index cols) {
      MatrixXd m(rows, cols);
      for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
      return m;
    };
    // Randomized range finder: one sketch of the cross-covariance and the
    // deflated block covariances against gaussian test matrices.
    const MatrixXd xty = data.X.transpose() * data.Y;
    W = linalg::orthonormalize(xty * draw(dims.q, dims.r));
    C = linalg::orthonormalize(xty.transpose() * draw(dims.p, dims.r));
    // Pair signs so each joint score covariance starts positive; B >= 0 cannot flip them later.
    const VectorXd pair = (W.transpose() * xty * C).diagonal();
    for (Index k = 0; k < dims.r; ++k) {
      if (pair(k) < 0) C.col(k) *= -1.0;
    }
    auto specific = [&](const MatrixXd& data_block, const MatrixXd& joint, Index k) -> MatrixXd {
      if (k == 0) return MatrixXd(joint.rows(), 0);
      const MatrixXd resid = data_block - data_block * joint * joint.transpose();
      MatrixXd g = resid.transpose() * (resid * draw(joint.rows(), k));
      g -= joint * (joint.transpose() * g);
      return linalg::orthonormalize(g);
    };
    Wp = specific(data.X, W, dims.rx);
    Cp = specific(data.Y, C, dims.ry);
  }
  return canonicalize(theta_from_loadings(data, W, C, Wp, Cp));
}

// Maximizer of the outcome term: (a, b) = z^T E[(t,h)] E[(t,h)^T (t,h)]^-1 and
// the matching residual variance, with h = u - t B for the supplied B.
inline OutcomeUpdate m_step_outcome(const LatentMoments& moments, const VectorXd& z, const VectorXd& B) {
  const ModelDims& d = moments.dims;
  const Index r = d.r, n = moments.n();
  if (z.size() != n) throw ValidationError("outcome length does not match moments");
  if (B.size() != r) throw ValidationError("B length does not match moments");
  const MatrixXd j = detail::th_transform(B);
  const MatrixXd m_nu = moments.mean.leftCols(2 * r);
  const MatrixXd s_nu = moments.second_moment_sum().topLeftCorner(2 * r, 2 * r);
  const MatrixXd s_om = j.transpose() * s_nu * j;
  const VectorXd cross = (z.transpose() * m_nu * j).transpose();

  Eigen::LDLT<MatrixXd> ldlt(s_om);
  const double rcond = ldlt.rcond();
  if (ldlt.info() != Eigen::Success || !(rcond > 1e-13)) {
    throw NumericalError("singular E[(t,h)^T (t,h)] (rcond = " + std::to_string(rcond) +
                         "): t and h scores are nearly collinear");
  }
  const VectorXd alpha = ldlt.solve(cross);
  OutcomeUpdate out;
  out.a = alpha.head(r);
  out.b = alpha.tail(r);
  const double rss = z.squaredNorm() - 2.0 * cross.dot(alpha) + alpha.dot(s_om * alpha);
  out.var_g = rss / static_cast<double>(n);
  if (!(out.var_g > kVarianceFloor)) {
    throw NumericalError("variance floor breached: var_g = " + std::to_string(out.var_g));
  }
  return out;
}

// Maximizers of the x, y and latent-prior terms. Loadings use the orthogonal
// Procrustes solution one block at a time (W, then W_perp given the new W),
// variances are conditional-moment averages. A negative B_k is absorbed by
// flipping the sign of (C_k, u_k), which leaves the likelihood unchanged;
// `orientation` receives the applied signs.
inline Theta m_step_po2pls_blocks(const LatentMoments& moments, const DataSet& data, const Theta& prev,
                                  VectorXd* orientation = nullptr) {
  const ModelDims d = prev.dims();
  if (moments.dims.r != d.r || moments.dims.rx != d.rx || moments.dims.ry != d.ry) {
    throw ValidationError("moments layout does not match theta");
  }
  const Index n = data.n(), r = d.r, rx = d.rx, ry = d.ry;
  const double nd = static_cast<double>(n);
  const MatrixXd s = moments.second_moment_sum();
  const MatrixXd xtm = data.X.transpose() * moments.mean;
  const MatrixXd ytm = data.Y.transpose() * moments.mean;
  const Index it = d.t_offset(), iu = d.u_offset(), itp = d.tp_offset(), iup = d.up_offset();

  Theta th = prev;
  th.W = linalg::polar_factor(xtm.middleCols(it, r) - prev.W_perp * s.block(itp, it, rx, r), "W");
  if (rx > 0) {
    th.W_perp = linalg::polar_factor(xtm.middleCols(itp, rx) - th.W * s.block(it, itp, r, rx), "W_perp");
  }
  th.C = linalg::polar_factor(ytm.middleCols(iu, r) - prev.C_perp * s.block(iup, iu, ry, r), "C");
  if (ry > 0) {
    th.C_perp = linalg::polar_factor(ytm.middleCols(iup, ry) - th.C * s.block(iu, iup, r, ry), "C_perp");
  }

  // E||x - t W^T - t_perp W_perp^T||^2 summed over rows.
  auto residual_ss = [&](const MatrixXd& obs, const MatrixXd& otm, const MatrixXd& joint, const MatrixXd& spec,
                         Index j0, Index s0) {
    const Index kj = joint.cols(), ks = spec.cols();
    MatrixXd l(joint.rows(), kj + ks);
    l << joint, spec;
    MatrixXd cross(otm.rows(), kj + ks);
    cross << otm.middleCols(j0, kj), otm.middleCols(s0, ks);
    MatrixXd sb(kj + ks, kj + ks);
    sb.topLeftCorner(kj, kj) = s.block(j0, j0, kj, kj);
    sb.topRightCorner(kj, ks) = s.block(j0, s0, kj, ks);
    sb.bottomLeftCorner(ks, kj) = s.block(s0, j0, ks, kj);
    sb.bottomRightCorner(ks, ks) = s.block(s0, s0, ks, ks);
    return obs.squaredNorm() - 2.0 * (l.transpose() * cross).trace() + (l.transpose() * l * sb).trace();
  };
  th.var_e = residual_ss(data.X, xtm, th.W, th.W_perp, it, itp) / (nd * static_cast<double>(d.p));
  th.var_f = residual_ss(data.Y, ytm, th.C, th.C_perp, iu, iup) / (nd * static_cast<double>(d.q));

  VectorXd sign = VectorXd::Ones(r);
  for (Index k = 0; k < r; ++k) {
    const double stt = s(it + k, it + k), stu = s(it + k, iu + k), suu = s(iu + k, iu + k);
    th.var_t(k) = stt / nd;
    double b = stu / stt;
    th.var_h(k) = (suu - 2.0 * b * stu + b * b * stt) / nd;
    if (b < 0) {
      sign(k) = -1.0;
      th.C.col(k) *= -1.0;
      b = -b;
    }
    th.B(k) = std::max(b, kMinB);
  }
  if (orientation) *orientation = sign;
  for (Index k = 0; k < rx; ++k) th.var_t_perp(k) = s(itp + k, itp + k) / nd;
  for (Index k = 0; k < ry; ++k) th.var_u_perp(k) = s(iup + k, iup + k) / nd;
  detail::check_variance_floor(th);
  return th;
}

// One full EM iteration for the gaussian family. The outcome regression uses
// h-moments formed with the B of `prev`; `a` is then re-expressed for the
// updated B so the predictor as a function of (t, u) is unchanged by the B
// update (keeps the joint M-step an exact maximizer).
inline Theta em_step_gaussian(const Theta& prev, const DataSet& data) {
  const LatentMoments mom = conditional_latent_moments(prev, data);
  VectorXd sign;
  Theta next = m_step_po2pls_blocks(mom, data, prev, &sign);
  const OutcomeUpdate out = m_step_outcome(mom, data.z, prev.B);
  detail::reanchor_outcome(next, prev.B, out.a, out.b, sign);
  next.var_g = out.var_g;
  next.a0 = 0.0;
  return next;
}

inline bool rel_change_below(double prev, double next, double tol) {
  return std::abs(next - prev) <= tol * std::max(std::abs(prev), 1e-300);
}

inline FitResult fit_gaussian_from(const Theta& start, const DataSet& data, const FitConfig& config) {
  config.validate();
  data.validate();
  if (data.family != Family::gaussian) throw ValidationError("fit_gaussian requires gaussian data");
  FitResult res;
  res.theta = start;
  res.theta.family = Family::gaussian;
  double ll = log_likelihood_gaussian(res.theta, data);
  if (!std::isfinite(ll)) throw NumericalError("non-finite log-likelihood at initialization");
  if (config.trace_likelihood) res.loglik_trace.push_back(ll);
  for (int it = 1; it <= config.max_iter; ++it) {
    Theta next = em_step_gaussian(res.theta, data);
    if (config.canonicalize_each_iter) next = canonicalize(next);
    const double ll_next = log_likelihood_gaussian(next, data);
    if (!std::isfinite(ll_next)) {
      throw NumericalError("non-finite log-likelihood at iteration " + std::to_string(it));
    }
    res.theta = std::move(next);
    res.iterations = it;
    if (config.trace_likelihood) res.loglik_trace.push_back(ll_next);
    const bool done = rel_change_below(ll, ll_next, config.rel_tol);
    ll = ll_next;
    if (done) {
      res.converged = true;
      break;
    }
  }
  res.theta = canonicalize(res.theta);
  res.loglik = ll;
  res.final_moments = conditional_latent_moments(res.theta, data);
  return res;
}

inline FitResult fit_gaussian(const DataSet& data, const ModelDims& dims, const FitConfig& config) {
  return fit_gaussian_from(init_params(data, dims, config), data, config);
}

}  // namespace glmpo2pls
