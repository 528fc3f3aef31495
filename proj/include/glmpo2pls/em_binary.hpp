#pragma once

// EM for the bernoulli-outcome model. The observed likelihood integrates the
// specific scores out analytically and the joint scores nu = (t, u) by a
// tensor Gauss-Hermite grid; beta = (a0, a, b) moves by one Armijo-controlled
// gradient step per iteration.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>

#include "glmpo2pls/em_gaussian.hpp"
#include "glmpo2pls/error.hpp"
#include "glmpo2pls/linalg.hpp"
#include "glmpo2pls/model.hpp"
#include "glmpo2pls/quadrature.hpp"

namespace glmpo2pls {

// beta layout: (a0, a_1..a_r, b_1..b_r).
inline VectorXd pack_beta(const Theta& th) {
  VectorXd beta(1 + th.a.size() + th.b.size());
  beta << th.a0, th.a, th.b;
  return beta;
}

inline void unpack_beta(const VectorXd& beta, Theta& th) {
  const Index r = th.W.cols();
  if (beta.size() != 2 * r + 1) throw ValidationError("beta must have length 2r + 1");
  th.a0 = beta(0);
  th.a = beta.segment(1, r);
  th.b = beta.tail(r);
}

namespace detail {

inline double linear_predictor(const VectorXd& beta, const Eigen::Ref<const Eigen::RowVectorXd>& nu,
                               const VectorXd& B) {
  const Index r = B.size();
  double lin = beta(0);
  for (Index k = 0; k < r; ++k) {
    const double t = nu(k), u = nu(r + k);
    lin += t * beta(1 + k) + (u - t * B(k)) * beta(1 + r + k);
  }
  return lin;
}

// log N(obs_i; s_m G^T, G_s diag(var_s) G_s^T + var_noise I) for every row i
// and grid score s_m, through the Woodbury identity on the specific block.
class BlockConditionalDensity {
 public:
  BlockConditionalDensity(const MatrixXd& obs, const MatrixXd& joint, const MatrixXd& spec, const VectorXd& var_spec,
                          double var_noise)
      : joint_(joint), var_noise_(var_noise) {
    const Index dim = joint.rows(), ks = spec.cols();
    obs_joint_ = obs * joint;
    obs_sq_ = obs.rowwise().squaredNorm();
    jtj_ = joint.transpose() * joint;
    MatrixXd cap = var_spec.cwiseInverse().asDiagonal();
    cap += spec.transpose() * spec / var_noise;
    const auto llt = linalg::checked_llt(cap, "specific-block precision");
    spec_cov_ = llt.solve(MatrixXd::Identity(ks, ks));
    jts_ = joint.transpose() * spec;
    obs_spec_ = obs * spec;
    log_det_ = static_cast<double>(dim) * std::log(var_noise) + var_spec.array().log().sum() + linalg::log_det(llt);
    dim_ = dim;
  }

  // N x K matrix of log densities for grid scores (K x r).
  MatrixXd log_density(const MatrixXd& scores) const {
    const double inv = 1.0 / var_noise_;
    const MatrixXd cross = obs_joint_ * scores.transpose();                      // N x K
    const VectorXd ss = (scores * jtj_).cwiseProduct(scores).rowwise().sum();   // K
    MatrixXd quad = (-2.0 * cross).colwise() + obs_sq_;
    quad.rowwise() += ss.transpose();
    quad *= inv;
    if (spec_cov_.rows() > 0) {
      const MatrixXd g = scores * jts_;                                          // K x ks
      const MatrixXd op = obs_spec_ * spec_cov_;                                 // N x ks
      const VectorXd a = op.cwiseProduct(obs_spec_).rowwise().sum();             // N
      const MatrixXd bmat = op * g.transpose();                                  // N x K
      const VectorXd c = (g * spec_cov_).cwiseProduct(g).rowwise().sum();        // K
      MatrixXd corr = (-2.0 * bmat).colwise() + a;
      corr.rowwise() += c.transpose();
      quad -= inv * inv * corr;
    }
    const double cst = static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi) + log_det_;
    return (-0.5 * (quad.array() + cst)).matrix();
  }

  // E[spec | obs, joint score] = kappa_i - score * gamma.
  MatrixXd kappa() const { return obs_spec_ * spec_cov_ / var_noise_; }
  MatrixXd gamma() const { return jts_ * spec_cov_ / var_noise_; }
  const MatrixXd& spec_cov() const { return spec_cov_; }

 private:
  MatrixXd joint_;
  double var_noise_;
  MatrixXd obs_joint_;
  VectorXd obs_sq_;
  MatrixXd jtj_;
  MatrixXd spec_cov_;
  MatrixXd jts_;
  MatrixXd obs_spec_;
  double log_det_ = 0.0;
  Index dim_ = 0;
};

inline void require_bernoulli(const Theta& th, const DataSet& data, const char* op) {
  if (th.family != Family::bernoulli || data.family != Family::bernoulli) {
    throw ValidationError(std::string(op) + " requires the bernoulli family");
  }
  if (data.X.cols() != th.W.rows() || data.Y.cols() != th.C.rows()) {
    throw ValidationError(std::string(op) + ": data dimensions do not match theta");
  }
}

// Regressors (t, u - t B) of each row of nu, n x 2r.
inline MatrixXd nu_regressors(const MatrixXd& nu, const VectorXd& B) {
  const Index r = B.size();
  MatrixXd out(nu.rows(), 2 * r);
  out.leftCols(r) = nu.leftCols(r);
  out.rightCols(r) = nu.rightCols(r) - nu.leftCols(r) * B.asDiagonal();
  return out;
}

// Node nu_im = centers_i + offsets_m. Row part (1, R_i) and node part (0, G_m)
// of the design d_im = (1, t_im, u_im - t_im B).
struct GridDesign {
  MatrixXd row;   // N x (2r + 1)
  MatrixXd node;  // K x (2r + 1)
};

inline GridDesign grid_design(const MatrixXd& centers, const MatrixXd& offsets, const VectorXd& B) {
  const Index dim = 2 * B.size() + 1;
  GridDesign g;
  g.row.resize(centers.rows(), dim);
  g.row.col(0).setOnes();
  g.row.rightCols(dim - 1) = nu_regressors(centers, B);
  g.node.resize(offsets.rows(), dim);
  g.node.col(0).setZero();
  g.node.rightCols(dim - 1) = nu_regressors(offsets, B);
  return g;
}

// sum_i sum_m c_im d_im d_im^T for the additive design.
inline MatrixXd design_outer_sum(const MatrixXd& c, const GridDesign& g) {
  const MatrixXd cn = c * g.node;  // N x dim
  MatrixXd out = g.row.transpose() * c.rowwise().sum().asDiagonal() * g.row;
  const MatrixXd cross = g.row.transpose() * cn;
  out += cross + cross.transpose();
  out += g.node.transpose() * c.colwise().sum().transpose().asDiagonal() * g.node;
  return 0.5 * (out + out.transpose());
}

// Linear predictors lin_im = d_im beta, N x K.
inline MatrixXd grid_linear_predictor(const GridDesign& g, const VectorXd& beta) {
  MatrixXd lin = (g.node * beta).transpose().replicate(g.row.rows(), 1);
  lin.colwise() += g.row * beta;
  return lin;
}

struct LogJoint {
  QuadratureGrid grid;  // offsets from the per-row centers
  MatrixXd centers;     // N x 2r
  VectorXd row_base;    // log f(x_i, y_i) when centered conditionally, else 0
  MatrixXd value;       // N x K, log[w_m p(z_i|nu_im)] (+ log f(x_i|t_m) f(y_i|u_m) when prior-centered)
  BlockConditionalDensity x_block;
  BlockConditionalDensity y_block;
};

// Conditional centering rewrites the integrand exactly as
// f(x, y) * p(z | nu) * N(nu; E[nu | x, y], Cov(nu | x, y)) and applies the
// Gauss-Hermite transform to that gaussian; prior centering applies it to
// f(nu) and keeps f(x | t) f(y | u) inside the sum.
inline LogJoint log_joint(const Theta& th, const DataSet& data, int m, double budget, GridCentering centering) {
  th.check_shapes();
  const Index r = th.W.cols(), n = data.n();
  BlockConditionalDensity xb(data.X, th.W, th.W_perp, th.var_t_perp, th.var_e);
  BlockConditionalDensity yb(data.Y, th.C, th.C_perp, th.var_u_perp, th.var_f);
  QuadratureGrid grid;
  MatrixXd centers;
  VectorXd base;
  MatrixXd val;
  if (centering == GridCentering::conditional) {
    const auto model = observed_model(th, false);
    const MatrixXd obs = stack_obs(data.X, data.Y, nullptr);
    const MatrixXd cov = model.posterior_cov().topLeftCorner(2 * r, 2 * r);
    grid = build_grid_for_covariance(0.5 * (cov + cov.transpose()), m, budget);
    centers = model.posterior_mean(obs).leftCols(2 * r);
    base = model.log_density_rows(obs);
    val = grid.logweights.transpose().replicate(n, 1);
  } else {
    grid = build_grid(th, m, budget);
    centers = MatrixXd::Zero(n, 2 * r);
    base = VectorXd::Zero(n);
    val = xb.log_density(grid.points.leftCols(r)) + yb.log_density(grid.points.rightCols(r));
    val.rowwise() += grid.logweights.transpose();
  }
  const MatrixXd lin = grid_linear_predictor(grid_design(centers, grid.points, th.B), pack_beta(th));
  for (Index j = 0; j < lin.cols(); ++j) {
    for (Index i = 0; i < n; ++i) {
      val(i, j) += linalg::log_sigmoid(data.z(i) == 1.0 ? lin(i, j) : -lin(i, j));
    }
  }
  return {std::move(grid), std::move(centers), std::move(base), std::move(val), std::move(xb), std::move(yb)};
}

}  // namespace detail

// p(z | nu) under beta; B comes from theta.
inline double conditional_prob_z(const VectorXd& beta, const VectorXd& nu, const Theta& th, double z) {
  const double lin = detail::linear_predictor(beta, nu.transpose(), th.B);
  return z == 1.0 ? std::exp(linalg::log_sigmoid(lin)) : std::exp(linalg::log_sigmoid(-lin));
}

// E-step product for the bernoulli family: the grid, posterior node weights,
// the observed-data log-likelihood per row and the moments of zeta.
struct SufficientStats {
  QuadratureGrid grid;    // offsets g_m
  MatrixXd centers;       // N x 2r; node nu_im = centers_i + g_m
  MatrixXd weights;       // N x K posterior weights, rows sum to 1
  VectorXd loglik_rows;   // log f(x_i, y_i, z_i)
  LatentMoments moments;  // zeta = (t, u, t_perp, u_perp), per-row covariances

  double loglik() const { return loglik_rows.sum(); }
};

inline double log_likelihood_binary(const Theta& th, const DataSet& data, int m, double budget = kDefaultGridBudget,
                                    GridCentering centering = GridCentering::conditional) {
  detail::require_bernoulli(th, data, "log_likelihood_binary");
  const auto lj = detail::log_joint(th, data, m, budget, centering);
  double total = 0.0;
  for (Index i = 0; i < data.n(); ++i) total += lj.row_base(i) + linalg::log_sum_exp(lj.value.row(i).transpose());
  return total;
}

inline SufficientStats e_step_binary(const Theta& th, const DataSet& data, int m, double budget = kDefaultGridBudget,
                                     GridCentering centering = GridCentering::conditional) {
  detail::require_bernoulli(th, data, "e_step_binary");
  auto lj = detail::log_joint(th, data, m, budget, centering);
  const ModelDims d = th.dims();
  const Index n = data.n(), r = d.r, k = lj.grid.size(), dn = 2 * r;

  SufficientStats st;
  st.loglik_rows.resize(n);
  st.weights.resize(n, k);
  VectorXd row(k);
  for (Index i = 0; i < n; ++i) {
    row = lj.value.row(i).transpose();
    const double lse = linalg::log_sum_exp(row);
    if (!std::isfinite(lse)) {
      throw NumericalError("all posterior weights underflow at observation " + std::to_string(i) +
                           ": the quadrature grid misses the posterior mass");
    }
    st.loglik_rows(i) = lj.row_base(i) + lse;
    row = (row.array() - lse).exp();
    st.weights.row(i) = (row / row.sum()).transpose();
  }

  // Posterior moments of nu: centers plus weighted offsets.
  const MatrixXd& pts = lj.grid.points;
  const MatrixXd shift = st.weights * pts;
  const MatrixXd mean_nu = lj.centers + shift;
  MatrixXd outer(k, dn * dn);
  for (Index j = 0; j < k; ++j) {
    const MatrixXd o = pts.row(j).transpose() * pts.row(j);
    outer.row(j) = Eigen::Map<const Eigen::RowVectorXd>(o.data(), dn * dn);
  }
  const MatrixXd second_off = (st.weights * outer).transpose();  // dn^2 x N

  // Specific scores given nu are gaussian: xi = kappa_i - nu Gamma + noise.
  const Index dl = d.latent_size();
  MatrixXd a_map = MatrixXd::Zero(dn, dl);
  a_map.leftCols(dn).setIdentity();
  a_map.block(0, d.tp_offset(), r, d.rx) = -lj.x_block.gamma();
  a_map.block(r, d.up_offset(), r, d.ry) = -lj.y_block.gamma();
  MatrixXd kappa = MatrixXd::Zero(n, dl);
  kappa.middleCols(d.tp_offset(), d.rx) = lj.x_block.kappa();
  kappa.middleCols(d.up_offset(), d.ry) = lj.y_block.kappa();
  MatrixXd spec_cov = MatrixXd::Zero(dl, dl);
  spec_cov.block(d.tp_offset(), d.tp_offset(), d.rx, d.rx) = lj.x_block.spec_cov();
  spec_cov.block(d.up_offset(), d.up_offset(), d.ry, d.ry) = lj.y_block.spec_cov();

  st.moments.dims = d;
  st.moments.dims.n = n;
  st.moments.mean = kappa + mean_nu * a_map;
  st.moments.row_cov.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Eigen::Map<const MatrixXd> s2(second_off.col(i).data(), dn, dn);
    MatrixXd cov_nu = MatrixXd(s2) - shift.row(i).transpose() * shift.row(i);
    cov_nu = 0.5 * (cov_nu + cov_nu.transpose()).eval();
    st.moments.row_cov[static_cast<std::size_t>(i)] = a_map.transpose() * cov_nu * a_map + spec_cov;
  }
  st.grid = std::move(lj.grid);
  st.centers = std::move(lj.centers);
  return st;
}

// Q_beta = sum_i sum_m w_im log p(z_i | nu_im; beta), weights fixed at theta'.
inline double q_beta(const VectorXd& beta, const Theta& th, const DataSet& data, const SufficientStats& st) {
  const MatrixXd lin = detail::grid_linear_predictor(detail::grid_design(st.centers, st.grid.points, th.B), beta);
  double q = 0.0;
  for (Index j = 0; j < lin.cols(); ++j) {
    for (Index i = 0; i < lin.rows(); ++i) {
      q += st.weights(i, j) * linalg::log_sigmoid(data.z(i) == 1.0 ? lin(i, j) : -lin(i, j));
    }
  }
  return q;
}

inline VectorXd grad_q_beta(const VectorXd& beta, const Theta& th, const DataSet& data, const SufficientStats& st) {
  const auto g = detail::grid_design(st.centers, st.grid.points, th.B);
  const MatrixXd lin = detail::grid_linear_predictor(g, beta);
  MatrixXd resid(lin.rows(), lin.cols());
  for (Index j = 0; j < lin.cols(); ++j) {
    for (Index i = 0; i < lin.rows(); ++i) resid(i, j) = st.weights(i, j) * (data.z(i) - linalg::sigmoid(lin(i, j)));
  }
  return g.row.transpose() * resid.rowwise().sum() + g.node.transpose() * resid.colwise().sum().transpose();
}

struct ArmijoResult {
  VectorXd beta;
  double step = 0.0;
  bool accepted = false;  // false: no step met the ascent condition, beta unchanged
  double q_before = 0.0;
  double q_after = 0.0;
};

inline constexpr double kArmijoShrink = 0.8;
inline constexpr double kArmijoSlope = 0.5;
inline constexpr double kArmijoMinStep = 1e-12;

// Backtracking from s = 1, s <- 0.8 s, until
// Q(beta + s g) >= Q(beta) + 0.5 s g^T g.
template <class Objective>
ArmijoResult armijo_search(Objective&& q, const VectorXd& beta, const VectorXd& grad) {
  ArmijoResult res;
  res.beta = beta;
  res.q_before = q(beta);
  res.q_after = res.q_before;
  const double gg = grad.squaredNorm();
  if (gg == 0.0) {
    res.accepted = true;
    return res;
  }
  for (double s = 1.0; s >= kArmijoMinStep; s *= kArmijoShrink) {
    const VectorXd cand = beta + s * grad;
    const double qc = q(cand);
    if (std::isfinite(qc) && qc >= res.q_before + kArmijoSlope * s * gg) {
      res.beta = cand;
      res.step = s;
      res.accepted = true;
      res.q_after = qc;
      return res;
    }
  }
  return res;
}

inline ArmijoResult armijo_update(const VectorXd& beta, const Theta& th, const DataSet& data,
                                  const SufficientStats& st) {
  return armijo_search([&](const VectorXd& b) { return q_beta(b, th, data, st); }, beta,
                       grad_q_beta(beta, th, data, st));
}

// Full EM iteration for the bernoulli family, given the E-step at `prev`.
inline Theta em_step_binary(const Theta& prev, const DataSet& data, const SufficientStats& st, bool* armijo_ok = nullptr) {
  const ArmijoResult ar = armijo_update(pack_beta(prev), prev, data, st);
  if (armijo_ok) *armijo_ok = ar.accepted;
  VectorXd sign;
  Theta next = m_step_po2pls_blocks(st.moments, data, prev, &sign);
  unpack_beta(ar.beta, next);
  // Keep the predictor fixed as a function of (t, u) across the B update.
  detail::reanchor_outcome(next, prev.B, next.a, next.b, sign);
  return next;
}

inline FitResult fit_binary_from(const Theta& start, const DataSet& data, const FitConfig& config) {
  config.validate();
  data.validate();
  if (data.family != Family::bernoulli) throw ValidationError("fit_binary requires bernoulli data");
  FitResult res;
  res.quad_nodes = config.quad_nodes;
  res.centering = config.centering;
  Theta th = start;
  th.family = Family::bernoulli;
  double ll_prev = 0.0;
  for (int it = 0;; ++it) {
    SufficientStats st = e_step_binary(th, data, config.quad_nodes, config.grid_budget, config.centering);
    const double ll = st.loglik();
    if (!std::isfinite(ll)) throw NumericalError("non-finite log-likelihood at iteration " + std::to_string(it));
    if (config.trace_likelihood) res.loglik_trace.push_back(ll);
    res.loglik = ll;
    if (it > 0 && rel_change_below(ll_prev, ll, config.rel_tol)) {
      res.converged = true;
      break;
    }
    if (it == config.max_iter) break;
    ll_prev = ll;
    bool ok = true;
    th = em_step_binary(th, data, st, &ok);
    if (!ok) ++res.armijo_failures;
    if (config.canonicalize_each_iter) th = canonicalize(th);
    res.iterations = it + 1;
  }
  res.theta = canonicalize(th);
  res.final_moments = e_step_binary(res.theta, data, config.quad_nodes, config.grid_budget, config.centering).moments;
  return res;
}

inline FitResult fit_binary(const DataSet& data, const ModelDims& dims, const FitConfig& config) {
  return fit_binary_from(init_params(data, dims, config), data, config);
}

}  // namespace glmpo2pls
