#pragma once

// Parameter containers, the model-implied covariance, identifiability
// constraints, the Gaussian observed-data likelihood and exact conditional
// moments of the latent scores.
//
// Latent vector layout used throughout: zeta = (t, u, t_perp, u_perp) with
// block sizes (r, r, r_x, r_y). The outcome model is stored in the (t, h)
// parametrization z = a0 + t a' + h b' (+ g), h = u - t B.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "glmpo2pls/error.hpp"
#include "glmpo2pls/linalg.hpp"

namespace glmpo2pls {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kOrthonormalityTol = 1e-8;
inline constexpr double kVarianceFloor = 1e-10;

enum class Family { gaussian, bernoulli };

inline std::string to_string(Family f) {
  return f == Family::gaussian ? "gaussian" : "bernoulli";
}

inline Family parse_family(const std::string& s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "bernoulli") return Family::bernoulli;
  throw ValidationError("unknown family '" + s + "' (expected gaussian|bernoulli)");
}

struct ModelDims {
  Index p = 0;   // x features
  Index q = 0;   // y features
  Index r = 1;   // joint components
  Index rx = 0;  // x-specific components
  Index ry = 0;  // y-specific components
  Index n = 0;   // samples (0 when unknown)

  Index latent_size() const { return 2 * r + rx + ry; }
  Index t_offset() const { return 0; }
  Index u_offset() const { return r; }
  Index tp_offset() const { return 2 * r; }
  Index up_offset() const { return 2 * r + rx; }

  void validate() const {
    if (p < 1 || q < 1) throw ValidationError("p and q must be >= 1");
    if (r < 1) throw ValidationError("r must be >= 1");
    if (rx < 0 || ry < 0) throw ValidationError("r_x and r_y must be >= 0");
    if (r + rx > p) {
      throw ValidationError("r + r_x = " + std::to_string(r + rx) + " exceeds p = " + std::to_string(p) +
                            "; [W W_perp] cannot have full column rank");
    }
    if (r + ry > q) {
      throw ValidationError("r + r_y = " + std::to_string(r + ry) + " exceeds q = " + std::to_string(q) +
                            "; [C C_perp] cannot have full column rank");
    }
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct Theta {
  MatrixXd W;             // p x r
  MatrixXd C;             // q x r
  MatrixXd W_perp;        // p x r_x
  MatrixXd C_perp;        // q x r_y
  VectorXd B;             // diagonal of B, length r
  VectorXd var_t;         // diag Sigma_t
  VectorXd var_t_perp;    // diag Sigma_tperp
  VectorXd var_u_perp;    // diag Sigma_uperp
  VectorXd var_h;         // diag Sigma_h
  double var_e = 1.0;     // sigma_e^2
  double var_f = 1.0;     // sigma_f^2
  VectorXd a;             // coefficients on t
  VectorXd b;             // coefficients on h
  double a0 = 0.0;        // intercept, 0 for the gaussian family
  double var_g = 1.0;     // sigma_g^2, gaussian family only
  Family family = Family::gaussian;

  ModelDims dims() const { return {W.rows(), C.rows(), W.cols(), W_perp.cols(), C_perp.cols(), 0}; }

  VectorXd var_u() const { return B.array().square() * var_t.array() + var_h.array(); }

  // (a, b) stacked, length 2r.
  VectorXd alpha() const {
    VectorXd out(a.size() + b.size());
    out << a, b;
    return out;
  }

  // Prior covariance of nu = (t, u).
  MatrixXd nu_covariance() const {
    const Index r = B.size();
    MatrixXd s = MatrixXd::Zero(2 * r, 2 * r);
    for (Index k = 0; k < r; ++k) {
      s(k, k) = var_t(k);
      s(k, r + k) = s(r + k, k) = var_t(k) * B(k);
      s(r + k, r + k) = B(k) * B(k) * var_t(k) + var_h(k);
    }
    return s;
  }

  // Prior covariance of zeta = (t, u, t_perp, u_perp).
  MatrixXd latent_covariance() const {
    const ModelDims d = dims();
    MatrixXd s = MatrixXd::Zero(d.latent_size(), d.latent_size());
    s.topLeftCorner(2 * d.r, 2 * d.r) = nu_covariance();
    s.block(d.tp_offset(), d.tp_offset(), d.rx, d.rx) = var_t_perp.asDiagonal();
    s.block(d.up_offset(), d.up_offset(), d.ry, d.ry) = var_u_perp.asDiagonal();
    return s;
  }

  // Shape check; throws ValidationError naming the first mismatching field.
  void check_shapes() const {
    const Index p = W.rows(), q = C.rows(), r = W.cols();
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ValidationError("theta dimension mismatch: " + what);
    };
    need(p >= 1 && q >= 1 && r >= 1, "W and C must be non-empty");
    need(C.cols() == r, "C has " + std::to_string(C.cols()) + " columns, W has " + std::to_string(r));
    need(W_perp.rows() == p, "W_perp rows != p");
    need(C_perp.rows() == q, "C_perp rows != q");
    need(B.size() == r, "B length != r");
    need(var_t.size() == r, "var_t length != r");
    need(var_h.size() == r, "var_h length != r");
    need(var_t_perp.size() == W_perp.cols(), "var_t_perp length != r_x");
    need(var_u_perp.size() == C_perp.cols(), "var_u_perp length != r_y");
    need(a.size() == r, "a length != r");
    need(b.size() == r, "b length != r");
  }
};

struct DataSet {
  MatrixXd X;  // N x p
  MatrixXd Y;  // N x q
  VectorXd z;  // N
  Family family = Family::gaussian;

  Index n() const { return X.rows(); }

  void validate(double center_tol = 1e-8) const {
    if (X.rows() != Y.rows() || X.rows() != z.size()) {
      throw ValidationError("row-count mismatch: X has " + std::to_string(X.rows()) + ", Y has " +
                            std::to_string(Y.rows()) + ", z has " + std::to_string(z.size()));
    }
    if (n() < 2) throw ValidationError("need at least 2 observations");
    if (!X.allFinite() || !Y.allFinite() || !z.allFinite()) {
      throw ValidationError("data contains missing or non-finite values");
    }
    if (family == Family::bernoulli) {
      for (Index i = 0; i < z.size(); ++i) {
        if (z(i) != 0.0 && z(i) != 1.0) {
          throw ValidationError("bernoulli outcome at row " + std::to_string(i) + " is " +
                                std::to_string(z(i)) + ", expected 0 or 1");
        }
      }
    } else {
      const double scale = std::max(1.0, z.cwiseAbs().maxCoeff());
      if (std::abs(z.mean()) > center_tol * scale) {
        throw ValidationError("gaussian outcome must be centered (mean = " + std::to_string(z.mean()) + ")");
      }
    }
  }
};

// Conditional moments of zeta given the observed data. Gaussian conditioning
// yields one covariance shared by all rows (`cov`); the quadrature E-step
// produces one per row (`row_cov`).
struct LatentMoments {
  ModelDims dims;
  MatrixXd mean;                  // N x d
  MatrixXd cov;                   // d x d, shared
  std::vector<MatrixXd> row_cov;  // per row, used when `cov` is empty

  Index n() const { return mean.rows(); }
  bool shared() const { return row_cov.empty(); }

  MatrixXd conditional_cov(Index i) const { return shared() ? cov : row_cov[static_cast<std::size_t>(i)]; }

  MatrixXd second_moment(Index i) const {
    return conditional_cov(i) + mean.row(i).transpose() * mean.row(i);
  }

  // sum_i E[zeta_i^T zeta_i].
  MatrixXd second_moment_sum() const {
    MatrixXd s = mean.transpose() * mean;
    if (shared()) {
      s += static_cast<double>(n()) * cov;
    } else {
      for (const auto& c : row_cov) s += c;
    }
    return s;
  }
};

// Noise-plus-low-rank Gaussian: obs = zeta L^T + eps, eps ~ N(0, diag(noise)),
// zeta ~ N(0, latent_cov). Density and conditioning go through the
// d x d capacity matrix K = latent_cov^-1 + L^T D^-1 L (Woodbury), so the
// (p+q+1)-dimensional covariance is never factorized.
class LowRankGaussian {
 public:
  LowRankGaussian(const MatrixXd& loading, const VectorXd& noise_var, const MatrixXd& latent_cov) {
    if ((noise_var.array() <= 0.0).any() || !noise_var.allFinite()) {
      throw NumericalError("residual variances must be positive and finite");
    }
    const auto prior = linalg::checked_llt(latent_cov, "latent covariance");
    const VectorXd dinv = noise_var.cwiseInverse();
    dinv_ = dinv;
    lt_dinv_ = loading.transpose() * dinv.asDiagonal();
    const Index d = latent_cov.rows();
    MatrixXd capacity = prior.solve(MatrixXd::Identity(d, d)) + lt_dinv_ * loading;
    capacity = 0.5 * (capacity + capacity.transpose()).eval();
    llt_ = linalg::checked_llt(capacity, "posterior precision");
    post_cov_ = llt_.solve(MatrixXd::Identity(d, d));
    post_cov_ = 0.5 * (post_cov_ + post_cov_.transpose()).eval();
    log_det_ = noise_var.array().log().sum() + linalg::log_det(prior) + linalg::log_det(llt_);
    dim_ = loading.rows();
  }

  double log_det() const { return log_det_; }
  const MatrixXd& posterior_cov() const { return post_cov_; }

  MatrixXd posterior_mean(const MatrixXd& obs) const {
    return llt_.solve(lt_dinv_ * obs.transpose()).transpose();
  }

  // Per-row quadratic form obs_i Sigma^-1 obs_i^T.
  VectorXd quadratic_forms(const MatrixXd& obs) const {
    const MatrixXd v = lt_dinv_ * obs.transpose();  // d x N
    const MatrixXd sol = llt_.solve(v);
    VectorXd out = obs.array().square().matrix() * dinv_;
    out -= (v.array() * sol.array()).colwise().sum().transpose().matrix();
    return out;
  }

  VectorXd log_density_rows(const MatrixXd& obs) const {
    const double c = static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi) + log_det_;
    return (-0.5 * (quadratic_forms(obs).array() + c)).matrix();
  }

 private:
  VectorXd dinv_;
  MatrixXd lt_dinv_;
  Eigen::LLT<MatrixXd> llt_;
  MatrixXd post_cov_;
  double log_det_ = 0.0;
  Index dim_ = 0;
};

namespace detail {

// Rows of obs = (x, y[, z]) as linear maps of zeta; the z row uses the
// (t, u) form z = t (a - B b) + u b.
inline MatrixXd loading_map(const Theta& th, bool with_outcome) {
  const ModelDims d = th.dims();
  const Index rows = d.p + d.q + (with_outcome ? 1 : 0);
  MatrixXd l = MatrixXd::Zero(rows, d.latent_size());
  l.block(0, d.t_offset(), d.p, d.r) = th.W;
  l.block(0, d.tp_offset(), d.p, d.rx) = th.W_perp;
  l.block(d.p, d.u_offset(), d.q, d.r) = th.C;
  l.block(d.p, d.up_offset(), d.q, d.ry) = th.C_perp;
  if (with_outcome) {
    const VectorXd a_untilded = th.a.array() - th.B.array() * th.b.array();
    l.block(d.p + d.q, d.t_offset(), 1, d.r) = a_untilded.transpose();
    l.block(d.p + d.q, d.u_offset(), 1, d.r) = th.b.transpose();
  }
  return l;
}

inline VectorXd noise_diag(const Theta& th, bool with_outcome) {
  const Index p = th.W.rows(), q = th.C.rows();
  VectorXd d(p + q + (with_outcome ? 1 : 0));
  d.head(p).setConstant(th.var_e);
  d.segment(p, q).setConstant(th.var_f);
  if (with_outcome) d(p + q) = th.var_g;
  return d;
}

inline MatrixXd stack_obs(const MatrixXd& x, const MatrixXd& y, const VectorXd* z) {
  MatrixXd obs(x.rows(), x.cols() + y.cols() + (z ? 1 : 0));
  obs.leftCols(x.cols()) = x;
  obs.middleCols(x.cols(), y.cols()) = y;
  if (z) obs.col(obs.cols() - 1) = *z;
  return obs;
}

inline LowRankGaussian observed_model(const Theta& th, bool with_outcome) {
  th.check_shapes();
  return LowRankGaussian(loading_map(th, with_outcome), noise_diag(th, with_outcome), th.latent_covariance());
}

inline void require_gaussian(const Theta& th, const char* op) {
  if (th.family != Family::gaussian) {
    throw ValidationError(std::string(op) + " requires the gaussian family");
  }
}

}  // namespace detail

// Covariance of (x, y, z) implied by theta (gaussian family).
inline MatrixXd build_joint_covariance(const Theta& th) {
  th.check_shapes();
  detail::require_gaussian(th, "build_joint_covariance");
  const ModelDims d = th.dims();
  const Index p = d.p, q = d.q;
  const auto st = th.var_t.asDiagonal();
  const auto sh = th.var_h.asDiagonal();
  const auto bd = th.B.asDiagonal();
  MatrixXd s(p + q + 1, p + q + 1);
  s.topLeftCorner(p, p) = th.W * st * th.W.transpose() +
                          th.W_perp * th.var_t_perp.asDiagonal() * th.W_perp.transpose() +
                          th.var_e * MatrixXd::Identity(p, p);
  s.block(p, p, q, q) = th.C * th.var_u().asDiagonal() * th.C.transpose() +
                        th.C_perp * th.var_u_perp.asDiagonal() * th.C_perp.transpose() +
                        th.var_f * MatrixXd::Identity(q, q);
  s.block(0, p, p, q) = th.W * st * bd * th.C.transpose();
  s.block(0, p + q, p, 1) = th.W * st * th.a;
  s.block(p, p + q, q, 1) = th.C * (bd * (st * th.a) + sh * th.b);
  s(p + q, p + q) = th.a.dot(st * th.a) + th.b.dot(sh * th.b) + th.var_g;
  s.triangularView<Eigen::StrictlyLower>() = s.transpose();
  return s;
}

struct Violation {
  std::string constraint;
  double deviation = 0.0;
};

inline std::vector<Violation> validate_constraints(const Theta& th, double tol = kOrthonormalityTol) {
  std::vector<Violation> out;
  th.check_shapes();
  auto check_var = [&](const VectorXd& v, const std::string& name) {
    for (Index k = 0; k < v.size(); ++k) {
      if (!(v(k) > kVarianceFloor)) out.push_back({name + "[" + std::to_string(k) + "] > 0", v(k)});
    }
  };
  check_var(th.var_t, "var_t");
  check_var(th.var_h, "var_h");
  check_var(th.var_t_perp, "var_t_perp");
  check_var(th.var_u_perp, "var_u_perp");
  if (!(th.var_e > kVarianceFloor)) out.push_back({"var_e > 0", th.var_e});
  if (!(th.var_f > kVarianceFloor)) out.push_back({"var_f > 0", th.var_f});
  if (th.family == Family::gaussian && !(th.var_g > kVarianceFloor)) out.push_back({"var_g > 0", th.var_g});

  auto check_orth = [&](const MatrixXd& g, const std::string& name) {
    const double dev = linalg::orthonormality_deviation(g);
    if (!(dev <= tol)) out.push_back({name + " semi-orthogonal", dev});
  };
  check_orth(th.W, "W");
  check_orth(th.C, "C");
  check_orth(th.W_perp, "W_perp");
  check_orth(th.C_perp, "C_perp");

  auto check_rank = [&](const MatrixXd& a, const MatrixXd& b, const std::string& name) {
    MatrixXd m(a.rows(), a.cols() + b.cols());
    m << a, b;
    Eigen::JacobiSVD<MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    const double smin = s.size() ? s(s.size() - 1) : 0.0;
    if (!(smin > tol)) out.push_back({name + " full column rank", smin});
  };
  check_rank(th.W, th.W_perp, "[W W_perp]");
  check_rank(th.C, th.C_perp, "[C C_perp]");

  for (Index k = 0; k < th.B.size(); ++k) {
    if (!(th.B(k) > 0.0)) out.push_back({"B[" + std::to_string(k) + "] > 0", th.B(k)});
  }
  const VectorXd key = th.var_t.array() * th.B.array();
  for (Index k = 0; k + 1 < key.size(); ++k) {
    if (!(key(k) > key(k + 1))) {
      out.push_back({"diag(Sigma_t B) strictly decreasing at " + std::to_string(k), key(k + 1) - key(k)});
    }
  }
  return out;
}

namespace detail {

inline Index argmax_abs(const Eigen::Ref<const VectorXd>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (std::abs(v(i)) > std::abs(v(best))) best = i;
  }
  return best;
}

inline MatrixXd permute_cols(const MatrixXd& m, const std::vector<Index>& order) {
  MatrixXd out(m.rows(), m.cols());
  for (std::size_t j = 0; j < order.size(); ++j) out.col(static_cast<Index>(j)) = m.col(order[j]);
  return out;
}

inline VectorXd permute(const VectorXd& v, const std::vector<Index>& order) {
  VectorXd out(v.size());
  for (std::size_t j = 0; j < order.size(); ++j) out(static_cast<Index>(j)) = v(order[j]);
  return out;
}

// Specific blocks: sign by largest |entry|, order by decreasing variance.
inline void canonicalize_specific(MatrixXd& g, VectorXd& var) {
  std::vector<Index> order(static_cast<std::size_t>(g.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return var(i) > var(j); });
  g = permute_cols(g, order);
  var = permute(var, order);
  for (Index k = 0; k < g.cols(); ++k) {
    if (g(argmax_abs(g.col(k)), k) < 0) g.col(k) *= -1.0;
  }
}

}  // namespace detail

// Sign and order convention: joint components sorted by decreasing
// diag(Sigma_t B) (ties: larger Sigma_t, then lower index); each W column's
// largest-|entry| is positive, flipping C, a, b with it.
inline Theta canonicalize(const Theta& in) {
  in.check_shapes();
  Theta th = in;
  const Index r = th.W.cols();
  std::vector<Index> order(static_cast<std::size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  const VectorXd key = th.var_t.array() * th.B.array();
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) {
    if (key(i) != key(j)) return key(i) > key(j);
    if (th.var_t(i) != th.var_t(j)) return th.var_t(i) > th.var_t(j);
    return i < j;
  });
  th.W = detail::permute_cols(th.W, order);
  th.C = detail::permute_cols(th.C, order);
  th.B = detail::permute(th.B, order);
  th.var_t = detail::permute(th.var_t, order);
  th.var_h = detail::permute(th.var_h, order);
  th.a = detail::permute(th.a, order);
  th.b = detail::permute(th.b, order);
  for (Index k = 0; k < r; ++k) {
    if (th.W(detail::argmax_abs(th.W.col(k)), k) < 0) {
      th.W.col(k) *= -1.0;
      th.C.col(k) *= -1.0;
      th.a(k) = -th.a(k);
      th.b(k) = -th.b(k);
    }
  }
  detail::canonicalize_specific(th.W_perp, th.var_t_perp);
  detail::canonicalize_specific(th.C_perp, th.var_u_perp);
  return th;
}

inline double log_likelihood_gaussian(const Theta& th, const DataSet& data) {
  detail::require_gaussian(th, "log_likelihood_gaussian");
  const auto model = detail::observed_model(th, true);
  return model.log_density_rows(detail::stack_obs(data.X, data.Y, &data.z)).sum();
}

// E[zeta | x, y, z] and the shared conditional covariance (gaussian family).
inline LatentMoments conditional_latent_moments(const Theta& th, const DataSet& data) {
  detail::require_gaussian(th, "conditional_latent_moments");
  const auto model = detail::observed_model(th, true);
  LatentMoments m;
  m.dims = th.dims();
  m.dims.n = data.n();
  m.mean = model.posterior_mean(detail::stack_obs(data.X, data.Y, &data.z));
  m.cov = model.posterior_cov();
  return m;
}

// E[zeta | x, y] ignoring the outcome; valid for either family.
inline LatentMoments conditional_latent_moments_xy(const Theta& th, const MatrixXd& x, const MatrixXd& y) {
  const auto model = detail::observed_model(th, false);
  LatentMoments m;
  m.dims = th.dims();
  m.dims.n = x.rows();
  m.mean = model.posterior_mean(detail::stack_obs(x, y, nullptr));
  m.cov = model.posterior_cov();
  return m;
}

// Marginal log-likelihood of (x, y) alone under the PO2PLS blocks.
inline double log_likelihood_xy(const Theta& th, const MatrixXd& x, const MatrixXd& y) {
  const auto model = detail::observed_model(th, false);
  return model.log_density_rows(detail::stack_obs(x, y, nullptr)).sum();
}

}  // namespace glmpo2pls
