#pragma once

// Independent oracles and fixtures shared by the test binaries. Nothing here
// calls the library's own factorizations, so agreement is a real check.

#include <Eigen/Dense>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <tuple>
#include <vector>

#include "glmpo2pls.hpp"

namespace oracle {

using glmpo2pls::Index;
using glmpo2pls::MatrixXd;
using glmpo2pls::VectorXd;

// Textbook multivariate normal log-density summed over rows, via LU.
inline double dense_mvn_loglik(const MatrixXd& rows, const MatrixXd& cov) {
  const Eigen::FullPivLU<MatrixXd> lu(cov);
  const MatrixXd inv = lu.inverse();
  double logdet = 0.0;
  const MatrixXd u = lu.matrixLU();
  for (Index i = 0; i < u.rows(); ++i) logdet += std::log(std::abs(u(i, i)));
  const double d = static_cast<double>(cov.rows());
  double total = 0.0;
  for (Index i = 0; i < rows.rows(); ++i) {
    const VectorXd x = rows.row(i).transpose();
    total += -0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet + x.dot(inv * x));
  }
  return total;
}

// Joint covariance of (obs, zeta) built entry by entry from the generative model.
struct JointGaussian {
  MatrixXd obs_cov;     // (p+q[+1]) x (p+q[+1])
  MatrixXd cross;       // obs x latent
  MatrixXd latent_cov;  // latent x latent
  MatrixXd loading;     // obs = zeta * loading^T + noise
  VectorXd noise;
};

inline JointGaussian joint_gaussian(const glmpo2pls::Theta& th, bool with_outcome) {
  const Index p = th.W.rows(), q = th.C.rows(), r = th.W.cols(), rx = th.W_perp.cols(), ry = th.C_perp.cols();
  const Index d = 2 * r + rx + ry, o = p + q + (with_outcome ? 1 : 0);
  MatrixXd l = MatrixXd::Zero(o, d);
  l.block(0, 0, p, r) = th.W;
  l.block(0, 2 * r, p, rx) = th.W_perp;
  l.block(p, r, q, r) = th.C;
  l.block(p, 2 * r + rx, q, ry) = th.C_perp;
  if (with_outcome) {
    for (Index k = 0; k < r; ++k) {
      // z = t a + (u - t B) b + g
      l(p + q, k) = th.a(k) - th.B(k) * th.b(k);
      l(p + q, r + k) = th.b(k);
    }
  }
  VectorXd noise(o);
  noise.head(p).setConstant(th.var_e);
  noise.segment(p, q).setConstant(th.var_f);
  if (with_outcome) noise(p + q) = th.var_g;
  MatrixXd lat = MatrixXd::Zero(d, d);
  for (Index k = 0; k < r; ++k) {
    lat(k, k) = th.var_t(k);
    lat(k, r + k) = lat(r + k, k) = th.B(k) * th.var_t(k);
    lat(r + k, r + k) = th.B(k) * th.B(k) * th.var_t(k) + th.var_h(k);
  }
  for (Index k = 0; k < rx; ++k) lat(2 * r + k, 2 * r + k) = th.var_t_perp(k);
  for (Index k = 0; k < ry; ++k) lat(2 * r + rx + k, 2 * r + rx + k) = th.var_u_perp(k);
  JointGaussian g;
  g.latent_cov = lat;
  g.cross = l * lat;
  g.obs_cov = l * lat * l.transpose();
  g.obs_cov.diagonal() += noise;
  g.loading = l;
  g.noise = noise;
  return g;
}

// Conditional mean rows and covariance of zeta given obs by dense Schur complement.
inline std::pair<MatrixXd, MatrixXd> dense_conditional(const JointGaussian& g, const MatrixXd& obs) {
  const MatrixXd k = g.obs_cov.fullPivLu().solve(g.cross);  // obs x latent
  return {obs * k, g.latent_cov - g.cross.transpose() * k};
}

// Central finite-difference gradient.
inline VectorXd central_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
  VectorXd g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

// Central finite-difference Hessian.
inline MatrixXd central_hessian(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
  const Index n = x.size();
  MatrixXd hs(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      VectorXd pp = x, pm = x, mp = x, mm = x;
      pp(i) += h, pp(j) += h;
      pm(i) += h, pm(j) -= h;
      mp(i) -= h, mp(j) += h;
      mm(i) -= h, mm(j) -= h;
      hs(i, j) = hs(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
    }
  }
  return hs;
}

inline VectorXd from_gsl(const gsl_vector* v) {
  VectorXd x(static_cast<Index>(v->size));
  for (std::size_t i = 0; i < v->size; ++i) x(static_cast<Index>(i)) = gsl_vector_get(v, i);
  return x;
}

// Maximizes f with GSL's BFGS using central-difference gradients.
struct OptimumResult {
  VectorXd x;
  double value = 0.0;
  int iterations = 0;
};

inline OptimumResult bfgs_maximize(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                                   int max_iter = 2000, double grad_tol = 1e-7, double h = 1e-6) {
  struct Ctx {
    const std::function<double(const VectorXd&)>* f;
    double h;
  } ctx{&f, h};
  gsl_multimin_function_fdf fn;
  fn.n = static_cast<std::size_t>(x0.size());
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* p) {
    const auto* c = static_cast<Ctx*>(p);
    const double val = (*c->f)(from_gsl(v));
    return std::isfinite(val) ? -val : GSL_POSINF;
  };
  fn.df = [](const gsl_vector* v, void* p, gsl_vector* g) {
    const auto* c = static_cast<Ctx*>(p);
    const VectorXd grad = central_gradient(*c->f, from_gsl(v), c->h);
    for (Index i = 0; i < grad.size(); ++i) gsl_vector_set(g, static_cast<std::size_t>(i), -grad(i));
  };
  fn.fdf = [](const gsl_vector* v, void* p, double* val, gsl_vector* g) {
    const auto* c = static_cast<Ctx*>(p);
    const VectorXd x = from_gsl(v);
    const double fx = (*c->f)(x);
    *val = std::isfinite(fx) ? -fx : GSL_POSINF;
    const VectorXd grad = central_gradient(*c->f, x, c->h);
    for (Index i = 0; i < grad.size(); ++i) gsl_vector_set(g, static_cast<std::size_t>(i), -grad(i));
  };
  gsl_set_error_handler_off();
  gsl_vector* start = gsl_vector_alloc(fn.n);
  for (Index i = 0; i < x0.size(); ++i) gsl_vector_set(start, static_cast<std::size_t>(i), x0(i));
  gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, fn.n);
  gsl_multimin_fdfminimizer_set(s, &fn, start, 1e-2, 0.1);
  OptimumResult out;
  for (out.iterations = 0; out.iterations < max_iter; ++out.iterations) {
    if (gsl_multimin_fdfminimizer_iterate(s) != GSL_SUCCESS) break;
    if (gsl_multimin_test_gradient(s->gradient, grad_tol) == GSL_SUCCESS) break;
  }
  out.x = from_gsl(s->x);
  out.value = -s->f;
  gsl_multimin_fdfminimizer_free(s);
  gsl_vector_free(start);
  return out;
}

// Asymptotic Kolmogorov-Smirnov p-value for uniformity on [0, 1], with
// Stephens' small-sample correction.
inline double ks_uniform_pvalue(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double lo = static_cast<double>(i) / n, hi = static_cast<double>(i + 1) / n;
    d = std::max({d, hi - u[i], u[i] - lo});
  }
  const double lam = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  if (lam < 0.2) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lam * lam);
    sum += term;
    if (std::abs(term) < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

inline MatrixXd random_orthonormal(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> nd;
  MatrixXd a(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) a(i, j) = nd(rng);
  }
  const Eigen::HouseholderQR<MatrixXd> qr(a);
  return qr.householderQ() * MatrixXd::Identity(rows, cols);
}

// Random valid Theta; joint and specific loadings are mutually orthogonal.
inline glmpo2pls::Theta random_theta(std::mt19937_64& rng, Index p, Index q, Index r, Index rx, Index ry,
                                     glmpo2pls::Family family = glmpo2pls::Family::gaussian) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  glmpo2pls::Theta th;
  const MatrixXd wx = random_orthonormal(rng, p, r + rx);
  const MatrixXd cy = random_orthonormal(rng, q, r + ry);
  th.W = wx.leftCols(r);
  th.W_perp = wx.rightCols(rx);
  th.C = cy.leftCols(r);
  th.C_perp = cy.rightCols(ry);
  th.B = VectorXd(r);
  th.var_t = VectorXd(r);
  th.var_h = VectorXd(r);
  th.a = VectorXd(r);
  th.b = VectorXd(r);
  for (Index k = 0; k < r; ++k) {
    th.B(k) = 0.5 + u(rng);
    th.var_t(k) = 0.5 + 1.5 * u(rng);
    th.var_h(k) = 0.2 + 0.6 * u(rng);
    th.a(k) = 3.0 * u(rng) - 1.5;
    th.b(k) = 3.0 * u(rng) - 1.5;
  }
  th.var_t_perp = (0.5 + VectorXd::NullaryExpr(rx, [&] { return u(rng); }).array()).matrix();
  th.var_u_perp = (0.5 + VectorXd::NullaryExpr(ry, [&] { return u(rng); }).array()).matrix();
  th.var_e = 0.2 + 0.5 * u(rng);
  th.var_f = 0.2 + 0.5 * u(rng);
  th.family = family;
  if (family == glmpo2pls::Family::gaussian) {
    th.var_g = 0.3 + u(rng);
  } else {
    th.a0 = u(rng) - 0.5;
  }
  return th;
}

// Draws n rows from theta; centers the gaussian outcome and the blocks when asked.
inline glmpo2pls::DataSet draw(const glmpo2pls::Theta& th, Index n, std::uint64_t seed, bool center = true) {
  std::mt19937_64 rng(seed);
  glmpo2pls::DataSet d = glmpo2pls::draw_from(th, n, rng);
  if (center) glmpo2pls::center_in_place(d);
  return d;
}

}  // namespace oracle

// ---- fixtures for the bernoulli family and direct-maximization oracles ----

namespace oracle {

using namespace glmpo2pls;

inline Theta small_binary_theta(std::uint64_t seed, Index p = 3, Index q = 2, Index rx = 1, Index ry = 0) {
  std::mt19937_64 rng(seed);
  Theta th = canonicalize(random_theta(rng, p, q, 1, rx, ry, Family::bernoulli));
  th.a(0) = 1.5;
  th.b(0) = -1.0;
  return th;
}

// Log density of x given t under the x-block of theta, dense form.
struct BlockDensity {
  MatrixXd inv;
  double logdet;
};

inline BlockDensity block_density(const MatrixXd& spec, const VectorXd& var, double noise) {
  MatrixXd s = spec * var.asDiagonal() * spec.transpose();
  s.diagonal().array() += noise;
  const Eigen::FullPivLU<MatrixXd> lu(s);
  return {lu.inverse(), std::log(std::abs(lu.determinant()))};
}

inline double log_normal(const VectorXd& r, const BlockDensity& b) {
  return -0.5 * (static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi) + b.logdet + r.dot(b.inv * r));
}

// Monte Carlo over prior draws of nu: per row mean of the joint density and
// self-normalized posterior moments of nu with delta-method standard errors.
struct McRow {
  double like = 0.0, like_se = 0.0;
  VectorXd mean, mean_se;
  MatrixXd second, second_se;
  double q0 = 0.0, q0_se = 0.0;  // E[log p(z | nu)] under the posterior
};

inline McRow monte_carlo_row(const Theta& th, const DataSet& d, Index i, Index draws, std::uint64_t seed) {
  const BlockDensity bx = block_density(th.W_perp, th.var_t_perp, th.var_e);
  const BlockDensity by = block_density(th.C_perp, th.var_u_perp, th.var_f);
  const Eigen::LLT<MatrixXd> prior(th.nu_covariance());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const VectorXd x = d.X.row(i).transpose(), y = d.Y.row(i).transpose();
  std::vector<double> w(static_cast<std::size_t>(draws)), lz(w.size());
  MatrixXd nus(draws, 2);
  for (Index k = 0; k < draws; ++k) {
    const VectorXd nu = prior.matrixL() * Eigen::Vector2d(nd(rng), nd(rng));
    nus.row(k) = nu.transpose();
    const double pz = conditional_prob_z(pack_beta(th), nu, th, d.z(i));
    const double lx = log_normal(x - th.W * nu.head(1), bx);
    const double ly = log_normal(y - th.C * nu.tail(1), by);
    w[static_cast<std::size_t>(k)] = pz * std::exp(lx + ly);
    lz[static_cast<std::size_t>(k)] = std::log(pz);
  }
  const double n = static_cast<double>(draws);
  McRow out;
  double s = 0.0, s2 = 0.0;
  for (double v : w) s += v, s2 += v * v;
  out.like = s / n;
  out.like_se = std::sqrt((s2 / n - out.like * out.like) / n);
  // Ratio estimators: E[g] = sum w g / sum w; se^2 = sum w^2 (g - E)^2 / (sum w)^2.
  auto ratio = [&](auto g) {
    double num = 0.0;
    for (Index k = 0; k < draws; ++k) num += w[static_cast<std::size_t>(k)] * g(k);
    const double est = num / s;
    double v = 0.0;
    for (Index k = 0; k < draws; ++k) {
      const double dev = w[static_cast<std::size_t>(k)] * (g(k) - est);
      v += dev * dev;
    }
    return std::pair{est, std::sqrt(v) / s};
  };
  out.mean = VectorXd(2);
  out.mean_se = VectorXd(2);
  out.second = MatrixXd(2, 2);
  out.second_se = MatrixXd(2, 2);
  for (Index a = 0; a < 2; ++a) {
    std::tie(out.mean(a), out.mean_se(a)) = ratio([&](Index k) { return nus(k, a); });
    for (Index b = 0; b < 2; ++b) {
      std::tie(out.second(a, b), out.second_se(a, b)) = ratio([&](Index k) { return nus(k, a) * nus(k, b); });
    }
  }
  std::tie(out.q0, out.q0_se) = ratio([&](Index k) { return lz[static_cast<std::size_t>(k)]; });
  return out;
}

inline DataSet binary_data(const Theta& th, Index n, std::uint64_t seed) {
  DataSet d = draw(th, n, seed);
  d.family = Family::bernoulli;
  return d;
}


// Direct numerical maximization of the observed-data likelihood on tiny
// r = 1 instances, started from the truth (or a shifted point) and from the
// EM solution. Loadings are normalized per column, scales are log-transformed.
struct DirectMax {
  double em = 0.0;        // EM log-likelihood reported by the fit
  double at_em = 0.0;     // oracle objective evaluated at the EM point
  double best = 0.0;      // best value found by BFGS
};

inline DirectMax tiny_gaussian_direct(const Theta& truth, const DataSet& d, const FitResult& f) {
  const Index p = truth.W.rows(), q = truth.C.rows();
  const Index n_par = 2 * p + 2 * q + 10;
  const auto unpack = [&](const VectorXd& x) {
    Theta t = truth;
    t.W = x.segment(0, p).normalized();
    t.W_perp = x.segment(p, p).normalized();
    t.C = x.segment(2 * p, q).normalized();
    t.C_perp = x.segment(2 * p + q, q).normalized();
    const Index o = 2 * p + 2 * q;
    t.B(0) = std::exp(x(o));
    t.var_t(0) = std::exp(x(o + 1));
    t.var_t_perp(0) = std::exp(x(o + 2));
    t.var_u_perp(0) = std::exp(x(o + 3));
    t.var_h(0) = std::exp(x(o + 4));
    t.var_e = std::exp(x(o + 5));
    t.var_f = std::exp(x(o + 6));
    t.var_g = std::exp(x(o + 7));
    t.a(0) = x(o + 8);
    t.b(0) = x(o + 9);
    return t;
  };
  const auto pack = [&](const Theta& t) {
    VectorXd x(n_par);
    x << t.W, t.W_perp, t.C, t.C_perp, std::log(t.B(0)), std::log(t.var_t(0)), std::log(t.var_t_perp(0)),
        std::log(t.var_u_perp(0)), std::log(t.var_h(0)), std::log(t.var_e), std::log(t.var_f), std::log(t.var_g),
        t.a(0), t.b(0);
    return x;
  };
  const auto ll = [&](const VectorXd& x) {
    try {
      return log_likelihood_gaussian(unpack(x), d);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  DirectMax out;
  out.em = f.loglik;
  out.at_em = ll(pack(f.theta));
  out.best = std::max(bfgs_maximize(ll, pack(truth), 5000, 1e-6).value, bfgs_maximize(ll, pack(f.theta), 5000, 1e-6).value);
  return out;
}

// Bernoulli variant with r = rx = 1, ry = 0, quadrature with `nodes` points.
inline DirectMax tiny_binary_direct(const Theta& truth, const DataSet& d, const FitResult& f, int nodes = 16) {
  const Index p = truth.W.rows(), q = truth.C.rows();
  const Index n_par = 2 * p + q + 9;
  const auto unpack = [&](const VectorXd& x) {
    Theta t = truth;
    t.W = x.segment(0, p).normalized();
    t.W_perp = x.segment(p, p).normalized();
    t.C = x.segment(2 * p, q).normalized();
    const Index o = 2 * p + q;
    t.B(0) = std::exp(x(o));
    t.var_t(0) = std::exp(x(o + 1));
    t.var_t_perp(0) = std::exp(x(o + 2));
    t.var_h(0) = std::exp(x(o + 3));
    t.var_e = std::exp(x(o + 4));
    t.var_f = std::exp(x(o + 5));
    t.a0 = x(o + 6);
    t.a(0) = x(o + 7);
    t.b(0) = x(o + 8);
    return t;
  };
  const auto pack = [&](const Theta& t) {
    VectorXd x(n_par);
    x << t.W, t.W_perp, t.C, std::log(t.B(0)), std::log(t.var_t(0)), std::log(t.var_t_perp(0)),
        std::log(t.var_h(0)), std::log(t.var_e), std::log(t.var_f), t.a0, t.a(0), t.b(0);
    return x;
  };
  const auto ll = [&](const VectorXd& x) {
    try {
      return log_likelihood_binary(unpack(x), d, nodes);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  const VectorXd x0 = pack(f.theta);
  VectorXd xs = x0;
  xs.segment(2 * p + q, 6).array() += 0.3;
  xs.tail(3).array() *= 0.5;
  DirectMax out;
  out.em = f.loglik;
  out.at_em = ll(x0);
  out.best = std::max(bfgs_maximize(ll, xs, 3000, 1e-5).value, bfgs_maximize(ll, x0, 3000, 1e-5).value);
  return out;
}

}  // namespace oracle
