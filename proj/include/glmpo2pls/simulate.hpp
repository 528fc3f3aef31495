#pragma once

// Generative simulator: draws (x, y, z) from a GLM-PO2PLS model whose noise
// levels are set as fractions of the total variance of each block.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "glmpo2pls/error.hpp"
#include "glmpo2pls/linalg.hpp"
#include "glmpo2pls/model.hpp"

namespace glmpo2pls {

struct SimSetting {
  std::string id = "setting";
  Index n = 1000;
  Index p = 100;
  Index q = 10;
  double heterogeneity = 0.4;  // Var(h) / Var(u)
  double noise_x = 0.4;        // residual fraction of Var(x)
  double noise_y = 0.4;
  double outcome_noise = 0.2;  // fraction of Var(z) from g, gaussian family
  double a_true = 2.0;
  double b_true = 1.0;
  double a0_true = 0.0;        // bernoulli intercept
  Index r = 1;
  Index rx = 1;
  Index ry = 1;
  Family family = Family::gaussian;
  int replications = 50;
  Index test_n = 1000;
  std::uint64_t seed = 1;
  int quad_nodes = 16;
  int max_iter = 1000;
  double rel_tol = 1e-6;

  void validate() const {
    auto frac = [](double v, const char* name) {
      if (!(v > 0.0 && v < 1.0)) throw ValidationError(std::string(name) + " must lie in (0, 1)");
    };
    frac(heterogeneity, "heterogeneity");
    frac(noise_x, "noise_x");
    frac(noise_y, "noise_y");
    frac(outcome_noise, "outcome_noise");
    ModelDims{p, q, r, rx, ry, n}.validate();
    if (n < 2 || test_n < 1) throw ValidationError("sample sizes must be positive (n >= 2)");
    if (replications < 1) throw ValidationError("replications must be >= 1");
  }
};

struct SimData {
  DataSet train;
  DataSet test;
  Theta truth;
  VectorXd test_linear_predictor;  // a0 + t a + h b on the test rows
  VectorXd train_linear_predictor;
};

namespace detail {

inline MatrixXd standard_normal(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

}  // namespace detail

// Population parameters for a setting. Joint component k has Var(t_k) = 1/k
// (so diag(Sigma_t B) is strictly decreasing), B = I, unit specific variances.
inline Theta truth_for_setting(const SimSetting& s, std::mt19937_64& rng) {
  s.validate();
  Theta th;
  th.family = s.family;
  const MatrixXd qx = linalg::orthonormalize(detail::standard_normal(rng, s.p, s.r + s.rx));
  const MatrixXd qy = linalg::orthonormalize(detail::standard_normal(rng, s.q, s.r + s.ry));
  th.W = qx.leftCols(s.r);
  th.W_perp = qx.rightCols(s.rx);
  th.C = qy.leftCols(s.r);
  th.C_perp = qy.rightCols(s.ry);
  th.B = VectorXd::Ones(s.r);
  th.var_t.resize(s.r);
  for (Index k = 0; k < s.r; ++k) th.var_t(k) = 1.0 / static_cast<double>(k + 1);
  th.var_h = th.var_t * (s.heterogeneity / (1.0 - s.heterogeneity));
  th.var_t_perp = VectorXd::Ones(s.rx);
  th.var_u_perp = VectorXd::Ones(s.ry);
  const double signal_x = th.var_t.sum() + th.var_t_perp.sum();
  const double signal_y = th.var_u().sum() + th.var_u_perp.sum();
  th.var_e = signal_x * s.noise_x / ((1.0 - s.noise_x) * static_cast<double>(s.p));
  th.var_f = signal_y * s.noise_y / ((1.0 - s.noise_y) * static_cast<double>(s.q));
  // Fix loading signs first so the canonical truth carries a_true and b_true.
  th.a = VectorXd::Zero(s.r);
  th.b = VectorXd::Zero(s.r);
  th = canonicalize(th);
  th.a = VectorXd::Constant(s.r, s.a_true);
  th.b = VectorXd::Constant(s.r, s.b_true);
  if (s.family == Family::gaussian) {
    th.a0 = 0.0;
    const double signal_z = th.a.dot(th.var_t.asDiagonal() * th.a) + th.b.dot(th.var_h.asDiagonal() * th.b);
    th.var_g = signal_z > 0 ? signal_z * s.outcome_noise / (1.0 - s.outcome_noise) : 1.0;
  } else {
    th.a0 = s.a0_true;
    th.var_g = 0.0;
  }
  return th;
}

// Draws n rows from theta; returns the data and the true linear predictor.
inline DataSet draw_from(const Theta& th, Index n, std::mt19937_64& rng, VectorXd* linear_predictor = nullptr) {
  const ModelDims d = th.dims();
  const MatrixXd t = detail::standard_normal(rng, n, d.r) * th.var_t.cwiseSqrt().asDiagonal();
  const MatrixXd h = detail::standard_normal(rng, n, d.r) * th.var_h.cwiseSqrt().asDiagonal();
  const MatrixXd tp = detail::standard_normal(rng, n, d.rx) * th.var_t_perp.cwiseSqrt().asDiagonal();
  const MatrixXd up = detail::standard_normal(rng, n, d.ry) * th.var_u_perp.cwiseSqrt().asDiagonal();
  const MatrixXd u = t * th.B.asDiagonal() + h;
  DataSet data;
  data.family = th.family;
  data.X = t * th.W.transpose() + tp * th.W_perp.transpose() +
           std::sqrt(th.var_e) * detail::standard_normal(rng, n, d.p);
  data.Y = u * th.C.transpose() + up * th.C_perp.transpose() +
           std::sqrt(th.var_f) * detail::standard_normal(rng, n, d.q);
  const VectorXd lin = (t * th.a + h * th.b).array() + th.a0;
  if (th.family == Family::gaussian) {
    data.z = lin + std::sqrt(th.var_g) * detail::standard_normal(rng, n, 1).col(0);
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    data.z.resize(n);
    for (Index i = 0; i < n; ++i) data.z(i) = unif(rng) < linalg::sigmoid(lin(i)) ? 1.0 : 0.0;
  }
  if (linear_predictor) *linear_predictor = lin;
  return data;
}

inline SimData generate_dataset(const SimSetting& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SimData out;
  out.truth = truth_for_setting(s, rng);
  out.train = draw_from(out.truth, s.n, rng, &out.train_linear_predictor);
  out.test = draw_from(out.truth, s.test_n, rng, &out.test_linear_predictor);
  return out;
}

struct Centering {
  VectorXd x_mean;
  VectorXd y_mean;
  double z_mean = 0.0;
};

// Column-centers X and Y; centers z for the gaussian family only.
inline Centering center_in_place(DataSet& data) {
  Centering c;
  c.x_mean = data.X.colwise().mean().transpose();
  c.y_mean = data.Y.colwise().mean().transpose();
  data.X.rowwise() -= c.x_mean.transpose();
  data.Y.rowwise() -= c.y_mean.transpose();
  if (data.family == Family::gaussian) {
    c.z_mean = data.z.mean();
    data.z.array() -= c.z_mean;
  }
  return c;
}

inline void apply_centering(const Centering& c, MatrixXd& x, MatrixXd& y) {
  x.rowwise() -= c.x_mean.transpose();
  y.rowwise() -= c.y_mean.transpose();
}

}  // namespace glmpo2pls
