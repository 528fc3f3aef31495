#pragma once

// Simulation study: evaluation metrics, ridge baselines and the replication
// driver.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "glmpo2pls/em_binary.hpp"
#include "glmpo2pls/em_gaussian.hpp"
#include "glmpo2pls/error.hpp"
#include "glmpo2pls/linalg.hpp"
#include "glmpo2pls/model.hpp"
#include "glmpo2pls/simulate.hpp"

namespace glmpo2pls {

// ---- metrics ---------------------------------------------------------------

inline double scaled_error(double est, double truth) {
  if (truth == 0.0) throw ValidationError("scaled error is undefined for a zero true value");
  return (est - truth) / truth;
}

inline double rmsep(const VectorXd& predicted, const VectorXd& actual) {
  if (predicted.size() != actual.size()) {
    throw ValidationError("rmsep length mismatch: " + std::to_string(predicted.size()) + " vs " +
                          std::to_string(actual.size()));
  }
  if (predicted.size() == 0) throw ValidationError("rmsep of empty vectors");
  return std::sqrt((predicted - actual).squaredNorm() / static_cast<double>(predicted.size()));
}

// Linear predictor a0 + E[t|x,y] a + E[h|x,y] b for centered new rows.
inline VectorXd predict_outcome(const Theta& th, const MatrixXd& x, const MatrixXd& y) {
  th.check_shapes();
  if (x.cols() != th.W.rows() || y.cols() != th.C.rows() || x.rows() != y.rows()) {
    throw ValidationError("prediction data dimensions do not match the model: X is " + std::to_string(x.rows()) +
                          "x" + std::to_string(x.cols()) + ", Y is " + std::to_string(y.rows()) + "x" +
                          std::to_string(y.cols()));
  }
  const Index r = th.dims().r;
  const LatentMoments mom = conditional_latent_moments_xy(th, x, y);
  const MatrixXd t = mom.mean.leftCols(r);
  const MatrixXd h = mom.mean.middleCols(r, r) - t * th.B.asDiagonal();
  return ((t * th.a + h * th.b).array() + th.a0).matrix();
}

inline VectorXd predict_outcome(const FitResult& fit, const MatrixXd& x, const MatrixXd& y) {
  return predict_outcome(fit.theta, x, y);
}

inline VectorXd loading_inner_product(const MatrixXd& est, const MatrixXd& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw ValidationError("loading shape mismatch");
  }
  VectorXd out(est.cols());
  for (Index k = 0; k < est.cols(); ++k) out(k) = std::abs(est.col(k).dot(truth.col(k)));
  return out;
}

namespace detail {

inline std::vector<Index> top_indices(const VectorXd& scores, Index count) {
  std::vector<Index> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return std::abs(scores(a)) > std::abs(scores(b)); });
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

// Fraction of the true top ceil(p/4) features (by |score|) recovered in the
// estimated top ceil(p/4); ties go to the lower index.
inline double tpr_top_quarter(const VectorXd& est_scores, const VectorXd& true_scores) {
  if (est_scores.size() != true_scores.size()) throw ValidationError("tpr length mismatch");
  const Index p = est_scores.size();
  if (p < 4) throw ValidationError("tpr needs at least 4 features");
  const Index top = (p + 3) / 4;
  const auto e = detail::top_indices(est_scores, top);
  const auto t = detail::top_indices(true_scores, top);
  std::vector<Index> both;
  std::set_intersection(e.begin(), e.end(), t.begin(), t.end(), std::back_inserter(both));
  return static_cast<double>(both.size()) / static_cast<double>(top);
}

// ---- ridge baselines --------------------------------------------------------

// Penalized objective: negative log-likelihood (unit-variance gaussian or
// logistic) + lambda/2 |beta|^2, with an unpenalized intercept.
struct RidgeFit {
  double intercept = 0.0;
  VectorXd coef;
  double lambda = 0.0;
  VectorXd lambdas;
  VectorXd cv_error;  // mean held-out MSE (gaussian) or deviance (bernoulli)

  VectorXd predict(const MatrixXd& x) const { return ((x * coef).array() + intercept).matrix(); }
};

// 50 log-spaced values c * s, c in [1e-4, 1e4], s = tr(X^T X) / min(N, p).
inline VectorXd ridge_lambda_grid(const MatrixXd& x, int count = 50) {
  if (count < 2) throw ValidationError("lambda grid needs at least 2 points");
  const MatrixXd xc = x.rowwise() - x.colwise().mean();
  const double s = xc.squaredNorm() / static_cast<double>(std::min(x.rows(), x.cols()));
  const double scale = s > 0 ? s : 1.0;
  VectorXd grid(count);
  for (int k = 0; k < count; ++k) {
    grid(k) = scale * std::pow(10.0, -4.0 + 8.0 * static_cast<double>(k) / static_cast<double>(count - 1));
  }
  return grid;
}

namespace detail {

// Thin SVD of the (optionally centered) design, reused across lambdas.
struct RidgeBasis {
  VectorXd x_mean;
  MatrixXd u;  // N x k
  VectorXd s;  // k
  MatrixXd v;  // p x k
};

inline RidgeBasis ridge_basis(const MatrixXd& x, bool intercept) {
  RidgeBasis b;
  b.x_mean = intercept ? VectorXd(x.colwise().mean().transpose()) : VectorXd::Zero(x.cols());
  const MatrixXd xc = x.rowwise() - b.x_mean.transpose();
  Eigen::BDCSVD<MatrixXd> svd(xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  b.u = svd.matrixU();
  b.s = svd.singularValues();
  b.v = svd.matrixV();
  return b;
}

inline RidgeFit ridge_gaussian(const RidgeBasis& b, const VectorXd& z, double lambda, bool intercept) {
  RidgeFit f;
  f.lambda = lambda;
  const double zm = intercept ? z.mean() : 0.0;
  const VectorXd uz = b.u.transpose() * (z.array() - zm).matrix();
  const VectorXd shrink = (b.s.array() / (b.s.array().square() + lambda)).matrix();
  f.coef = b.v * shrink.cwiseProduct(uz);
  f.intercept = zm - b.x_mean.dot(f.coef);
  return f;
}

// Newton/IRLS in the row space of X: beta = V g, X beta = (U S) g.
inline RidgeFit ridge_bernoulli(const RidgeBasis& b, const VectorXd& z, double lambda, bool intercept,
                                VectorXd* warm = nullptr) {
  const MatrixXd r = b.u * b.s.asDiagonal();
  const Index n = r.rows(), k = r.cols(), dim = k + 1;
  MatrixXd design(n, dim);
  design.col(0).setOnes();
  design.rightCols(k) = r;
  VectorXd theta = (warm && warm->size() == dim) ? *warm : VectorXd::Zero(dim);
  if (!intercept) theta(0) = 0.0;
  VectorXd pen = VectorXd::Constant(dim, lambda);
  pen(0) = intercept ? 0.0 : 1e12;
  auto objective = [&](const VectorXd& th) {
    const VectorXd lin = design * th;
    double v = 0.0;
    for (Index i = 0; i < n; ++i) v -= z(i) * linalg::log_sigmoid(lin(i)) + (1.0 - z(i)) * linalg::log_sigmoid(-lin(i));
    return v + 0.5 * th.tail(k).squaredNorm() * lambda;
  };
  double obj = objective(theta);
  for (int it = 0; it < 100; ++it) {
    const VectorXd lin = design * theta;
    VectorXd mu(n), w(n);
    for (Index i = 0; i < n; ++i) {
      mu(i) = linalg::sigmoid(lin(i));
      w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-12);
    }
    const VectorXd grad = design.transpose() * (z - mu) - pen.cwiseProduct(theta);
    MatrixXd hess = design.transpose() * w.asDiagonal() * design;
    hess.diagonal() += pen;
    const VectorXd step = hess.ldlt().solve(grad);
    double s = 1.0, next = objective(theta + step);
    while (next > obj && s > 1e-10) {
      s *= 0.5;
      next = objective(theta + s * step);
    }
    if (!(next <= obj)) break;
    theta += s * step;
    const double change = obj - next;
    obj = next;
    if (change <= 1e-10 * (1.0 + std::abs(obj))) break;
  }
  if (warm) *warm = theta;
  RidgeFit f;
  f.lambda = lambda;
  f.coef = b.v * theta.tail(k);
  f.intercept = theta(0) - b.x_mean.dot(f.coef);
  return f;
}

inline double ridge_loss(const RidgeFit& f, const MatrixXd& x, const VectorXd& z, Family family) {
  const VectorXd lin = f.predict(x);
  if (family == Family::gaussian) return (lin - z).squaredNorm() / static_cast<double>(z.size());
  double dev = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    dev -= 2.0 * (z(i) * linalg::log_sigmoid(lin(i)) + (1.0 - z(i)) * linalg::log_sigmoid(-lin(i)));
  }
  return dev / static_cast<double>(z.size());
}

inline MatrixXd take_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

inline VectorXd take_rows(const VectorXd& v, const std::vector<Index>& rows) {
  VectorXd out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Index>(i)) = v(rows[i]);
  return out;
}

inline void check_ridge_inputs(const MatrixXd& x, const VectorXd& z, Family family) {
  if (x.rows() != z.size()) throw ValidationError("ridge: X and z row counts differ");
  if (!x.allFinite() || !z.allFinite()) throw ValidationError("ridge: non-finite input");
  if (family == Family::bernoulli) {
    for (Index i = 0; i < z.size(); ++i) {
      if (z(i) != 0.0 && z(i) != 1.0) throw ValidationError("ridge: bernoulli outcome must be 0/1");
    }
  }
}

}  // namespace detail

// Ridge fit at a single lambda > 0.
inline RidgeFit ridge_fit(const MatrixXd& x, const VectorXd& z, double lambda, Family family,
                          bool intercept = true) {
  detail::check_ridge_inputs(x, z, family);
  if (!(lambda > 0.0)) throw ValidationError("ridge lambda must be > 0");
  const auto basis = detail::ridge_basis(x, intercept);
  return family == Family::gaussian ? detail::ridge_gaussian(basis, z, lambda, intercept)
                                    : detail::ridge_bernoulli(basis, z, lambda, intercept);
}

// K-fold cross-validated ridge over `lambdas`; refits at the chosen lambda on
// all rows. Fold membership comes from a shuffle seeded by `seed`.
inline RidgeFit ridge_fit_cv(const MatrixXd& x, const VectorXd& z, const VectorXd& lambdas, int folds,
                             Family family, std::uint64_t seed = 1) {
  detail::check_ridge_inputs(x, z, family);
  const Index n = x.rows();
  if (folds < 2 || n < folds) throw ValidationError("ridge CV needs 2 <= folds <= N");
  if (lambdas.size() < 1 || (lambdas.array() <= 0.0).any()) throw ValidationError("lambda grid must be positive");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  // Decreasing lambdas so bernoulli fits warm-start from heavier shrinkage.
  std::vector<Index> order(static_cast<std::size_t>(lambdas.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return lambdas(a) > lambdas(b); });

  VectorXd err = VectorXd::Zero(lambdas.size());
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, held;
    for (Index i = 0; i < n; ++i) (i % folds == f ? held : train).push_back(perm[static_cast<std::size_t>(i)]);
    const MatrixXd xtr = detail::take_rows(x, train), xte = detail::take_rows(x, held);
    const VectorXd ztr = detail::take_rows(z, train), zte = detail::take_rows(z, held);
    const auto basis = detail::ridge_basis(xtr, true);
    VectorXd warm;
    for (Index li : order) {
      const RidgeFit fit = family == Family::gaussian ? detail::ridge_gaussian(basis, ztr, lambdas(li), true)
                                                      : detail::ridge_bernoulli(basis, ztr, lambdas(li), true, &warm);
      err(li) += detail::ridge_loss(fit, xte, zte, family) * static_cast<double>(held.size());
    }
  }
  err /= static_cast<double>(n);
  Index best = 0;
  for (Index k = 1; k < err.size(); ++k) {
    if (err(k) < err(best)) best = k;
  }
  RidgeFit out = ridge_fit(x, z, lambdas(best), family);
  out.lambdas = lambdas;
  out.cv_error = err;
  return out;
}

// ---- study driver ------------------------------------------------------------

struct StudyRecord {
  std::string setting_id;
  int replication = 0;
  std::string method;
  std::string metric;
  double value = 0.0;
};

struct MetricSummary {
  std::string setting_id;
  std::string method;
  std::string metric;
  std::size_t count = 0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

struct StudyReport {
  std::vector<StudyRecord> records;
  std::vector<MetricSummary> summaries;
  std::map<std::string, int> failures;  // per setting id

  // Summary for (setting, method, metric); throws when absent.
  const MetricSummary& summary(const std::string& setting, const std::string& method,
                               const std::string& metric) const {
    for (const auto& s : summaries) {
      if (s.setting_id == setting && s.method == method && s.metric == metric) return s;
    }
    throw ValidationError("no summary for " + setting + "/" + method + "/" + metric);
  }
};

inline constexpr const char* kMethodModel = "glm-po2pls";
inline constexpr const char* kMethodRidgeX = "ridge-x";
inline constexpr const char* kMethodRidgeY = "ridge-y";

// Linear-interpolation quantile of a non-empty sample.
inline double quantile(std::vector<double> v, double prob) {
  if (v.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }

// splitmix64 mix of (seed, stream) into a replication seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace detail {

inline FitResult fit_for_setting(const SimSetting& s, const DataSet& train) {
  FitConfig cfg;
  cfg.max_iter = s.max_iter;
  cfg.rel_tol = s.rel_tol;
  cfg.quad_nodes = s.quad_nodes;
  const ModelDims dims{s.p, s.q, s.r, s.rx, s.ry, s.n};
  return s.family == Family::gaussian ? fit_gaussian(train, dims, cfg) : fit_binary(train, dims, cfg);
}

struct Replication {
  std::vector<StudyRecord> records;
  bool failed = false;
};

inline Replication run_replication(const SimSetting& s, int rep) {
  Replication out;
  auto add = [&](const char* method, const std::string& metric, double value) {
    out.records.push_back({s.id, rep, method, metric, value});
  };
  try {
    const SimData sim = generate_dataset(s, derive_seed(s.seed, static_cast<std::uint64_t>(rep)));
    DataSet train = sim.train;
    const Centering c = center_in_place(train);
    MatrixXd xte = sim.test.X, yte = sim.test.Y;
    apply_centering(c, xte, yte);
    const FitResult fit = fit_for_setting(s, train);
    if (!fit.converged) throw NumericalError("EM did not converge");
    const bool gaussian = s.family == Family::gaussian;
    const VectorXd target = gaussian ? sim.test.z : sim.test_linear_predictor;
    const VectorXd pred = (predict_outcome(fit, xte, yte).array() + c.z_mean).matrix();

    const Theta& th = fit.theta;
    for (Index k = 0; k < s.r; ++k) {
      const std::string sfx = s.r > 1 ? "_" + std::to_string(k + 1) : "";
      add(kMethodModel, "scaled_error_a" + sfx, scaled_error(th.a(k), sim.truth.a(k)));
      add(kMethodModel, "scaled_error_b" + sfx, scaled_error(th.b(k), sim.truth.b(k)));
    }
    add(kMethodModel, "rmsep", rmsep(pred, target));
    const VectorXd iw = loading_inner_product(th.W, sim.truth.W);
    const VectorXd ic = loading_inner_product(th.C, sim.truth.C);
    for (Index k = 0; k < s.r; ++k) {
      const std::string sfx = s.r > 1 ? "_" + std::to_string(k + 1) : "";
      add(kMethodModel, "inner_w" + sfx, iw(k));
      add(kMethodModel, "inner_c" + sfx, ic(k));
    }
    const VectorXd true_scores = sim.truth.W.rowwise().norm();
    add(kMethodModel, "tpr", tpr_top_quarter(th.W.rowwise().norm(), true_scores));
    add(kMethodModel, "iterations", static_cast<double>(fit.iterations));

    const std::uint64_t cv_seed = derive_seed(s.seed ^ 0xC0FFEEULL, static_cast<std::uint64_t>(rep));
    const RidgeFit rx = ridge_fit_cv(train.X, train.z, ridge_lambda_grid(train.X), 10, s.family, cv_seed);
    const RidgeFit ry = ridge_fit_cv(train.Y, train.z, ridge_lambda_grid(train.Y), 10, s.family, cv_seed);
    add(kMethodRidgeX, "rmsep", rmsep((rx.predict(xte).array() + c.z_mean).matrix(), target));
    add(kMethodRidgeX, "tpr", tpr_top_quarter(rx.coef, true_scores));
    add(kMethodRidgeX, "lambda", rx.lambda);
    add(kMethodRidgeY, "rmsep", rmsep((ry.predict(yte).array() + c.z_mean).matrix(), target));
    add(kMethodRidgeY, "lambda", ry.lambda);
  } catch (const Error&) {
    out.records.clear();
    out.failed = true;
    add(kMethodModel, "failed", 1.0);
  }
  return out;
}

}  // namespace detail

inline std::vector<MetricSummary> summarize(const std::vector<StudyRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
  std::vector<std::tuple<std::string, std::string, std::string>> order;
  for (const auto& r : records) {
    if (r.metric == "failed") continue;
    auto key = std::make_tuple(r.setting_id, r.method, r.metric);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(r.value);
  }
  std::vector<MetricSummary> out;
  for (const auto& key : order) {
    const auto& v = groups[key];
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), v.size(), quantile(v, 0.25), quantile(v, 0.5),
                   quantile(v, 0.75)});
  }
  return out;
}

inline nlohmann::json setting_to_json(const SimSetting& s) {
  return {{"id", s.id},
          {"n", s.n},
          {"p", s.p},
          {"q", s.q},
          {"heterogeneity", s.heterogeneity},
          {"noise_x", s.noise_x},
          {"noise_y", s.noise_y},
          {"outcome_noise", s.outcome_noise},
          {"a_true", s.a_true},
          {"b_true", s.b_true},
          {"a0_true", s.a0_true},
          {"r", s.r},
          {"rx", s.rx},
          {"ry", s.ry},
          {"family", to_string(s.family)},
          {"replications", s.replications},
          {"test_n", s.test_n},
          {"seed", s.seed},
          {"quad_nodes", s.quad_nodes},
          {"max_iter", s.max_iter},
          {"rel_tol", s.rel_tol}};
}

// Fields absent from `j` keep their defaults; unknown keys are rejected.
inline SimSetting setting_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("setting must be a JSON object");
  SimSetting s;
  const nlohmann::json known = setting_to_json(s);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ValidationError("unknown setting field '" + it.key() + "'");
  }
  try {
    s.id = j.value("id", s.id);
    s.n = j.value("n", s.n);
    s.p = j.value("p", s.p);
    s.q = j.value("q", s.q);
    s.heterogeneity = j.value("heterogeneity", s.heterogeneity);
    s.noise_x = j.value("noise_x", s.noise_x);
    s.noise_y = j.value("noise_y", s.noise_y);
    s.outcome_noise = j.value("outcome_noise", s.outcome_noise);
    s.a_true = j.value("a_true", s.a_true);
    s.b_true = j.value("b_true", s.b_true);
    s.a0_true = j.value("a0_true", s.a0_true);
    s.r = j.value("r", s.r);
    s.rx = j.value("rx", s.rx);
    s.ry = j.value("ry", s.ry);
    if (j.contains("family")) s.family = parse_family(j.at("family").get<std::string>());
    s.replications = j.value("replications", s.replications);
    s.test_n = j.value("test_n", s.test_n);
    s.seed = j.value("seed", s.seed);
    s.quad_nodes = j.value("quad_nodes", s.quad_nodes);
    s.max_iter = j.value("max_iter", s.max_iter);
    s.rel_tol = j.value("rel_tol", s.rel_tol);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad setting value: ") + e.what());
  }
  s.validate();
  return s;
}

// Writes the CSV report (and `<out>.settings.json`) when out_path is non-empty.
inline void write_study_csv(const StudyReport& report, const std::string& out_path) {
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write study report '" + out_path + "'");
  out << "setting_id,replication,method,metric,value\n";
  out.precision(17);
  for (const auto& r : report.records) {
    out << r.setting_id << ',' << r.replication << ',' << r.method << ',' << r.metric << ',' << r.value << '\n';
  }
  if (!out) throw IoError("failed writing study report '" + out_path + "'");
}

// Runs every replication of every setting over `threads` workers. Records are
// ordered by (setting, replication) regardless of scheduling.
inline StudyReport run_study(const std::vector<SimSetting>& settings, const std::string& out_path = "",
                             int threads = 1) {
  for (const auto& s : settings) s.validate();
  std::vector<std::pair<std::size_t, int>> tasks;
  for (std::size_t si = 0; si < settings.size(); ++si) {
    for (int rep = 0; rep < settings[si].replications; ++rep) tasks.emplace_back(si, rep);
  }
  std::vector<detail::Replication> results(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      results[k] = detail::run_replication(settings[tasks[k].first], tasks[k].second);
    }
  };
  const int nworkers = std::max(1, std::min<int>(threads, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < nworkers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  StudyReport report;
  for (const auto& s : settings) report.failures[s.id] = 0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    if (results[k].failed) ++report.failures[settings[tasks[k].first].id];
    report.records.insert(report.records.end(), results[k].records.begin(), results[k].records.end());
  }
  report.summaries = summarize(report.records);
  if (!out_path.empty()) {
    write_study_csv(report, out_path);
    nlohmann::json side = nlohmann::json::array();
    for (const auto& s : settings) side.push_back(setting_to_json(s));
    std::ofstream js(out_path + ".settings.json");
    if (!js) throw IoError("cannot write settings sidecar '" + out_path + ".settings.json'");
    js << side.dump(2) << '\n';
  }
  return report;
}

}  // namespace glmpo2pls
