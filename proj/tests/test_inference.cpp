#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace glmpo2pls;

namespace {

FitResult fit_tight(const DataSet& d, const ModelDims& dims) {
  FitConfig c;
  c.rel_tol = 1e-10;
  c.max_iter = 20000;
  return d.family == Family::gaussian ? fit_gaussian(d, dims, c) : fit_binary(d, dims, c);
}

Theta flip_component(Theta th, Index k) {
  th.W.col(k) *= -1.0;
  th.C.col(k) *= -1.0;
  th.a(k) *= -1.0;
  th.b(k) *= -1.0;
  return th;
}

}  // namespace

TEST(ChiSquareSurvival, ClosedForms) {
  EXPECT_EQ(chi_square_survival(0.0, 3), 1.0);
  EXPECT_NEAR(chi_square_survival(5.9915, 2), 0.05, 1e-5);
  EXPECT_NEAR(chi_square_survival(9.4877, 4), 0.05, 1e-5);
  for (double x : {0.1, 1.0, 4.0, 17.5, 60.0}) {
    EXPECT_NEAR(chi_square_survival(x, 2), std::exp(-x / 2), 1e-12 * std::exp(-x / 2));
    EXPECT_NEAR(chi_square_survival(x, 4), std::exp(-x / 2) * (1 + x / 2), 1e-12 * std::exp(-x / 2) * (1 + x / 2));
  }
  EXPECT_THROW(chi_square_survival(-1.0, 2), ValidationError);
}

TEST(ChiSquareSurvival, StrictlyDecreasing) {
  for (int df = 1; df <= 10; ++df) {
    double prev = 1.0;
    for (double x = 0.25; x < 40.0; x += 0.25) {
      const double p = chi_square_survival(x, df);
      EXPECT_LT(p, prev);
      prev = p;
    }
  }
}

TEST(TestFull, Examples) {
  const TestResult zero = test_full(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
  EXPECT_EQ(zero.statistic, 0.0);
  EXPECT_EQ(zero.p_value, 1.0);
  const TestResult t = test_full(Eigen::Vector2d(1.0, 1.0), MatrixXd::Identity(2, 2));
  EXPECT_DOUBLE_EQ(t.statistic, 2.0);
  EXPECT_EQ(t.df, 2);
  EXPECT_NEAR(t.p_value, std::exp(-1.0), 1e-14);
  EXPECT_THROW(test_full(Eigen::Vector2d(1.0, 1.0), -MatrixXd::Identity(2, 2)), NumericalError);
  EXPECT_THROW(test_full(Eigen::Vector2d(1.0, 1.0), MatrixXd::Identity(4, 4)), ValidationError);
}

TEST(TestComponentwise, Examples) {
  const VectorXd alpha = Eigen::Vector4d(3.0, 4.0, 0.0, 0.0);  // (a1, a2, b1, b2)
  const TestResult t1 = test_componentwise(alpha, MatrixXd::Identity(4, 4), 0);
  EXPECT_DOUBLE_EQ(t1.statistic, 9.0);
  EXPECT_EQ(t1.df, 2);
  EXPECT_NEAR(t1.p_value, std::exp(-4.5), 1e-14);
  const TestResult t2 = test_componentwise(alpha, MatrixXd::Identity(4, 4), 1);
  EXPECT_DOUBLE_EQ(t2.statistic, 16.0);
  EXPECT_THROW(test_componentwise(alpha, MatrixXd::Identity(4, 4), 2), ValidationError);
  EXPECT_THROW(test_componentwise(alpha, MatrixXd::Identity(4, 4), -1), ValidationError);
  const TestResult z = test_componentwise(Eigen::Vector4d(0.0, 4.0, 0.0, 1.0), MatrixXd::Identity(4, 4), 0);
  EXPECT_EQ(z.statistic, 0.0);
  EXPECT_EQ(z.p_value, 1.0);
}

TEST(TestComponentwise, DiagonalInformationDecomposes) {
  const VectorXd alpha = Eigen::Vector4d(0.5, -1.2, 0.3, 2.0);
  const MatrixXd info = Eigen::Vector4d(2.0, 1.0, 3.0, 0.5).asDiagonal();
  const double full = test_full(alpha, info).statistic;
  const double c0 = test_componentwise(alpha, info, 0).statistic, c1 = test_componentwise(alpha, info, 1).statistic;
  EXPECT_NEAR(c0 + c1, full, 1e-12);
  EXPECT_LE(c0, full);
  EXPECT_LE(c1, full);
}

TEST(LouisGaussian, DeterministicMomentsGiveDesignCrossProduct) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Theta th = oracle::random_theta(rng, 5, 4, 2, 0, 0);
  th.var_g = 1.0;
  const Index n = 60;
  LatentMoments m;
  m.dims = th.dims();
  m.dims.n = n;
  m.mean = MatrixXd::NullaryExpr(n, 4, [&] { return nd(rng); });
  m.cov = MatrixXd::Zero(4, 4);
  const MatrixXd design = m.mean * detail::th_transform(th.B);
  const VectorXd z = design * th.alpha() + VectorXd::NullaryExpr(n, [&] { return nd(rng); });
  const MatrixXd info = detail::louis_alpha_gaussian(th, m, z);
  EXPECT_LT((info - design.transpose() * design).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LouisGaussian, EqualsAlphaBlockOfObservedHessian) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 3; ++rep) {
    const Theta truth = oracle::random_theta(rng, 7, 5, 2, 1, 1);
    const DataSet d = oracle::draw(truth, 300, 10 + rep);
    const FitResult f = fit_tight(d, truth.dims());
    const MatrixXd info = louis_information_alpha(f, d);
    const auto ll = [&](const VectorXd& alpha) {
      Theta t = f.theta;
      t.a = alpha.head(2);
      t.b = alpha.tail(2);
      return log_likelihood_gaussian(t, d);
    };
    const MatrixXd hess = oracle::central_hessian(ll, f.theta.alpha(), 1e-3);
    EXPECT_LT((info + hess).cwiseAbs().maxCoeff(), 1e-5 * info.cwiseAbs().maxCoeff());
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<MatrixXd>(info).eigenvalues()(0), 0.0);
  }
}

TEST(LouisGaussian, ExactAwayFromStationarity) {
  std::mt19937_64 rng(3);
  const Theta th = oracle::random_theta(rng, 6, 5, 1, 1, 1);
  const DataSet d = oracle::draw(th, 200, 4);
  const MatrixXd info = detail::louis_alpha_gaussian(th, conditional_latent_moments(th, d), d.z);
  const auto ll = [&](const VectorXd& alpha) {
    Theta t = th;
    t.a(0) = alpha(0);
    t.b(0) = alpha(1);
    return log_likelihood_gaussian(t, d);
  };
  const MatrixXd hess = oracle::central_hessian(ll, th.alpha(), 1e-3);
  EXPECT_LT((info + hess).cwiseAbs().maxCoeff(), 1e-5 * info.cwiseAbs().maxCoeff());
}

TEST(LouisBinary, EqualsProfiledObservedHessian) {
  std::mt19937_64 rng(5);
  Theta truth = canonicalize(oracle::random_theta(rng, 5, 4, 1, 1, 1, Family::bernoulli));
  truth.a(0) = 1.2;
  truth.b(0) = -0.8;
  DataSet d = oracle::draw(truth, 400, 6);
  d.family = Family::bernoulli;
  const FitResult f = fit_tight(d, truth.dims());
  const MatrixXd info = louis_information_alpha(f, d);
  const auto ll = [&](const VectorXd& beta) {
    Theta t = f.theta;
    unpack_beta(beta, t);
    return log_likelihood_binary(t, d, 16);
  };
  const MatrixXd h = -oracle::central_hessian(ll, pack_beta(f.theta), 1e-3);
  const MatrixXd profiled = h.bottomRightCorner(2, 2) - h.bottomLeftCorner(2, 1) * h.topRightCorner(1, 2) / h(0, 0);
  EXPECT_LT((info - profiled).cwiseAbs().maxCoeff(), 1e-3 * info.cwiseAbs().maxCoeff());
}

TEST(LouisGaussian, ScalesLinearlyWithSampleSize) {
  std::mt19937_64 rng(7);
  Theta truth = canonicalize(oracle::random_theta(rng, 20, 20, 1, 1, 1));
  truth.var_e = truth.var_f = 0.1;
  const DataSet small = oracle::draw(truth, 1000, 8);
  // Twice as many rows resampled with replacement from the same data.
  std::uniform_int_distribution<Index> pick(0, small.n() - 1);
  DataSet large;
  large.X.resize(2000, small.X.cols());
  large.Y.resize(2000, small.Y.cols());
  large.z.resize(2000);
  for (Index i = 0; i < 2000; ++i) {
    const Index j = pick(rng);
    large.X.row(i) = small.X.row(j);
    large.Y.row(i) = small.Y.row(j);
    large.z(i) = small.z(j);
  }
  center_in_place(large);
  const MatrixXd i1 = louis_information_alpha(fit_tight(small, truth.dims()), small);
  const MatrixXd i2 = louis_information_alpha(fit_tight(large, truth.dims()), large);
  for (Index j = 0; j < 2; ++j) {
    for (Index k = 0; k < 2; ++k) {
      const double ratio = i2(j, k) / i1(j, k);
      EXPECT_GE(ratio, 1.7) << j << "," << k;
      EXPECT_LE(ratio, 2.3) << j << "," << k;
    }
  }
}

TEST(LouisGaussian, InverseMatchesBootstrapVariance) {
  // Low noise and many features: latent scores are well determined, so the
  // cross-information with the other parameters that the alpha block ignores
  // is small.
  std::mt19937_64 rng(11);
  Theta truth = canonicalize(oracle::random_theta(rng, 20, 20, 1, 1, 1));
  truth.var_e = truth.var_f = 0.1;
  const Index n = 1000;
  FitConfig c;
  c.rel_tol = 1e-8;
  const DataSet base = oracle::draw(truth, n, 12);
  const FitResult f0 = fit_gaussian(base, truth.dims(), c);
  const MatrixXd pi = louis_information_alpha(f0, base).inverse();
  std::vector<VectorXd> est;
  for (int rep = 0; rep < 500; ++rep) {
    const DataSet d = oracle::draw(f0.theta, n, 1000 + static_cast<std::uint64_t>(rep));
    const FitResult f = fit_gaussian(d, truth.dims(), c);
    // Align the joint sign with the generating fit before collecting (a, b).
    Theta t = f.theta;
    if (t.W.col(0).dot(f0.theta.W.col(0)) < 0) t = flip_component(t, 0);
    est.push_back(t.alpha());
  }
  VectorXd mean = VectorXd::Zero(2);
  for (const auto& e : est) mean += e;
  mean /= static_cast<double>(est.size());
  VectorXd var = VectorXd::Zero(2);
  for (const auto& e : est) var += (e - mean).cwiseAbs2();
  var /= static_cast<double>(est.size() - 1);
  for (Index j = 0; j < 2; ++j) {
    const double ratio = pi(j, j) / var(j);
    EXPECT_GE(ratio, 0.5) << "coefficient " << j;
    EXPECT_LE(ratio, 2.0) << "coefficient " << j;
  }
}

TEST(AssociationTests, InvariantToComponentSignFlips) {
  std::mt19937_64 rng(13);
  const Theta truth = oracle::random_theta(rng, 8, 6, 2, 1, 1);
  const DataSet d = oracle::draw(truth, 300, 14);
  const FitResult f = fit_tight(d, truth.dims());
  const MatrixXd info = louis_information_alpha(f, d);
  const TestResult full = test_full(f, info);
  for (Index k = 0; k < 2; ++k) {
    FitResult g = f;
    g.theta = flip_component(f.theta, k);
    g.final_moments = LatentMoments{};
    const MatrixXd gi = louis_information_alpha(g, d);
    EXPECT_NEAR(test_full(g, gi).statistic, full.statistic, 1e-8 * full.statistic);
    EXPECT_NEAR(test_full(g, gi).p_value, full.p_value, 1e-10);
    for (Index j = 0; j < 2; ++j) {
      EXPECT_NEAR(test_componentwise(g, gi, j).statistic, test_componentwise(f, info, j).statistic,
                  1e-8 * std::max(1.0, test_componentwise(f, info, j).statistic));
    }
  }
}

TEST(AssociationTests, BinaryResultsCarryCaveat) {
  std::mt19937_64 rng(15);
  const Theta truth = canonicalize(oracle::random_theta(rng, 5, 4, 1, 1, 1, Family::bernoulli));
  DataSet d = oracle::draw(truth, 300, 16);
  d.family = Family::bernoulli;
  const FitResult f = fit_tight(d, truth.dims());
  const MatrixXd info = louis_information_alpha(f, d);
  EXPECT_TRUE(test_full(f, info).asymptotics_unverified);
  EXPECT_TRUE(test_componentwise(f, info, 0).asymptotics_unverified);
  EXPECT_EQ(test_full(f, info).df, 2);

  const DataSet g = oracle::draw(oracle::random_theta(rng, 5, 4, 1, 1, 1), 300, 17);
  const FitResult fg = fit_tight(g, {5, 4, 1, 1, 1, 300});
  EXPECT_FALSE(test_full(fg, louis_information_alpha(fg, g)).asymptotics_unverified);
}

TEST(AssociationTests, NullPValuesAreRoughlyUniform) {
  // Small version of the calibration study; the acceptance binary runs the full one.
  std::mt19937_64 rng(17);
  Theta truth = canonicalize(oracle::random_theta(rng, 10, 8, 1, 1, 1));
  truth.a.setZero();
  truth.b.setZero();
  std::vector<double> p;
  FitConfig c;
  c.rel_tol = 1e-8;
  for (int seed = 0; seed < 60; ++seed) {
    const DataSet d = oracle::draw(truth, 500, 500 + static_cast<std::uint64_t>(seed));
    const FitResult f = fit_gaussian(d, truth.dims(), c);
    p.push_back(test_full(f, louis_information_alpha(f, d)).p_value);
  }
  EXPECT_GT(oracle::ks_uniform_pvalue(p), 0.01);
}

TEST(LouisInformation, RejectsMismatchedData) {
  std::mt19937_64 rng(19);
  const Theta truth = oracle::random_theta(rng, 6, 5, 1, 1, 1);
  const DataSet d = oracle::draw(truth, 100, 20);
  const FitResult f = fit_tight(d, truth.dims());
  const DataSet other = oracle::draw(oracle::random_theta(rng, 7, 5, 1, 1, 1), 100, 21);
  EXPECT_THROW(louis_information_alpha(f, other), ValidationError);
}
