// Model densities, embeddings, Lasso, OAS, graphical lasso, covariance
// estimators, EM steps and the final estimation step.

#include "srjm/covariance.hpp"
#include "srjm/em.hpp"
#include "srjm/glasso.hpp"
#include "srjm/simgen.hpp"
#include "srjm/sparse_final.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <numbers>
#include <random>

using namespace srjm;

namespace {

Matrix randn(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

Matrix random_spd(Index p, std::mt19937_64& rng, double ridge = 0.5) {
  const Matrix a = randn(p, p, rng);
  Matrix s = a * a.transpose() / static_cast<double>(p);
  s.diagonal().array() += ridge;
  return s;
}

Vector uniform_weights(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Vector w(n);
  for (Index i = 0; i < n; ++i) w(i) = u(rng);
  return w;
}

// explicit density through the covariance, independent of the factor code
double gaussian_logpdf_oracle(const Vector& v, const Vector& m, const Matrix& omega) {
  const Matrix cov = omega.fullPivLu().inverse();
  const double d = static_cast<double>(v.size());
  const Vector r = v - m;
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + std::log(cov.determinant()) + r.dot(cov.fullPivLu().solve(r)));
}

MixtureParams two_groups(Index q, Index p, std::mt19937_64& rng) {
  std::vector<GroupParams> g(2);
  for (int k = 0; k < 2; ++k) {
    g[k].tau = k == 0 ? 0.3 : 0.7;
    g[k].mu = randn(q, 1, rng);
    g[k].omega = random_spd(q, rng);
    g[k].alpha = 0.5 * k;
    g[k].beta = randn(p, 1, rng);
    g[k].sigma = 0.7 + k;
  }
  return MixtureParams(g, q, p);
}

Dataset small_data(Index n, Index p, std::mt19937_64& rng) {
  const Matrix x = randn(n, p, rng);
  Vector y = x.col(0) + 0.3 * randn(n, 1, rng);
  return Dataset(x, y);
}

}  // namespace

// ---- core model

TEST(CoreModel, GaussianLogpdfMatchesCovarianceFormula) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const Index d = 1 + t % 5;
    const Matrix om = random_spd(d, rng);
    const Vector v = randn(d, 1, rng), m = randn(d, 1, rng);
    EXPECT_NEAR(gaussian_logpdf(v, m, om), gaussian_logpdf_oracle(v, m, om), 1e-10);
  }
}

TEST(CoreModel, NormalLogpdfMatchesDensity) {
  const double y = 1.3, m = 0.2, s = 0.8;
  const double dens = std::exp(-0.5 * std::pow((y - m) / s, 2)) / (s * std::sqrt(2.0 * std::numbers::pi));
  EXPECT_NEAR(normal_logpdf(y, m, s), std::log(dens), 1e-14);
}

TEST(CoreModel, ComponentScoresDivideFeaturePartByT) {
  std::mt19937_64 rng(2);
  const Dataset d = small_data(15, 3, rng);
  const MixtureParams par = two_groups(3, 3, rng);
  const Matrix s1 = component_log_scores(d, d.x(), par, 1.0);
  const Matrix s4 = component_log_scores(d, d.x(), par, 4.0);
  for (Index i = 0; i < d.n(); ++i) {
    for (Index k = 0; k < 2; ++k) {
      const auto& g = par.group(k);
      const double f = gaussian_logpdf_oracle(d.x().row(i).transpose(), g.mu, g.omega);
      const double r = normal_logpdf(d.y()(i), g.alpha + d.x().row(i).dot(g.beta), g.sigma);
      EXPECT_NEAR(s1(i, k), r + f + std::log(g.tau), 1e-9);
      EXPECT_NEAR(s4(i, k), r + f / 4.0 + std::log(g.tau), 1e-9);
    }
  }
}

TEST(CoreModel, LogSumExpIsStable) {
  Eigen::RowVectorXd r(2);
  r << 1000.0, 1000.0;
  EXPECT_NEAR(log_sum_exp(r), 1000.0 + std::log(2.0), 1e-12);
  r << -1e4, -1e4 - std::log(3.0);
  EXPECT_NEAR(log_sum_exp(r), -1e4 + std::log(4.0 / 3.0), 1e-9);
  r.setConstant(-std::numeric_limits<double>::infinity());
  EXPECT_EQ(log_sum_exp(r), -std::numeric_limits<double>::infinity());
}

TEST(CoreModel, ObservedLikelihoodIsMixtureDensity) {
  std::mt19937_64 rng(3);
  const Dataset d = small_data(12, 2, rng);
  const MixtureParams par = two_groups(2, 2, rng);
  double nll = 0.0;
  for (Index i = 0; i < d.n(); ++i) {
    double dens = 0.0;
    for (Index k = 0; k < 2; ++k) {
      const auto& g = par.group(k);
      dens += g.tau * std::exp(gaussian_logpdf_oracle(d.x().row(i).transpose(), g.mu, g.omega) +
                               normal_logpdf(d.y()(i), g.alpha + d.x().row(i).dot(g.beta), g.sigma));
    }
    nll -= std::log(dens);
  }
  EXPECT_NEAR(observed_neg_log_likelihood(d, d.x(), par, 1.0), nll, 1e-9);
}

TEST(CoreModel, PenaltyValueHandComputed) {
  GroupParams g;
  g.tau = 1.0;
  g.mu = Vector::Zero(2);
  g.omega = 2.0 * Matrix::Identity(2, 2);
  g.beta = Vector(3);
  g.beta << 1.0, -2.0, 0.0;
  g.sigma = 2.0;
  const MixtureParams par({g}, 2, 3);
  PenaltyConfig pen;
  pen.lambda = {4.0};
  pen.gamma = 1.0;
  pen.rho = 0.5;
  pen.balancing_T = 2.0;
  pen.omega_mode = OmegaMode::nuclear_norm(3.0);
  // 4/4 * 3 + (3 + 1) ln 4 - 0.5 ln 1 + 0.5 * 3 * 4 / 2
  EXPECT_NEAR(penalty_value(par, pen), 3.0 + 4.0 * std::log(4.0) + 3.0, 1e-12);
}

TEST(CoreModel, MixtureParamsValidates) {
  std::mt19937_64 rng(4);
  GroupParams g;
  g.tau = 1.0;
  g.mu = Vector::Zero(2);
  g.omega = Matrix::Identity(2, 2);
  g.beta = Vector::Zero(3);
  EXPECT_NO_THROW(MixtureParams({g}, 2, 3));
  auto bad = g;
  bad.omega(0, 0) = -1.0;
  EXPECT_THROW(MixtureParams({bad}, 2, 3), Error);
  bad = g;
  bad.tau = 0.9;
  EXPECT_THROW(MixtureParams({bad}, 2, 3), Error);
  bad = g;
  bad.sigma = 0.0;
  EXPECT_THROW(MixtureParams({bad}, 2, 3), Error);
  bad = g;
  bad.omega(0, 1) = 0.3;
  EXPECT_THROW(MixtureParams({bad}, 2, 3), Error);
  EXPECT_THROW(MixtureParams({g}, 3, 3), Error);
}

TEST(CoreModel, ResponsibilitiesValidateRows) {
  Matrix p(2, 2);
  p << 0.5, 0.5, 0.2, 0.7;
  EXPECT_THROW(Responsibilities{p}, Error);
  p(1, 1) = 0.8;
  const Responsibilities r(p);
  EXPECT_EQ(r.hard_labels(), (std::vector<int>{0, 1}));
  EXPECT_NEAR(r.group_size(1), 1.3, 1e-15);
  EXPECT_THROW(Responsibilities::one_hot({0, 2}, 2), Error);
}

TEST(CoreModel, DatasetRejectsMismatchAndNonFinite) {
  EXPECT_THROW(Dataset(Matrix::Zero(3, 2), Vector::Zero(2)), Error);
  Matrix x = Matrix::Zero(2, 2);
  x(0, 0) = std::nan("");
  EXPECT_THROW(Dataset(x, Vector::Zero(2)), Error);
}

// ---- embedding

TEST(Embedding, PcaMatchesCovarianceEigenvectors) {
  std::mt19937_64 rng(5);
  Matrix x = randn(60, 6, rng);
  x.col(1) *= 3.0;
  x.col(4) *= 2.0;
  const auto emb = fit_pca(x, 3);
  const Matrix c = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Matrix> es(c.transpose() * c);
  for (Index j = 0; j < 3; ++j) {
    const Vector v = es.eigenvectors().col(5 - j);
    EXPECT_NEAR(std::abs(v.dot(emb.w.col(j))), 1.0, 1e-10);
    Index imax = 0;
    emb.w.col(j).cwiseAbs().maxCoeff(&imax);
    EXPECT_GT(emb.w(imax, j), 0.0);
  }
  EXPECT_NEAR((emb.w.transpose() * emb.w - Matrix::Identity(3, 3)).norm(), 0.0, 1e-12);
  const Matrix z = embed(x, emb);
  EXPECT_NEAR(z.colwise().mean().norm(), 0.0, 1e-12);
}

TEST(Embedding, IdentityAndPrecomputed) {
  std::mt19937_64 rng(6);
  const Matrix x = randn(10, 4, rng);
  EXPECT_EQ(embedded_features(x, EmbeddingSpec::identity()), x);
  EXPECT_EQ(embed(x, LinearEmbedding::identity(4)), x);
  const Matrix e = randn(10, 2, rng);
  EXPECT_EQ(embedded_features(x, EmbeddingSpec::from_values(e)), e);
  EXPECT_THROW(embedded_features(x, EmbeddingSpec::from_values(randn(9, 2, rng))), Error);
}

TEST(Embedding, PcaRejectsBadInput) {
  std::mt19937_64 rng(7);
  EXPECT_THROW(fit_pca(randn(5, 3, rng), 4), Error);
  EXPECT_THROW(fit_pca(Matrix::Ones(5, 3), 1), Error);
  EXPECT_THROW(embed(randn(5, 3, rng), LinearEmbedding::identity(4)), Error);
}

// ---- lasso

TEST(Lasso, KktHoldsOnRandomInstances) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 0.9);
  for (int t = 0; t < 40; ++t) {
    const Index n = 20 + t, p = 3 + t % 17;
    const Matrix x = randn(n, p, rng);
    const Vector y = randn(n, 1, rng) + x.col(0);
    const Vector w = uniform_weights(n, rng);
    const double lam = u(rng) * weighted_lasso_lambda_max(x, y, w);
    const auto r = weighted_lasso(x, y, w, lam);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(lasso_kkt_residual(x, y, w, lam, r.alpha, r.beta), 1e-6);
  }
}

TEST(Lasso, WideProblemsSatisfyKkt) {
  // p > n takes the residual-update path
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.05, 0.9);
  for (int t = 0; t < 20; ++t) {
    const Index n = 15 + t, p = 3 * n;
    const Matrix x = randn(n, p, rng);
    const Vector y = randn(n, 1, rng) + 2.0 * x.col(1);
    const Vector w = uniform_weights(n, rng);
    const double lmax = weighted_lasso_lambda_max(x, y, w);
    EXPECT_EQ(weighted_lasso(x, y, w, lmax).beta.cwiseAbs().maxCoeff(), 0.0);
    const double lam = u(rng) * lmax;
    const auto cold = weighted_lasso(x, y, w, lam);
    EXPECT_LE(lasso_kkt_residual(x, y, w, lam, cold.alpha, cold.beta), 1e-6);
    const Vector start = Vector::Constant(p, 0.1);
    const auto warm = weighted_lasso(x, y, w, lam, &start);
    EXPECT_LE(lasso_kkt_residual(x, y, w, lam, warm.alpha, warm.beta), 1e-6);
  }
}

TEST(Lasso, ZeroPenaltyMatchesNormalEquations) {
  std::mt19937_64 rng(9);
  const Index n = 40, p = 6;
  const Matrix x = randn(n, p, rng);
  const Vector y = randn(n, 1, rng);
  const Vector w = uniform_weights(n, rng);
  Matrix a(n, p + 1);
  a.col(0).setOnes();
  a.rightCols(p) = x;
  const Vector coef = (a.transpose() * w.asDiagonal() * a).ldlt().solve(a.transpose() * w.asDiagonal() * y);
  const auto r = weighted_lasso(x, y, w, 0.0);
  EXPECT_NEAR(r.alpha, coef(0), 1e-8);
  EXPECT_LE((r.beta - coef.tail(p)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Lasso, LambdaMaxIsTheZeroThreshold) {
  std::mt19937_64 rng(10);
  const Matrix x = randn(30, 5, rng);
  const Vector y = x.col(2) + randn(30, 1, rng);
  const Vector w = uniform_weights(30, rng);
  const double lmax = weighted_lasso_lambda_max(x, y, w);
  const auto at = weighted_lasso(x, y, w, lmax);
  EXPECT_EQ(at.beta.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(at.alpha, w.dot(y) / w.sum(), 1e-12);
  EXPECT_GT(weighted_lasso(x, y, w, 0.99 * lmax).beta.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lasso, SingleFeatureSoftThreshold) {
  std::mt19937_64 rng(11);
  const Matrix x = randn(25, 1, rng);
  const Vector y = 2.0 * x.col(0) + randn(25, 1, rng);
  const Vector w = uniform_weights(25, rng);
  const double xm = w.dot(x.col(0)) / w.sum(), ym = w.dot(y) / w.sum();
  const Vector xc = x.col(0).array() - xm, yc = y.array() - ym;
  const double sxy = w.dot(xc.cwiseProduct(yc)), sxx = w.dot(xc.cwiseProduct(xc));
  for (double lam : {0.0, 1.0, 5.0, 1e3}) {
    const double expect = std::copysign(std::max(0.0, std::abs(sxy) - lam), sxy) / sxx;
    EXPECT_NEAR(weighted_lasso(x, y, w, lam).beta(0), expect, 1e-10);
  }
}

TEST(Lasso, WeightScalingMovesPenaltyWithIt) {
  std::mt19937_64 rng(12);
  const Matrix x = randn(30, 4, rng);
  const Vector y = randn(30, 1, rng);
  const Vector w = uniform_weights(30, rng);
  const auto a = weighted_lasso(x, y, w, 1.5);
  const auto b = weighted_lasso(x, y, 3.0 * w, 4.5);
  EXPECT_LE((a.beta - b.beta).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Lasso, ZeroWeightRowsAreIgnored) {
  std::mt19937_64 rng(13);
  const Matrix x = randn(30, 4, rng);
  const Vector y = randn(30, 1, rng);
  Vector w = Vector::Ones(30);
  w.tail(10).setZero();
  std::vector<Index> rows(20);
  for (Index i = 0; i < 20; ++i) rows[static_cast<std::size_t>(i)] = i;
  const Dataset sub = Dataset(x, y).subset(rows);
  const auto a = weighted_lasso(x, y, w, 2.0);
  const auto b = weighted_lasso(sub.x(), sub.y(), Vector::Ones(20), 2.0);
  EXPECT_LE((a.beta - b.beta).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Lasso, RejectsBadInput) {
  const Matrix x = Matrix::Ones(3, 2);
  EXPECT_THROW(weighted_lasso(x, Vector::Zero(3), Vector::Ones(3), -1.0), Error);
  EXPECT_THROW(weighted_lasso(x, Vector::Zero(3), Vector::Zero(3), 1.0), Error);
  EXPECT_THROW(weighted_lasso(x, Vector::Zero(2), Vector::Ones(3), 1.0), Error);
}

TEST(Lasso, PathIsDecreasingGridWithGrowingSupport) {
  std::mt19937_64 rng(14);
  const Matrix x = randn(50, 8, rng);
  const Vector y = x.col(1) - x.col(5) + 0.1 * randn(50, 1, rng);
  const Vector w = Vector::Ones(50);
  const auto grid = lambda_grid(weighted_lasso_lambda_max(x, y, w), 10, 1e-2);
  ASSERT_EQ(grid.size(), 10u);
  EXPECT_NEAR(grid.back(), 1e-2 * grid.front(), 1e-12 * grid.front());
  const auto path = weighted_lasso_path(x, y, w, grid);
  EXPECT_EQ(path.front().beta.cwiseAbs().maxCoeff(), 0.0);
  for (std::size_t i = 0; i < path.size(); ++i)
    EXPECT_LE(lasso_kkt_residual(x, y, w, grid[i], path[i].alpha, path[i].beta), 1e-6);
}

TEST(Lasso, CrossValidationPicksGridArgmin) {
  std::mt19937_64 rng(15);
  const Matrix x = randn(80, 10, rng);
  const Vector y = 2.0 * x.col(3) + 0.2 * randn(80, 1, rng);
  const Vector w = uniform_weights(80, rng);
  const auto cv = weighted_lasso_cv(x, y, w, 5, 7);
  ASSERT_GE(cv.lambdas.size(), 2u);
  ASSERT_LE(cv.lambdas.size(), 30u);
  ASSERT_EQ(cv.cv_error.size(), cv.lambdas.size());
  const auto best = std::min_element(cv.cv_error.begin(), cv.cv_error.end()) - cv.cv_error.begin();
  EXPECT_EQ(cv.best_lambda, cv.lambdas[static_cast<std::size_t>(best)]);
  // strong signal: the CV choice is far below lambda_max and keeps feature 3
  EXPECT_LT(cv.best_lambda, 0.1 * cv.lambdas.front());
  EXPECT_NE(weighted_lasso(x, y, w, cv.best_lambda).beta(3), 0.0);
  EXPECT_EQ(weighted_lasso_cv(x, y, w, 5, 7).best_lambda, cv.best_lambda);
}

// ---- OAS

TEST(Oas, ScaledIdentityIsAFixedPoint) {
  const Matrix s = 2.5 * Matrix::Identity(4, 4);
  const auto r = oas_shrinkage(s, 10.0);
  EXPECT_EQ(r.delta_hat, 1.0);
  EXPECT_EQ(r.sigma_shrunk, s);
}

TEST(Oas, TwoByTwoHandComputed) {
  Matrix s(2, 2);
  s << 2.0, 0.5, 0.5, 1.0;
  // tr = 3, tr(s^2) = 5.5; q = 2 so (1 - 2/q) = 0: delta = 9 / (n (5.5 - 4.5)) = 9 / n
  const auto r = oas_shrinkage(s, 20.0);
  EXPECT_NEAR(r.delta_hat, 0.45, 1e-12);
  Matrix expect = 0.55 * s;
  expect.diagonal().array() += 0.45 * 1.5;
  EXPECT_LE((r.sigma_shrunk - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(oas_shrinkage(s, 5.0).delta_hat, 1.0);
}

TEST(Oas, ShrinkagePreservesTraceAndIsPd) {
  std::mt19937_64 rng(16);
  const Matrix x = randn(4, 10, rng);  // rank 4 in dimension 10
  const Matrix s = x.transpose() * x / 4.0;
  const auto r = oas_shrinkage(s, 4.0);
  EXPECT_NEAR(r.sigma_shrunk.trace(), s.trace(), 1e-10);
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(r.sigma_shrunk).eigenvalues().minCoeff(), 0.0);
  EXPECT_GE(r.delta_hat, 0.0);
  EXPECT_LE(r.delta_hat, 1.0);
}

// ---- graphical lasso

TEST(Glasso, ZeroPenaltyInvertsDense) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 5; ++t) {
    const Matrix s = random_spd(6, rng);
    const auto r = graphical_lasso_full(s, 0.0);
    EXPECT_LE((r.omega - s.inverse()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE(r.gap, 1e-4);
  }
}

TEST(Glasso, SubgradientConditionsHold) {
  std::mt19937_64 rng(18);
  const Matrix s = random_spd(8, rng);
  const double delta = 0.1;
  const Matrix om = graphical_lasso(s, delta);
  const Matrix w = om.inverse();
  for (Index j = 0; j < 8; ++j) {
    EXPECT_NEAR(w(j, j), s(j, j), 1e-4);
    for (Index l = 0; l < 8; ++l) {
      if (l == j) continue;
      if (std::abs(om(j, l)) > 1e-8) {
        EXPECT_NEAR(w(j, l) - s(j, l), delta * (om(j, l) > 0 ? 1.0 : -1.0), 1e-3);
      } else {
        EXPECT_LE(std::abs(w(j, l) - s(j, l)), delta + 1e-3);
      }
    }
  }
}

TEST(Glasso, LargePenaltyGivesDiagonal) {
  std::mt19937_64 rng(19);
  const Matrix s = random_spd(5, rng);
  Matrix off = s;
  off.diagonal().setZero();
  const Matrix om = graphical_lasso(s, off.cwiseAbs().maxCoeff() * 1.01);
  for (Index j = 0; j < 5; ++j) {
    EXPECT_NEAR(om(j, j), 1.0 / s(j, j), 1e-10);
    for (Index l = 0; l < 5; ++l)
      if (l != j) EXPECT_EQ(om(j, l), 0.0);
  }
}

TEST(Glasso, DiagonalPenaltyScalarCase) {
  Matrix s(1, 1);
  s << 2.0;
  GlassoOptions o;
  o.penalize_diagonal = true;
  EXPECT_NEAR(graphical_lasso(s, 0.5, o)(0, 0), 1.0 / 2.5, 1e-12);
  EXPECT_NEAR(graphical_lasso(s, 0.5)(0, 0), 0.5, 1e-12);
}

TEST(Glasso, SparsityMonotoneInPenalty) {
  std::mt19937_64 rng(20);
  const Matrix s = random_spd(10, rng);
  int prev = -1;
  for (double d : {0.01, 0.03, 0.1, 0.3, 1.0}) {
    const Matrix om = graphical_lasso(s, d);
    int zeros = 0;
    for (Index j = 0; j < 10; ++j)
      for (Index l = j + 1; l < 10; ++l) zeros += std::abs(om(j, l)) <= 1e-8;
    EXPECT_GE(zeros, prev);
    prev = zeros;
  }
}

TEST(Glasso, RejectsBadInput) {
  Matrix s = Matrix::Identity(3, 3);
  EXPECT_THROW(graphical_lasso(s, -1.0), Error);
  s(0, 1) = 0.5;
  EXPECT_THROW(graphical_lasso(s, 0.1), Error);
  EXPECT_THROW(graphical_lasso(Matrix::Zero(2, 2), 0.1), Error);
}

// ---- covariance estimators

TEST(Covariance, NaiveHardMatchesMemberCovariance) {
  std::mt19937_64 rng(21);
  const Matrix x = randn(20, 3, rng);
  std::vector<int> labels(20);
  for (int i = 0; i < 20; ++i) labels[static_cast<std::size_t>(i)] = i % 3 == 0;
  const auto gw = GroupWeights::hard(labels, 2);
  const Matrix xs = detail::rows_of(x, gw.members(1));
  const Matrix c = xs.rowwise() - xs.colwise().mean();
  EXPECT_LE((covariance_naive(x, gw, 1) - c.transpose() * c / static_cast<double>(xs.rows())).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Covariance, KendallMatchesPairCounting) {
  std::mt19937_64 rng(22);
  Matrix x = randn(17, 3, rng);
  x(3, 1) = x(5, 1);  // a tie
  const Matrix t = detail::kendall_tau_a(x);
  for (Index a = 0; a < 3; ++a)
    for (Index b = 0; b < 3; ++b) {
      double s = 0.0;
      for (Index i = 0; i < 17; ++i)
        for (Index j = i + 1; j < 17; ++j) {
          const double da = x(j, a) - x(i, a), db = x(j, b) - x(i, b);
          const int sa = (da > 0) - (da < 0), sb = (db > 0) - (db < 0);
          s += sa * sb;
        }
      EXPECT_NEAR(t(a, b), 2.0 * s / (17.0 * 16.0), 1e-12);
    }
}

TEST(Covariance, BivariateNormalOrthantClosedForm) {
  for (double r : {-0.9, -0.3, 0.0, 0.4, 0.95})
    EXPECT_NEAR(bivariate_normal_cdf(0.0, 0.0, r), 0.25 + std::asin(r) / (2.0 * std::numbers::pi), 1e-10);
  EXPECT_NEAR(bivariate_normal_cdf(0.7, -0.2, 0.0), detail::std_normal_cdf(0.7) * detail::std_normal_cdf(-0.2),
              1e-15);
  EXPECT_NEAR(detail::std_normal_quantile(detail::std_normal_cdf(1.234)), 1.234, 1e-10);
}

TEST(Covariance, NonparanormalCorrelationIgnoresMonotoneTransforms) {
  std::mt19937_64 rng(23);
  Matrix x = randn(80, 3, rng);
  x.col(1) += 0.8 * x.col(0);
  const auto gw = GroupWeights::hard(std::vector<int>(80, 0), 1);
  Matrix xt = x;
  xt.col(1) = x.col(1).array().exp();
  xt.col(2) = x.col(2).array().cube();
  auto corr = [](const Matrix& c) {
    const Vector d = c.diagonal().cwiseSqrt().cwiseInverse();
    return Matrix(d.asDiagonal() * c * d.asDiagonal());
  };
  EXPECT_LE((corr(covariance_nonparanormal(x, gw, 0)) - corr(covariance_nonparanormal(xt, gw, 0))).cwiseAbs().maxCoeff(),
            1e-12);
  EXPECT_THROW(covariance_nonparanormal(x, GroupWeights::soft(Responsibilities(Matrix::Ones(80, 1))), 0), Error);
}

TEST(Covariance, MixedRecoversLatentCorrelation) {
  std::mt19937_64 rng(24);
  const Index n = 3000;
  Matrix z = randn(n, 3, rng);
  z.col(1) = 0.6 * z.col(0) + 0.8 * z.col(1);
  z.col(2) = 0.5 * z.col(0) + std::sqrt(0.75) * z.col(2);
  Matrix x = z;
  for (Index i = 0; i < n; ++i) {
    x(i, 1) = z(i, 1) > 0.3 ? 1.0 : 0.0;
    x(i, 2) = z(i, 2) > -0.2 ? 1.0 : 0.0;
  }
  const auto gw = GroupWeights::hard(std::vector<int>(static_cast<std::size_t>(n), 0), 1);
  const Matrix c = covariance_mixed(x, gw, 0, {false, true, true});
  const double sd0 = std::sqrt(c(0, 0));
  EXPECT_NEAR(c(0, 1) / sd0, 0.6, 0.06);
  EXPECT_NEAR(c(0, 2) / sd0, 0.5, 0.06);
  EXPECT_NEAR(c(1, 2), 0.3, 0.08);
  EXPECT_NEAR(c(1, 1), 1.0, 1e-6);  // binary margins kept at unit scale
}

// ---- EM steps

namespace {

Responsibilities random_resp(Index n, Index k, std::mt19937_64& rng) {
  return detail::dirichlet_responsibilities(n, k, rng);
}

}  // namespace

TEST(EmSteps, ClosedFormUpdates) {
  std::mt19937_64 rng(25);
  const Dataset d = small_data(30, 4, rng);
  const auto resp = random_resp(30, 2, rng);
  const Vector w = resp.matrix().col(1);
  const double nk = w.sum();

  const Vector tau = m_step_tau(resp, 2.0);
  EXPECT_NEAR(tau(1), (nk + 2.0) / (30.0 + 4.0), 1e-14);
  EXPECT_NEAR(tau.sum(), 1.0, 1e-14);

  const Vector mu = m_step_mu(d.x(), resp, 1);
  Vector expect_mu = Vector::Zero(4);
  for (Index i = 0; i < 30; ++i) expect_mu += w(i) * d.x().row(i).transpose();
  EXPECT_LE((mu - expect_mu / nk).cwiseAbs().maxCoeff(), 1e-12);

  const auto reg = m_step_regression(d, resp, 1, 1.0);
  double rss = 0.0;
  for (Index i = 0; i < 30; ++i) rss += w(i) * std::pow(d.y()(i) - reg.alpha - d.x().row(i).dot(reg.beta), 2);
  const double s = m_step_sigma(d, resp, 1, reg.alpha, reg.beta, 1.0, -2.0);
  EXPECT_NEAR(s * s, (rss + 2.0 * reg.beta.lpNorm<1>()) / (nk + 8.0 - 4.0), 1e-12);

  Matrix cov = Matrix::Zero(4, 4);
  for (Index i = 0; i < 30; ++i) {
    const Vector r = d.x().row(i).transpose() - mu;
    cov += w(i) * r * r.transpose();
  }
  cov /= nk;
  Matrix shifted = cov;
  shifted.diagonal().array() += 3.0 / nk;
  EXPECT_LE((m_step_omega(d.x(), resp, 1, mu, OmegaMode::nuclear_norm(3.0)) - shifted.inverse()).cwiseAbs().maxCoeff(),
            1e-9);
  EXPECT_LE((m_step_omega(d.x(), resp, 1, mu, OmegaMode::none()) - cov.inverse()).cwiseAbs().maxCoeff(), 1e-9);
  const Matrix oas = oas_shrinkage(cov, nk).sigma_shrunk.inverse();
  EXPECT_LE((m_step_omega(d.x(), resp, 1, mu, OmegaMode::oas()) - oas).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(EmSteps, MStepMinimisesExpectedObjective) {
  // the M-step output is a stationary point of the expected penalised objective:
  // random perturbations of any block never lower it
  std::mt19937_64 rng(26);
  const Dataset d = small_data(40, 3, rng);
  const auto resp = random_resp(40, 2, rng);
  PenaltyConfig pen;
  pen.lambda = {2.0, 3.0};
  pen.rho = 1.0;
  pen.gamma = 0.5;
  pen.omega_mode = OmegaMode::nuclear_norm(1.0);
  const MixtureParams th = m_step(d, d.x(), resp, pen.lambda, pen);
  auto q_value = [&](const MixtureParams& p) {
    const Matrix s = component_log_scores(d, d.x(), p, 1.0);
    return -(resp.matrix().cwiseProduct(s)).sum() + penalty_value(p, pen);
  };
  const double base = q_value(th);
  std::normal_distribution<double> nd(0.0, 1e-3);
  for (int t = 0; t < 50; ++t) {
    auto groups = th.groups();
    for (auto& g : groups) {
      g.alpha += nd(rng);
      for (Index j = 0; j < 3; ++j) g.beta(j) += nd(rng), g.mu(j) += nd(rng);
      g.sigma *= 1.0 + nd(rng);
      Matrix e = Matrix::Zero(3, 3);
      for (Index j = 0; j < 3; ++j)
        for (Index l = j; l < 3; ++l) e(j, l) = e(l, j) = nd(rng);
      g.omega += e;
    }
    const double shift = nd(rng);
    groups[0].tau += shift;
    groups[1].tau = 1.0 - groups[0].tau;
    EXPECT_GE(q_value(MixtureParams(groups, 3, 3)), base - 1e-10);
  }
}

TEST(EmSteps, EmptyGroupIsAnError) {
  std::mt19937_64 rng(27);
  const Dataset d = small_data(10, 2, rng);
  const auto resp = Responsibilities::one_hot(std::vector<int>(10, 0), 2);
  EXPECT_THROW(m_step_mu(d.x(), resp, 1), Error);
}

TEST(EmSteps, LargeTLeavesOnlyTheResponse) {
  std::mt19937_64 rng(28);
  const Dataset d = small_data(20, 2, rng);
  const MixtureParams par = two_groups(2, 2, rng);
  const Matrix r = e_step(d, d.x(), par, 1e12).matrix();
  for (Index i = 0; i < 20; ++i) {
    Vector s(2);
    for (Index k = 0; k < 2; ++k) {
      const auto& g = par.group(k);
      s(k) = std::log(g.tau) + normal_logpdf(d.y()(i), g.alpha + d.x().row(i).dot(g.beta), g.sigma);
    }
    const double p0 = 1.0 / (1.0 + std::exp(s(1) - s(0)));
    EXPECT_NEAR(r(i, 0), p0, 1e-9);
  }
}

TEST(FLasso, StartsAtNOverKAndFreezesOnRepeat) {
  std::mt19937_64 rng(29);
  const Dataset d = small_data(40, 5, rng);
  const auto resp = Responsibilities::one_hot(std::vector<int>(40, 0), 1);
  const MixtureParams par = m_step(d, d.x(), resp, {1.0}, PenaltyConfig{});
  FLassoSchedule s(40, 1);
  EXPECT_EQ(s.lambda()[0], 40.0);
  EXPECT_FALSE(s.observe(false, d, par, resp));
  EXPECT_TRUE(s.observe(true, d, par, resp));
  EXPECT_NEAR(s.lambda()[0], par.group(0).sigma * std::sqrt(40.0 * std::log(5.0)), 1e-12);
  EXPECT_TRUE(s.frozen());
  EXPECT_FALSE(s.observe(true, d, par, resp));

  FLassoSchedule cv(40, 1, FLassoSchedule::After::CrossValidated, 3);
  EXPECT_TRUE(cv.observe(true, d, par, resp));
  Vector w = Vector::Ones(40);
  EXPECT_EQ(cv.lambda()[0], weighted_lasso_cv(d.x(), d.y(), w, 5, 3).best_lambda);
  EXPECT_FALSE(cv.observe(true, d, par, resp));  // same partition: no re-tuning
}

// ---- full EM

namespace {

Simulation sim(Index n, Index p, double dmu, double amp, std::uint64_t seed) {
  SignalSpec s;
  s.k = 2;
  s.delta_mu = dmu;
  s.beta_amplitude = amp;
  s.beta_nonzeros = std::min<Index>(3, p / 2);
  return gen_gaussian(n, p, s, seed);
}

}  // namespace

TEST(Em, ObjectiveDecreasesWithFrozenLambda) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto s = sim(120, 8, 1.0, 1.0, seed);
    FitConfig cfg;
    cfg.k = 2;
    cfg.lambda_rule = FitConfig::LambdaRule::Fixed;
    cfg.penalty.lambda = {5.0, 5.0};
    cfg.penalty.omega_mode = OmegaMode::nuclear_norm(1.0);
    cfg.seed = seed;
    const auto f = fit_em(s.data, cfg);
    for (std::size_t t = 1; t < f.objective_trace.size(); ++t)
      EXPECT_LE(f.objective_trace[t], f.objective_trace[t - 1] + 1e-8);
  }
}

TEST(Em, IdentityEmbeddingWithUnitTIsBaseModel) {
  const auto s = sim(100, 6, 1.0, 1.0, 3);
  FitConfig base = variant_config(Variant::RJM, 2, 6, 6);
  base.record_responsibilities = true;
  base.max_iter = 40;
  FitConfig alt = variant_config(Variant::BalancedProjected, 2, 6, 6);
  alt.embedding = EmbeddingSpec::from_values(embed(s.data.x(), LinearEmbedding::identity(6)));
  alt.penalty.balancing_T = 1.0;
  alt.penalty.omega_mode = base.penalty.omega_mode;
  alt.record_responsibilities = true;
  alt.max_iter = 40;
  const auto a = fit_em(s.data, base);
  const auto b = fit_em(s.data, alt);
  ASSERT_EQ(a.resp_trace.size(), b.resp_trace.size());
  for (std::size_t t = 0; t < a.resp_trace.size(); ++t)
    EXPECT_LE((a.resp_trace[t] - b.resp_trace[t]).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Em, SingleGroupIsPlainRegression) {
  const auto s = sim(80, 5, 0.0, 1.0, 4);
  FitConfig cfg;
  cfg.k = 1;
  cfg.lambda_rule = FitConfig::LambdaRule::Fixed;
  cfg.penalty.lambda = {2.0};
  const auto f = fit_em(s.data, cfg);
  EXPECT_TRUE(f.converged);
  const auto r = weighted_lasso(s.data.x(), s.data.y(), Vector::Ones(80), 2.0);
  EXPECT_LE((f.params.group(0).beta - r.beta).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_EQ(f.params.group(0).tau, 1.0);
}

TEST(Em, SeedDeterminesTheFit) {
  const auto s = sim(100, 6, 1.0, 1.0, 5);
  FitConfig cfg = variant_config(Variant::Projected, 2, 6, 3);
  cfg.seed = 11;
  const auto a = fit_em(s.data, cfg);
  const auto b = fit_em(s.data, cfg);
  EXPECT_EQ(a.hard_labels, b.hard_labels);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
}

TEST(Em, RestartsKeepTheBestObjective) {
  const auto s = sim(100, 6, 0.5, 1.0, 6);
  FitConfig cfg = variant_config(Variant::RJM, 2, 6, 6);
  cfg.init = FitConfig::Init::RandomResponsibilities;
  cfg.n_restarts = 3;
  const auto best = fit_em(s.data, cfg);
  for (int r = 0; r < 3; ++r) {
    FitConfig one = cfg;
    one.n_restarts = 1;
    one.seed = cfg.seed + static_cast<std::uint64_t>(r);
    try {
      EXPECT_LE(best.objective_trace.back(), fit_em(s.data, one).objective_trace.back());
    } catch (const Error&) {
    }
  }
}

TEST(Em, VariantConfigs) {
  const auto rjm = variant_config(Variant::RJM, 3, 50, 5);
  EXPECT_EQ(rjm.embedding.kind, EmbeddingSpec::Kind::Identity);
  EXPECT_EQ(rjm.balancing_T(), 1.0);
  const auto bal = variant_config(Variant::Balanced, 3, 50, 5);
  EXPECT_EQ(bal.balancing_T(), 50.0);
  const auto proj = variant_config(Variant::Projected, 3, 50, 5);
  EXPECT_EQ(proj.embedding.kind, EmbeddingSpec::Kind::PCA);
  EXPECT_EQ(proj.embedding.q, 5);
  EXPECT_EQ(proj.balancing_T(), 1.0);
  EXPECT_EQ(variant_config(Variant::BalancedProjected, 3, 50, 5).balancing_T(), 5.0);
  EXPECT_EQ(parse_variant("bal-proj"), Variant::BalancedProjected);
  EXPECT_EQ(variant_name(Variant::Balanced), "bal");
  EXPECT_THROW(parse_variant("nope"), Error);
}

TEST(Em, RejectsTooManyGroups) {
  const auto s = sim(10, 3, 0.0, 0.0, 7);
  FitConfig cfg;
  cfg.k = 11;
  EXPECT_THROW(fit_em(s.data, cfg), Error);
}

// ---- final estimation

TEST(SparseFinal, HardWeightsEqualPerGroupFits) {
  const auto s = sim(120, 6, 1.0, 1.0, 8);
  const auto gw = GroupWeights::hard(s.truth.labels, 2);
  FinalConfig cfg;
  cfg.lambda = {3.0, 4.0};
  cfg.delta = {0.05, 0.1};
  const auto est = estimate_final(s.data, gw, cfg);
  for (Index k = 0; k < 2; ++k) {
    const Dataset sub = s.data.subset(gw.members(k));
    const auto r = weighted_lasso(sub.x(), sub.y(), Vector::Ones(sub.n()), cfg.lambda[static_cast<std::size_t>(k)]);
    EXPECT_LE((est.groups[static_cast<std::size_t>(k)].beta - r.beta).cwiseAbs().maxCoeff(), 1e-8);
    const Matrix c = sub.x().rowwise() - sub.x().colwise().mean();
    const Matrix om = graphical_lasso(c.transpose() * c / static_cast<double>(sub.n()), cfg.delta[static_cast<std::size_t>(k)]);
    EXPECT_LE((est.groups[static_cast<std::size_t>(k)].omega - om).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(SparseFinal, ValidatesConfig) {
  const auto s = sim(40, 4, 1.0, 1.0, 9);
  const auto gw = GroupWeights::hard(s.truth.labels, 2);
  FinalConfig cfg;
  cfg.lambda = {1.0};
  cfg.delta = {0.1, 0.1};
  EXPECT_THROW(estimate_final(s.data, gw, cfg), Error);
  std::vector<int> one(40, 0);
  FinalConfig ok;
  ok.lambda = {1.0, 1.0};
  ok.delta = {0.1, 0.1};
  EXPECT_THROW(estimate_final(s.data, GroupWeights::hard(one, 2), ok), Error);
}

TEST(SparseFinal, PathsStartEmpty) {
  const auto s = sim(100, 6, 1.0, 2.0, 10);
  const auto gw = GroupWeights::hard(s.truth.labels, 2);
  const double lmax = weighted_lasso_lambda_max(s.data.x(), s.data.y(), gw.w.col(0));
  const auto path = final_beta_path(s.data, gw, 0, lambda_grid(lmax, 8));
  ASSERT_EQ(path.size(), 8u);
  EXPECT_EQ(path.front().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(SparseEstimates::beta_pattern(path.front()), std::vector<bool>(6, false));
}
