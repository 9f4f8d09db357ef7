#pragma once

// Weighted Lasso with unpenalised intercept:
//   min_{alpha, beta}  sum_i w_i (y_i - alpha - beta^T x_i)^2 + 2 lambda |beta|_1
// solved by cyclic coordinate descent; covariance updates when p <= n, naive
// (residual) updates otherwise.

#include "srjm/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace srjm {

struct LassoOptions {
  /// Stop when every coordinate move changes the gradient by less than
  /// tol * max(1, |x^T W y|_inf).
  double tol = 1e-11;
  /// 0 means max(10 p, 1000).
  int max_sweeps = 0;
};

struct LassoResult {
  double alpha = 0.0;
  Vector beta;
  int sweeps = 0;
  bool converged = false;
};

namespace detail {

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

struct WeightedCentering {
  double wsum = 0.0;
  Vector x_mean;
  double y_mean = 0.0;
};

inline WeightedCentering weighted_means(const Matrix& x, const Vector& y, const Vector& w) {
  WeightedCentering c;
  c.wsum = w.sum();
  c.x_mean = (x.transpose() * w) / c.wsum;
  c.y_mean = w.dot(y) / c.wsum;
  return c;
}

inline void check_lasso_inputs(const Matrix& x, const Vector& y, const Vector& w, double lambda) {
  require(x.rows() == y.size() && w.size() == y.size(), "weighted_lasso: dimension mismatch");
  require(x.allFinite() && y.allFinite() && w.allFinite() && std::isfinite(lambda),
          "weighted_lasso: non-finite input");
  require(lambda >= 0.0, "weighted_lasso: lambda must be >= 0");
  require((w.array() >= 0.0).all(), "weighted_lasso: negative weight");
  require(w.sum() > 0.0, "weighted_lasso: weights sum to zero");
}

}  // namespace detail

/// Weighted centering, scaled design and Gram columns for one weight vector,
/// shared by every lambda solved against it.
class LassoWorkspace {
 public:
  LassoWorkspace(const Matrix& x, const Vector& y, const Vector& w) {
    detail::check_lasso_inputs(x, y, w, 0.0);
    c_ = detail::weighted_means(x, y, w);
    xc_ = x.rowwise() - c_.x_mean.transpose();
    yc_ = (y.array() - c_.y_mean).matrix();
    wx_ = w.asDiagonal() * xc_;  // rows scaled by w
    hess_ = (wx_.cwiseProduct(xc_)).colwise().sum().transpose();
    // per-column dots: the same arithmetic as the naive solver's first visit
    xty_.resize(x.cols());
    for (Index j = 0; j < x.cols(); ++j) xty_(j) = wx_.col(j).dot(yc_);
    // zero-variance columns (under these weights) stay at zero
    for (Index j = 0; j < hess_.size(); ++j)
      if (hess_(j) <= 1e-14 * std::max(1.0, c_.wsum)) hess_(j) = 0.0;
    slot_.assign(static_cast<std::size_t>(x.cols()), -1);
  }

  /// Smallest lambda for which beta = 0 is optimal.
  double lambda_max() const { return xty_.cwiseAbs().maxCoeff(); }

  LassoResult solve(double lambda, const Vector* warm_beta = nullptr, const LassoOptions& opts = {});

 private:
  const Vector& gram_col(Index j) {  // xc^T W xc_j
    auto& s = slot_[static_cast<std::size_t>(j)];
    if (s < 0) {
      s = static_cast<Index>(gram_.size());
      gram_.push_back(wx_.transpose() * xc_.col(j));
    }
    return gram_[static_cast<std::size_t>(s)];
  }

  detail::WeightedCentering c_;
  Matrix xc_, wx_;
  Vector yc_, hess_, xty_;
  std::vector<Index> slot_;
  std::vector<Vector> gram_;
};

inline LassoResult LassoWorkspace::solve(double lambda, const Vector* warm_beta, const LassoOptions& opts) {
  detail::require(std::isfinite(lambda) && lambda >= 0.0, "weighted_lasso: lambda must be >= 0");
  const Index n = xc_.rows();
  const Index p = xc_.cols();
  Vector beta = Vector::Zero(p);
  if (warm_beta != nullptr) {
    detail::require(warm_beta->size() == p, "weighted_lasso: warm start has wrong size");
    beta = *warm_beta;
    for (Index j = 0; j < p; ++j)
      if (hess_(j) == 0.0) beta(j) = 0.0;
  }
  const bool warm = beta.cwiseAbs().maxCoeff() > 0.0;

  // Covariance updates keep grad_j = sum_i w_i xc_ij r_i for every j; when
  // p > n, naive updates keep the residual r instead and form grad_j on visit.
  const bool naive = p > n;
  Vector grad, resid;
  if (naive) {
    resid = warm ? Vector(yc_ - xc_ * beta) : yc_;
  } else {
    grad = warm ? Vector(wx_.transpose() * (yc_ - xc_ * beta)) : xty_;
  }

  const double tol = opts.tol * std::max(1.0, xty_.cwiseAbs().maxCoeff());
  const int max_sweeps =
      opts.max_sweeps > 0 ? opts.max_sweeps : static_cast<int>(std::max<Index>(10 * p, 1000));

  auto update = [&](Index j) -> double {
    const double h = hess_(j);
    if (h == 0.0) return 0.0;
    const double old = beta(j);
    const double g = naive ? wx_.col(j).dot(resid) : grad(j);
    const double nb = detail::soft_threshold(g + h * old, lambda) / h;
    const double delta = nb - old;
    if (delta == 0.0) return 0.0;
    beta(j) = nb;
    if (naive) {
      resid.noalias() -= delta * xc_.col(j);
    } else {
      grad.noalias() -= delta * gram_col(j);
    }
    return std::abs(delta) * h;
  };

  LassoResult res;
  std::vector<Index> active;
  int sweeps = 0;
  while (sweeps < max_sweeps) {
    double max_move = 0.0;
    for (Index j = 0; j < p; ++j) max_move = std::max(max_move, update(j));
    ++sweeps;
    if (max_move < tol) {
      res.converged = true;
      break;
    }
    active.clear();
    for (Index j = 0; j < p; ++j)
      if (beta(j) != 0.0) active.push_back(j);
    if (naive) {
      while (sweeps < max_sweeps) {
        double move = 0.0;
        for (Index j : active) move = std::max(move, update(j));
        ++sweeps;
        if (move < tol) break;
      }
      continue;
    }
    // inner sweeps touch only the active entries of the gradient; the full
    // gradient is rebuilt from the residual afterwards
    const Index na = static_cast<Index>(active.size());
    Vector ga(na);
    for (Index a = 0; a < na; ++a) ga(a) = grad(active[static_cast<std::size_t>(a)]);
    bool moved = false;
    while (sweeps < max_sweeps) {
      double move = 0.0;
      for (Index a = 0; a < na; ++a) {
        const Index j = active[static_cast<std::size_t>(a)];
        const double h = hess_(j);
        const double old = beta(j);
        const double nb = detail::soft_threshold(ga(a) + h * old, lambda) / h;
        const double d = nb - old;
        if (d == 0.0) continue;
        beta(j) = nb;
        const Vector& g = gram_col(j);
        for (Index b = 0; b < na; ++b) ga(b) -= d * g(active[static_cast<std::size_t>(b)]);
        move = std::max(move, std::abs(d) * h);
        moved = true;
      }
      ++sweeps;
      if (move < tol) break;
    }
    if (moved) grad = wx_.transpose() * (yc_ - xc_ * beta);
  }
  res.beta = std::move(beta);
  res.alpha = c_.y_mean - c_.x_mean.dot(res.beta);
  res.sweeps = sweeps;
  return res;
}

/// Smallest lambda for which beta = 0 is optimal. Same arithmetic as the
/// solver's starting gradient, so beta stays exactly 0 there.
inline double weighted_lasso_lambda_max(const Matrix& x, const Vector& y, const Vector& w) {
  return LassoWorkspace(x, y, w).lambda_max();
}

/// Coordinate descent solve. `warm_beta`, when non-null, seeds the iterate.
inline LassoResult weighted_lasso(const Matrix& x, const Vector& y, const Vector& w, double lambda,
                                  const Vector* warm_beta = nullptr, const LassoOptions& opts = {}) {
  detail::check_lasso_inputs(x, y, w, lambda);
  return LassoWorkspace(x, y, w).solve(lambda, warm_beta, opts);
}

/// Largest violation of the optimality conditions of the weighted Lasso at
/// (alpha, beta): stationarity in alpha, subgradient condition in beta.
inline double lasso_kkt_residual(const Matrix& x, const Vector& y, const Vector& w, double lambda,
                                 double alpha, const Vector& beta) {
  Vector r = y - x * beta;
  r.array() -= alpha;
  const Vector wr = w.cwiseProduct(r);
  const Vector g = x.transpose() * wr;
  double worst = std::abs(wr.sum());
  for (Index j = 0; j < beta.size(); ++j) {
    if (beta(j) != 0.0) {
      worst = std::max(worst, std::abs(g(j) - lambda * (beta(j) > 0 ? 1.0 : -1.0)));
    } else {
      worst = std::max(worst, std::abs(g(j)) - lambda);
    }
  }
  return std::max(worst, 0.0);
}

/// Solutions along a decreasing lambda grid, warm-started in order.
inline std::vector<LassoResult> weighted_lasso_path(const Matrix& x, const Vector& y, const Vector& w,
                                                    const std::vector<double>& lambdas,
                                                    const LassoOptions& opts = {}) {
  LassoWorkspace ws(x, y, w);
  std::vector<LassoResult> out;
  out.reserve(lambdas.size());
  const Vector* warm = nullptr;
  for (double l : lambdas) {
    out.push_back(ws.solve(l, warm, opts));
    warm = &out.back().beta;
  }
  return out;
}

/// Log-spaced grid from lambda_max down to ratio * lambda_max.
inline std::vector<double> lambda_grid(double lambda_max, int count, double ratio = 1e-3) {
  detail::require(count >= 1 && ratio > 0.0 && ratio < 1.0, "lambda_grid: bad arguments");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = lambda_max;
    return out;
  }
  for (int i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] =
        lambda_max * std::pow(ratio, static_cast<double>(i) / static_cast<double>(count - 1));
  }
  return out;
}

struct LassoCV {
  std::vector<double> lambdas;
  std::vector<double> cv_error;  // weighted held-out squared error per lambda
  double best_lambda = 0.0;
};

/// Weighted K-fold cross-validation along lambda_grid(lambda_max, count, ratio).
/// Rows are dealt to folds by a seeded shuffle. Each training fit uses the
/// penalty scaled by its share of the total weight, so the returned lambda is
/// on the full-data scale. A fold's path stops early, glmnet style, once the
/// training deviance explained passes 0.999 or stops improving by 1e-5, or
/// once the active set reaches the effective training size (sum w)^2 / sum w^2;
/// the grid is then cut to the shortest fold path.
inline LassoCV weighted_lasso_cv(const Matrix& x, const Vector& y, const Vector& w, int n_folds,
                                 std::uint64_t seed, int count = 30, double ratio = 1e-3,
                                 const LassoOptions& opts = {1e-5, 0}) {
  detail::check_lasso_inputs(x, y, w, 0.0);
  detail::require(n_folds >= 2 && n_folds <= x.rows(), "weighted_lasso_cv: need 2 <= folds <= n");
  const Index n = x.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) fold[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = static_cast<int>(i % n_folds);

  LassoCV out;
  const double lmax = weighted_lasso_lambda_max(x, y, w);
  out.lambdas = lambda_grid(std::max(lmax, 1e-300), count, ratio);
  out.cv_error.assign(out.lambdas.size(), 0.0);
  std::size_t used = out.lambdas.size();
  const double wtot = w.sum();
  for (int f = 0; f < n_folds; ++f) {
    Vector wt = w;
    for (Index i = 0; i < n; ++i)
      if (fold[static_cast<std::size_t>(i)] == f) wt(i) = 0.0;
    const double share = wt.sum() / wtot;
    if (share <= 0.0 || share >= 1.0) continue;
    const double ybar = wt.dot(y) / wt.sum();
    const double null_dev = wt.dot((y.array() - ybar).square().matrix());
    const double n_eff = wt.sum() * wt.sum() / wt.squaredNorm();
    double prev_ratio = 0.0;
    LassoWorkspace ws(x, y, wt);
    const Vector* warm = nullptr;
    Vector last;
    std::size_t l = 0;
    for (; l < used; ++l) {
      const LassoResult r = ws.solve(out.lambdas[l] * share, warm, opts);
      const Vector resid = ((y - x * r.beta).array() - r.alpha).matrix();
      for (Index i = 0; i < n; ++i) {
        if (fold[static_cast<std::size_t>(i)] != f) continue;
        out.cv_error[l] += w(i) * resid(i) * resid(i);
      }
      last = r.beta;
      warm = &last;
      if (l > 0 && static_cast<double>((r.beta.array() != 0.0).count()) >= n_eff) {
        ++l;
        break;
      }
      if (null_dev <= 0.0) continue;
      const double dev_ratio = 1.0 - wt.dot(resid.cwiseAbs2()) / null_dev;
      if (l > 0 && (dev_ratio > 0.999 || dev_ratio - prev_ratio < 1e-5)) {
        ++l;
        break;
      }
      prev_ratio = dev_ratio;
    }
    used = std::min(used, l);
  }
  out.lambdas.resize(used);
  out.cv_error.resize(used);
  std::size_t best = 0;
  for (std::size_t l = 1; l < used; ++l)
    if (out.cv_error[l] < out.cv_error[best]) best = l;
  out.best_lambda = out.lambdas[best];
  return out;
}

}  // namespace srjm
