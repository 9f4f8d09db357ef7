#pragma once

// Comparison clusterers: KMeans (Lloyd + k-means++) and a full-covariance
// Gaussian mixture EM, each usable on x alone or on the stacked (x, y).

#include "srjm/core_model.hpp"
#include "srjm/oas.hpp"
#include "srjm/types.hpp"

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace srjm {

struct BaselineSpec {
  enum class Method { KMeans, GaussianMixture };
  enum class Input { XOnly, XY };
  Method method = Method::KMeans;
  Input input = Input::XOnly;
  Index k = 2;
  int n_init = 10;
  int max_iter = 300;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<int> labels;
  Matrix centers;
  double inertia = 0.0;
  int iterations = 0;
  std::vector<double> inertia_trace;  // of the winning restart, one entry per assignment step
};

namespace detail {

inline Index count_distinct_rows(const Matrix& pts, Index stop_at) {
  std::vector<Index> reps;
  for (Index i = 0; i < pts.rows() && static_cast<Index>(reps.size()) < stop_at; ++i) {
    bool seen = false;
    for (Index r : reps) {
      if ((pts.row(r).array() == pts.row(i).array()).all()) {
        seen = true;
        break;
      }
    }
    if (!seen) reps.push_back(i);
  }
  return static_cast<Index>(reps.size());
}

inline Matrix kmeanspp_seed(const Matrix& pts, Index k, std::mt19937_64& rng) {
  const Index n = pts.rows();
  Matrix centers(k, pts.cols());
  std::uniform_int_distribution<Index> pick(0, n - 1);
  centers.row(0) = pts.row(pick(rng));
  Vector d2 = (pts.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < k; ++c) {
    Index chosen = 0;
    if (d2.sum() > 0.0) {
      std::discrete_distribution<Index> dd(d2.data(), d2.data() + d2.size());
      chosen = dd(rng);
    } else {
      chosen = pick(rng);
    }
    centers.row(c) = pts.row(chosen);
    d2 = d2.cwiseMin((pts.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

/// Squared distances from every point to every center (n x k).
inline Matrix sq_distances(const Matrix& pts, const Matrix& centers) {
  Matrix d(pts.rows(), centers.rows());
  for (Index c = 0; c < centers.rows(); ++c)
    d.col(c) = (pts.rowwise() - centers.row(c)).rowwise().squaredNorm();
  return d;
}

inline KMeansResult lloyd(const Matrix& pts, Matrix centers, int max_iter) {
  const Index n = pts.rows();
  const Index k = centers.rows();
  KMeansResult res;
  res.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iter; ++it) {
    const Matrix d = sq_distances(pts, centers);
    bool changed = false;
    double inertia = 0.0;
    Vector own(n);
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      own(i) = d.row(i).minCoeff(&best);
      inertia += own(i);
      if (res.labels[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
        res.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    res.inertia_trace.push_back(inertia);
    res.inertia = inertia;
    res.iterations = it + 1;
    if (!changed && it > 0) break;

    Matrix sums = Matrix::Zero(k, pts.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      const int l = res.labels[static_cast<std::size_t>(i)];
      sums.row(l) += pts.row(i);
      ++counts[static_cast<std::size_t>(l)];
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // empty cluster: move it to the point farthest from its own center
        Index far = 0;
        own.maxCoeff(&far);
        centers.row(c) = pts.row(far);
        own(far) = 0.0;
      }
    }
  }
  res.centers = std::move(centers);
  return res;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding; best inertia over `n_init` seeds.
inline KMeansResult kmeans(const Matrix& points, Index k, int n_init = 10, int max_iter = 300,
                           std::uint64_t seed = 0) {
  detail::require(k >= 1, "kmeans: k must be >= 1");
  detail::require(k <= points.rows(), "kmeans: k exceeds number of points");
  detail::require(points.allFinite(), "kmeans: non-finite input");
  detail::require(detail::count_distinct_rows(points, k) >= k, "kmeans: k exceeds distinct points");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, n_init); ++r) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(r));
    auto res = detail::lloyd(points, detail::kmeanspp_seed(points, k, rng), max_iter);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

struct GmmOptions {
  enum class Shrinkage { Auto, On, Off };
  Shrinkage shrinkage = Shrinkage::Auto;  // Auto: on when d > n/2
  int n_init = 3;
  int max_iter = 300;
  double tol = 1e-8;  // on the change of mean per-sample log-likelihood
  double reg_covar = 1e-6;  // added to every covariance diagonal
  std::uint64_t seed = 0;
};

struct GmmResult {
  std::vector<int> labels;
  Matrix resp;
  Vector weights;
  Matrix means;                  // k x d
  std::vector<Matrix> covariances;
  std::vector<double> loglik_trace;
  double loglik = 0.0;
  int iterations = 0;
};

namespace detail {

inline Matrix gmm_log_scores(const Matrix& pts, const Vector& weights, const Matrix& means,
                             const std::vector<Matrix>& covs) {
  const Index n = pts.rows();
  const double d = static_cast<double>(pts.cols());
  Matrix s(n, weights.size());
  for (Index c = 0; c < weights.size(); ++c) {
    Eigen::LLT<Matrix> llt(covs[static_cast<std::size_t>(c)]);
    if (llt.info() != Eigen::Success) throw Error("gaussian mixture: degenerate component");
    const Matrix l = llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    // solve L z = (x - m) for all rows at once
    const Matrix diff = (pts.rowwise() - means.row(c)).transpose();
    const Matrix z = l.triangularView<Eigen::Lower>().solve(diff);
    s.col(c) = (-0.5 * z.colwise().squaredNorm().array() - 0.5 * log_det - 0.5 * d * kLog2Pi +
                std::log(weights(c)))
                   .matrix()
                   .transpose();
  }
  return s;
}

inline void gmm_m_step(const Matrix& pts, const Matrix& resp, bool shrink, double reg, Vector& weights,
                       Matrix& means, std::vector<Matrix>& covs) {
  const Index n = pts.rows();
  const Index k = resp.cols();
  weights.resize(k);
  means.resize(k, pts.cols());
  covs.assign(static_cast<std::size_t>(k), Matrix());
  for (Index c = 0; c < k; ++c) {
    const double nk = resp.col(c).sum();
    if (nk < 1e-8) throw Error("gaussian mixture: degenerate component (empty)");
    weights(c) = nk / static_cast<double>(n);
    means.row(c) = (resp.col(c).transpose() * pts) / nk;
    const Matrix diff = pts.rowwise() - means.row(c);
    const Matrix wd = resp.col(c).cwiseSqrt().asDiagonal() * diff;
    Matrix cov = (wd.transpose() * wd) / nk;
    if (shrink) cov = oas_shrinkage(cov, nk).sigma_shrunk;
    cov.diagonal().array() += reg;
    covs[static_cast<std::size_t>(c)] = std::move(cov);
  }
}

}  // namespace detail

/// Full-covariance Gaussian mixture EM, initialised from KMeans labels.
inline GmmResult gmm_em(const Matrix& points, Index k, const GmmOptions& opts = {}) {
  detail::require(k >= 1 && k <= points.rows(), "gaussian mixture: need 1 <= k <= n");
  const Index n = points.rows();
  const bool shrink = opts.shrinkage == GmmOptions::Shrinkage::On ||
                      (opts.shrinkage == GmmOptions::Shrinkage::Auto &&
                       2 * points.cols() > points.rows());
  GmmResult best;
  best.loglik = -std::numeric_limits<double>::infinity();
  bool any = false;
  std::string last_error;
  for (int r = 0; r < std::max(1, opts.n_init); ++r) {
    try {
      const auto km = kmeans(points, k, 1, 300, opts.seed + static_cast<std::uint64_t>(r));
      Matrix resp = Responsibilities::one_hot(km.labels, k).matrix();
      GmmResult cur;
      double prev = -std::numeric_limits<double>::infinity();
      for (int it = 0; it < opts.max_iter; ++it) {
        detail::gmm_m_step(points, resp, shrink, opts.reg_covar, cur.weights, cur.means, cur.covariances);
        const Matrix s = detail::gmm_log_scores(points, cur.weights, cur.means, cur.covariances);
        double ll = 0.0;
        for (Index i = 0; i < n; ++i) {
          const double lse = log_sum_exp(s.row(i));
          ll += lse;
          resp.row(i) = (s.row(i).array() - lse).exp();
          resp.row(i) /= resp.row(i).sum();
        }
        cur.loglik_trace.push_back(ll);
        cur.loglik = ll;
        cur.iterations = it + 1;
        if (std::abs(ll - prev) / static_cast<double>(n) < opts.tol) break;
        prev = ll;
      }
      cur.resp = resp;
      cur.labels = Responsibilities(resp).hard_labels();
      if (!any || cur.loglik > best.loglik) best = std::move(cur);
      any = true;
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  if (!any) throw Error("gaussian mixture: all restarts failed: " + last_error);
  return best;
}

/// Stacks y as an extra column when the spec asks for (x, y).
inline Matrix baseline_input(const Dataset& data, BaselineSpec::Input input) {
  if (input == BaselineSpec::Input::XOnly) return data.x();
  Matrix out(data.n(), data.p() + 1);
  out.leftCols(data.p()) = data.x();
  out.col(data.p()) = data.y();
  return out;
}

inline std::vector<int> run_baseline(const Dataset& data, const BaselineSpec& spec) {
  const Matrix pts = baseline_input(data, spec.input);
  if (spec.method == BaselineSpec::Method::KMeans) {
    return kmeans(pts, spec.k, spec.n_init, spec.max_iter, spec.seed).labels;
  }
  GmmOptions o;
  o.n_init = spec.n_init;
  o.max_iter = spec.max_iter;
  o.seed = spec.seed;
  return gmm_em(pts, spec.k, o).labels;
}

}  // namespace srjm
