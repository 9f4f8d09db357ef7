#pragma once

// Covariance inputs for the final graphical lasso: weighted empirical,
// nonparanormal (Spearman) and mixed binary/continuous (Kendall bridges).

#include "srjm/types.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace srjm {

/// Group weights for the final estimation step: soft responsibilities or
/// one-hot hard labels.
struct GroupWeights {
  enum class Mode { Soft, Hard };
  Matrix w;
  Mode mode = Mode::Soft;

  GroupWeights(Matrix weights, Mode m) : w(std::move(weights)), mode(m) {
    detail::require(w.rows() >= 1 && w.cols() >= 1, "group weights: empty matrix");
    for (Index i = 0; i < w.rows(); ++i) {
      if (mode == Mode::Hard) {
        int ones = 0;
        for (Index k = 0; k < w.cols(); ++k) {
          detail::require(w(i, k) == 0.0 || w(i, k) == 1.0,
                          "group weights: hard row " + std::to_string(i) + " is not one-hot");
          ones += w(i, k) == 1.0;
        }
        detail::require(ones == 1, "group weights: hard row " + std::to_string(i) + " is not one-hot");
      } else {
        detail::require((w.row(i).array() >= 0.0).all() && std::abs(w.row(i).sum() - 1.0) <= 1e-9,
                        "group weights: soft row " + std::to_string(i) + " does not sum to 1");
      }
    }
  }

  static GroupWeights hard(const std::vector<int>& labels, Index k) {
    return {Responsibilities::one_hot(labels, k).matrix(), Mode::Hard};
  }
  static GroupWeights soft(const Responsibilities& r) { return {r.matrix(), Mode::Soft}; }

  Index k() const noexcept { return w.cols(); }
  Index n() const noexcept { return w.rows(); }

  std::vector<Index> members(Index k) const {
    std::vector<Index> out;
    for (Index i = 0; i < w.rows(); ++i)
      if (w(i, k) == 1.0) out.push_back(i);
    return out;
  }
};

namespace detail {

inline Matrix rows_of(const Matrix& x, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
  return out;
}

/// Ranks 1..n with ties given their average rank.
inline Vector average_ranks(const Eigen::Ref<const Vector>& v) {
  const Index n = v.size();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return v(a) < v(b); });
  Vector r(n);
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j + 1 < n && v(idx[static_cast<std::size_t>(j + 1)]) == v(idx[static_cast<std::size_t>(i)])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index t = i; t <= j; ++t) r(idx[static_cast<std::size_t>(t)]) = avg;
    i = j + 1;
  }
  return r;
}

inline Matrix pearson_correlation(const Matrix& x) {
  const Matrix c = x.rowwise() - x.colwise().mean();
  Matrix cov = c.transpose() * c;
  Vector sd = cov.diagonal().cwiseSqrt();
  for (Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 0.0 ? 1.0 / sd(j) : 0.0;
  Matrix r = sd.asDiagonal() * cov * sd.asDiagonal();
  for (Index j = 0; j < r.rows(); ++j) r(j, j) = 1.0;
  return r;
}

/// Kendall's tau-a for all column pairs, (2 / (n(n-1))) sum_{i<i'} sign(dx_j) sign(dx_l).
inline Matrix kendall_tau_a(const Matrix& x) {
  const Index n = x.rows();
  const Index p = x.cols();
  Matrix acc = Matrix::Zero(p, p);
  const Index block = std::max<Index>(1, 20000 / std::max<Index>(1, n));
  Matrix signs;
  for (Index i0 = 0; i0 < n; i0 += block) {
    const Index i1 = std::min(n, i0 + block);
    Index pairs = 0;
    for (Index i = i0; i < i1; ++i) pairs += n - 1 - i;
    if (pairs == 0) continue;
    signs.resize(pairs, p);
    Index row = 0;
    for (Index i = i0; i < i1; ++i) {
      const Index m = n - 1 - i;
      if (m == 0) continue;
      signs.middleRows(row, m) =
          (x.bottomRows(m).rowwise() - x.row(i)).array().sign().matrix();
      row += m;
    }
    acc.selfadjointView<Eigen::Lower>().rankUpdate(signs.transpose());
  }
  acc.triangularView<Eigen::StrictlyUpper>() = acc.transpose();
  return acc * (2.0 / (static_cast<double>(n) * static_cast<double>(n - 1)));
}

/// Nearest PSD matrix by eigenvalue clipping, then symmetrised.
inline Matrix clip_psd(const Matrix& a, double floor = 1e-6) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  const Vector ev = es.eigenvalues().cwiseMax(floor);
  Matrix out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

inline double std_normal_cdf(double x) {
  static const boost::math::normal_distribution<double> nd;
  return boost::math::cdf(nd, x);
}

inline double std_normal_quantile(double p) {
  static const boost::math::normal_distribution<double> nd;
  return boost::math::quantile(nd, p);
}

}  // namespace detail

/// P(Z1 <= a, Z2 <= b) for standard bivariate normal with correlation r,
/// via Phi(a)Phi(b) + int_0^r phi_2(a, b; t) dt.
inline double bivariate_normal_cdf(double a, double b, double r) {
  detail::require(r >= -1.0 && r <= 1.0, "bivariate_normal_cdf: r outside [-1,1]");
  const double base = detail::std_normal_cdf(a) * detail::std_normal_cdf(b);
  if (r == 0.0) return base;
  auto f = [a, b](double t) {
    const double om = 1.0 - t * t;
    if (om <= 0.0) return 0.0;
    return std::exp(-(a * a - 2.0 * t * a * b + b * b) / (2.0 * om)) /
           (2.0 * std::numbers::pi * std::sqrt(om));
  };
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, r, 15, 1e-12);
  return std::clamp(base + integral, 0.0, 1.0);
}

/// Kendall tau implied by latent correlation r for a binary (threshold d1)
/// versus continuous pair.
inline double bridge_binary_continuous(double r, double d1) {
  return 4.0 * bivariate_normal_cdf(d1, 0.0, r / std::sqrt(2.0)) - 2.0 * detail::std_normal_cdf(d1);
}

/// Kendall tau implied by latent correlation r for two binary variables.
inline double bridge_binary_binary(double r, double d1, double d2) {
  return 2.0 * (bivariate_normal_cdf(d1, d2, r) - detail::std_normal_cdf(d1) * detail::std_normal_cdf(d2));
}

namespace detail {

/// Inverts a bridge F(r), increasing in r, at tau; clips to the boundary
/// when tau lies outside F's range.
template <class F>
double invert_bridge(F&& bridge, double tau) {
  const double lo = -1.0 + 1e-10;
  const double hi = 1.0 - 1e-10;
  const double flo = bridge(lo) - tau;
  const double fhi = bridge(hi) - tau;
  if (flo >= 0.0) return -1.0;
  if (fhi <= 0.0) return 1.0;
  std::uintmax_t iters = 200;
  const auto r = boost::math::tools::toms748_solve(
      [&](double t) { return bridge(t) - tau; }, lo, hi, flo, fhi,
      boost::math::tools::eps_tolerance<double>(40), iters);
  return 0.5 * (r.first + r.second);
}

}  // namespace detail

/// (1/n_k) sum_i w_ik (x_i - mu_k)(x_i - mu_k)^T with mu_k the weighted mean.
inline Matrix covariance_naive(const Matrix& x, const GroupWeights& gw, Index k) {
  detail::require(gw.n() == x.rows(), "covariance_naive: row count mismatch");
  const Vector w = gw.w.col(k);
  const double nk = w.sum();
  detail::require(nk > 0.0, "covariance_naive: empty group " + std::to_string(k));
  const Vector mu = (x.transpose() * w) / nk;
  const Matrix wd = w.cwiseSqrt().asDiagonal() * (x.rowwise() - mu.transpose());
  Matrix s = (wd.transpose() * wd) / nk;
  return 0.5 * (s + s.transpose());
}

/// Spearman correlation mapped by 2 sin(pi r / 6), clipped to PSD and
/// rescaled by the group's marginal standard deviations. Hard weights only.
inline Matrix covariance_nonparanormal(const Matrix& x, const GroupWeights& gw, Index k) {
  detail::require(gw.mode == GroupWeights::Mode::Hard,
                  "nonparanormal covariance requires hard group weights");
  const auto rows = gw.members(k);
  detail::require(rows.size() >= 3, "nonparanormal covariance: group " + std::to_string(k) + " too small");
  const Matrix xs = detail::rows_of(x, rows);
  Matrix ranks(xs.rows(), xs.cols());
  for (Index j = 0; j < xs.cols(); ++j) ranks.col(j) = detail::average_ranks(xs.col(j));
  Matrix r = detail::pearson_correlation(ranks);
  r = (2.0 * (std::numbers::pi / 6.0 * r.array()).sin()).matrix();
  r.diagonal().setOnes();
  r = detail::clip_psd(r);
  const Matrix c = xs.rowwise() - xs.colwise().mean();
  const Vector sd = (c.colwise().squaredNorm() / static_cast<double>(xs.rows())).cwiseSqrt().transpose();
  return sd.asDiagonal() * r * sd.asDiagonal();
}

/// Latent-correlation estimate for mixed binary/continuous columns through
/// Kendall's tau bridges; continuous margins rescaled, binary ones kept at unit scale.
inline Matrix covariance_mixed(const Matrix& x, const GroupWeights& gw, Index k,
                               const std::vector<bool>& binary_mask) {
  detail::require(gw.mode == GroupWeights::Mode::Hard, "mixed covariance requires hard group weights");
  detail::require(static_cast<Index>(binary_mask.size()) == x.cols(),
                  "mixed covariance: binary mask has wrong length");
  const auto rows = gw.members(k);
  detail::require(rows.size() >= 3, "mixed covariance: group " + std::to_string(k) + " too small");
  Matrix xs = detail::rows_of(x, rows);
  const Index p = xs.cols();
  const double nk = static_cast<double>(xs.rows());

  Vector thresh = Vector::Zero(p);
  for (Index j = 0; j < p; ++j) {
    if (!binary_mask[static_cast<std::size_t>(j)]) continue;
    const double lo = xs.col(j).minCoeff();
    const double hi = xs.col(j).maxCoeff();
    detail::require(lo < hi, "mixed covariance: binary column " + std::to_string(j) +
                                 " is constant within group " + std::to_string(k));
    for (Index i = 0; i < xs.rows(); ++i) {
      detail::require(xs(i, j) == lo || xs(i, j) == hi,
                      "mixed covariance: column " + std::to_string(j) + " flagged binary has more than two values");
      xs(i, j) = xs(i, j) == hi ? 1.0 : 0.0;
    }
    const double mean = xs.col(j).mean();
    thresh(j) = detail::std_normal_quantile(1.0 - mean);
  }

  const Matrix tau = detail::kendall_tau_a(xs);
  Matrix r = Matrix::Identity(p, p);
  for (Index j = 0; j < p; ++j) {
    for (Index l = j + 1; l < p; ++l) {
      const bool bj = binary_mask[static_cast<std::size_t>(j)];
      const bool bl = binary_mask[static_cast<std::size_t>(l)];
      const double t = tau(j, l);
      double v = 0.0;
      if (!bj && !bl) {
        v = std::sin(std::numbers::pi / 2.0 * t);
      } else if (bj && bl) {
        const double d1 = thresh(j), d2 = thresh(l);
        v = detail::invert_bridge([&](double rr) { return bridge_binary_binary(rr, d1, d2); }, t);
      } else {
        const double d = bj ? thresh(j) : thresh(l);
        v = detail::invert_bridge([&](double rr) { return bridge_binary_continuous(rr, d); }, t);
      }
      r(j, l) = r(l, j) = std::clamp(v, -1.0, 1.0);
    }
  }
  r = detail::clip_psd(r);
  Vector sd = Vector::Ones(p);
  const Matrix c = xs.rowwise() - xs.colwise().mean();
  for (Index j = 0; j < p; ++j)
    if (!binary_mask[static_cast<std::size_t>(j)]) sd(j) = std::sqrt(c.col(j).squaredNorm() / nk);
  return sd.asDiagonal() * r * sd.asDiagonal();
}

}  // namespace srjm
