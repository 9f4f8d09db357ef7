#pragma once

// Clustering and support-recovery metrics.

#include "srjm/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace srjm {

namespace detail {

inline int label_count(const std::vector<int>& a) {
  int k = 0;
  for (int v : a) {
    require(v >= 0, "labels must be >= 0");
    k = std::max(k, v + 1);
  }
  return k;
}

inline double choose2(double v) { return 0.5 * v * (v - 1.0); }

}  // namespace detail

/// Contingency table: rows index labels of `a`, columns labels of `b`.
inline Matrix contingency(const std::vector<int>& a, const std::vector<int>& b) {
  detail::require(a.size() == b.size(), "labels: length mismatch (" + std::to_string(a.size()) + " vs " +
                                            std::to_string(b.size()) + ")");
  Matrix c = Matrix::Zero(detail::label_count(a), detail::label_count(b));
  for (std::size_t i = 0; i < a.size(); ++i) c(a[i], b[i]) += 1.0;
  return c;
}

inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  const Matrix c = contingency(a, b);
  const double n = static_cast<double>(a.size());
  double index = 0.0;
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < c.cols(); ++j) index += detail::choose2(c(i, j));
  double sa = 0.0, sb = 0.0;
  for (Index i = 0; i < c.rows(); ++i) sa += detail::choose2(c.row(i).sum());
  for (Index j = 0; j < c.cols(); ++j) sb += detail::choose2(c.col(j).sum());
  const double total = detail::choose2(n);
  const double expected = total > 0.0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical
  return (index - expected) / (max_index - expected);
}

/// Minimum-cost assignment on a square cost matrix (Kuhn-Munkres with
/// potentials, O(K^3)). Returns col[row].
inline std::vector<int> solve_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  detail::require(cost.cols() == n, "solve_assignment: cost must be square");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= n; ++j) col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = static_cast<int>(j - 1);
  return col;
}

/// Permutation perm with perm[estimated label] = matched true label, minimising
/// the number of disagreements. A non-square confusion matrix is zero-padded.
inline std::vector<int> hungarian_align(const std::vector<int>& est, const std::vector<int>& truth) {
  const Matrix c = contingency(est, truth);
  const Index k = std::max(c.rows(), c.cols());
  Matrix cost = Matrix::Zero(k, k);
  cost.topLeftCorner(c.rows(), c.cols()) = -c;
  return solve_assignment(cost);
}

inline std::vector<int> apply_permutation(const std::vector<int>& labels, const std::vector<int>& perm) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < perm.size(),
                    "apply_permutation: label out of range");
    out[i] = perm[static_cast<std::size_t>(labels[i])];
  }
  return out;
}

inline int mismatches(const std::vector<int>& a, const std::vector<int>& b) {
  detail::require(a.size() == b.size(), "labels: length mismatch");
  int m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m += a[i] != b[i];
  return m;
}

struct RecoveryCurve {
  std::vector<double> x;  // recall (PR) or false positive rate (ROC)
  std::vector<double> y;  // precision (PR) or true positive rate (ROC)
  double auc = 0.0;
};

struct Recovery {
  RecoveryCurve pr;
  RecoveryCurve roc;
};

namespace detail {

inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double a = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) a += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return a;
}

}  // namespace detail

/// PR and ROC curves from scores (higher = more confidently nonzero), one
/// point per distinct score threshold.
inline Recovery recovery_curves(const std::vector<double>& scores, const std::vector<bool>& truth) {
  detail::require(scores.size() == truth.size(), "recovery: scores and truth differ in length");
  const auto pos = static_cast<double>(std::count(truth.begin(), truth.end(), true));
  const double neg = static_cast<double>(truth.size()) - pos;
  detail::require(pos > 0.0, "recovery: truth pattern has no positives");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  Recovery r;
  r.roc.x.push_back(0.0);
  r.roc.y.push_back(0.0);
  double tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) {
      if (truth[idx[i]]) tp += 1.0; else fp += 1.0;
      ++i;
    }
    const double recall = tp / pos;
    const double precision = tp / (tp + fp);
    if (r.pr.x.empty()) {
      r.pr.x.push_back(0.0);
      r.pr.y.push_back(precision);
    }
    r.pr.x.push_back(recall);
    r.pr.y.push_back(precision);
    r.roc.x.push_back(neg > 0.0 ? fp / neg : 0.0);
    r.roc.y.push_back(recall);
  }
  r.pr.auc = detail::trapezoid(r.pr.x, r.pr.y);
  r.roc.auc = neg > 0.0 ? detail::trapezoid(r.roc.x, r.roc.y) : 1.0;
  return r;
}

/// Scores entries by how early they become nonzero along a path ordered by
/// decreasing penalty: m - t for first activation at step t, 0 if never.
inline std::vector<double> activation_scores(const std::vector<Vector>& path) {
  detail::require(!path.empty(), "activation_scores: empty path");
  const Index d = path.front().size();
  const double m = static_cast<double>(path.size());
  std::vector<double> s(static_cast<std::size_t>(d), 0.0);
  for (std::size_t t = 0; t < path.size(); ++t) {
    detail::require(path[t].size() == d, "activation_scores: inconsistent path");
    for (Index j = 0; j < d; ++j) {
      if (s[static_cast<std::size_t>(j)] == 0.0 && std::abs(path[t](j)) > 1e-8) {
        s[static_cast<std::size_t>(j)] = m - static_cast<double>(t);
      }
    }
  }
  return s;
}

/// Strict upper triangle of a square matrix, row-major.
inline Vector upper_entries(const Matrix& m) {
  const Index p = m.rows();
  Vector out(p * (p - 1) / 2);
  Index t = 0;
  for (Index i = 0; i < p; ++i)
    for (Index j = i + 1; j < p; ++j) out(t++) = m(i, j);
  return out;
}

inline std::vector<bool> nonzero_pattern(const Vector& v) {
  std::vector<bool> out(static_cast<std::size_t>(v.size()));
  for (Index j = 0; j < v.size(); ++j) out[static_cast<std::size_t>(j)] = std::abs(v(j)) > 1e-8;
  return out;
}

/// PR/ROC of a beta path against the true support.
inline Recovery sparsity_recovery(const std::vector<Vector>& path, const std::vector<bool>& truth) {
  return recovery_curves(activation_scores(path), truth);
}

/// PR/ROC of an omega path; only the strict upper triangle is scored.
inline Recovery sparsity_recovery(const std::vector<Matrix>& path, const Matrix& truth_omega) {
  std::vector<Vector> flat;
  flat.reserve(path.size());
  for (const auto& m : path) flat.push_back(upper_entries(m));
  return recovery_curves(activation_scores(flat), nonzero_pattern(upper_entries(truth_omega)));
}

}  // namespace srjm
