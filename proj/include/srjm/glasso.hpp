#pragma once

// Graphical lasso by block coordinate descent on the covariance W, with an
// inner coordinate-descent Lasso per column:
//   min_omega  tr(S omega) - ln det omega + delta * sum_{j != l} |omega_jl|

#include "srjm/lasso.hpp"
#include "srjm/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace srjm {

struct GlassoOptions {
  double gap_tol = 1e-4;
  int max_sweeps = 200;
  double inner_tol = 1e-10;
  int max_inner = 10000;
  bool penalize_diagonal = false;
};

struct GlassoResult {
  Matrix omega;
  Matrix w;  // estimated covariance, ~ omega^-1
  double gap = 0.0;
  int sweeps = 0;
};

/// Primal objective with the off-diagonal (or full, when penalize_diagonal) l1 term.
inline double glasso_objective(const Matrix& s, const Matrix& omega, double delta,
                               bool penalize_diagonal = false) {
  Eigen::LLT<Matrix> llt(omega);
  if (llt.info() != Eigen::Success) throw Error("glasso_objective: omega not positive definite");
  const double log_det = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  double l1 = omega.cwiseAbs().sum();
  if (!penalize_diagonal) l1 -= omega.diagonal().cwiseAbs().sum();
  return (s.cwiseProduct(omega)).sum() - log_det + delta * l1;
}

/// Primal objective at omega minus the dual value ln det W + p, with W first
/// clipped into the feasible box |W - S| <= delta. Infinite when either matrix
/// is not positive definite.
inline double glasso_gap(const Matrix& s, const Matrix& omega, const Matrix& w, double delta,
                         bool penalize_diagonal) {
  const Index p = s.rows();
  Matrix feasible = s;
  for (Index j = 0; j < p; ++j)
    for (Index l = 0; l < p; ++l) {
      if (l == j) {
        feasible(j, j) = s(j, j) + (penalize_diagonal ? delta : 0.0);
      } else {
        feasible(l, j) = s(l, j) + std::clamp(w(l, j) - s(l, j), -delta, delta);
      }
    }
  Eigen::LLT<Matrix> lw(feasible), lo(omega);
  if (lw.info() != Eigen::Success || lo.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const double ld_w = 2.0 * Matrix(lw.matrixL()).diagonal().array().log().sum();
  return glasso_objective(s, omega, delta, penalize_diagonal) - ld_w - static_cast<double>(p);
}

inline GlassoResult graphical_lasso_full(const Matrix& s, double delta, const GlassoOptions& opts = {}) {
  const Index p = s.rows();
  detail::require(s.cols() == p && p >= 1, "graphical_lasso: s must be square");
  detail::require(s.allFinite() && std::isfinite(delta), "graphical_lasso: non-finite input");
  detail::require(delta >= 0.0, "graphical_lasso: delta must be >= 0");
  detail::require((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + s.cwiseAbs().maxCoeff()),
                  "graphical_lasso: s not symmetric");
  detail::require((s.diagonal().array() > 0.0).all(), "graphical_lasso: diagonal must be > 0");

  const double diag_shift = opts.penalize_diagonal ? delta : 0.0;
  Matrix w = s;
  w.diagonal().array() += diag_shift;
  Matrix b = Matrix::Zero(p, p);  // column j: regression of j on the rest

  auto assemble = [&]() {
    Matrix omega = Matrix::Zero(p, p);
    for (Index j = 0; j < p; ++j) {
      double dot = 0.0;
      for (Index l = 0; l < p; ++l)
        if (l != j) dot += w(l, j) * b(l, j);
      const double theta = 1.0 / (w(j, j) - dot);
      omega(j, j) = theta;
      for (Index l = 0; l < p; ++l)
        if (l != j) omega(l, j) = -b(l, j) * theta;
    }
    return Matrix(0.5 * (omega + omega.transpose()));
  };

  GlassoResult res;
  if (p == 1) {
    res.omega = Matrix::Constant(1, 1, 1.0 / w(0, 0));
    res.w = w;
    res.gap = glasso_gap(s, res.omega, w, delta, opts.penalize_diagonal);
    return res;
  }

  Vector wb(p);
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    for (Index j = 0; j < p; ++j) {
      // min_b 1/2 b^T W11 b - s12^T b + delta |b|_1, over rows l != j
      auto bj = b.col(j);
      wb.setZero();
      for (Index l = 0; l < p; ++l)
        if (l != j && bj(l) != 0.0) wb += w.col(l) * bj(l);
      for (int inner = 0; inner < opts.max_inner; ++inner) {
        double max_move = 0.0;
        for (Index l = 0; l < p; ++l) {
          if (l == j) continue;
          const double old = bj(l);
          const double r = s(l, j) - (wb(l) - w(l, l) * old);
          const double nb = detail::soft_threshold(r, delta) / w(l, l);
          const double d = nb - old;
          if (d != 0.0) {
            bj(l) = nb;
            wb += w.col(l) * d;
            max_move = std::max(max_move, std::abs(d) * w(l, l));
          }
        }
        if (max_move < opts.inner_tol) break;
      }
      for (Index l = 0; l < p; ++l) {
        if (l == j) continue;
        w(l, j) = wb(l);
        w(j, l) = wb(l);
      }
    }
    res.omega = assemble();
    res.sweeps = sweep;
    res.gap = glasso_gap(s, res.omega, w, delta, opts.penalize_diagonal);
    if (res.gap <= opts.gap_tol) {
      res.w = w;
      return res;
    }
  }
  throw Error("graphical_lasso: no convergence after " + std::to_string(opts.max_sweeps) +
              " sweeps, duality gap " + std::to_string(res.gap));
}

inline Matrix graphical_lasso(const Matrix& s, double delta, const GlassoOptions& opts = {}) {
  return graphical_lasso_full(s, delta, opts).omega;
}

}  // namespace srjm
