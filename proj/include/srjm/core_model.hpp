#pragma once

// Log-densities, observed likelihood and penalty of the joint mixture.

#include "srjm/types.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace srjm {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// ln N(v; mean, precision^-1).
inline double gaussian_logpdf(const Vector& v, const Vector& mean, const Matrix& precision) {
  detail::require(v.size() == mean.size() && precision.rows() == v.size(),
                  "gaussian_logpdf: dimension mismatch");
  const PrecisionFactor f = factor_precision(precision);
  const Vector z = f.factor.transpose() * (v - mean);
  const double d = static_cast<double>(v.size());
  return 0.5 * f.log_det - 0.5 * d * kLog2Pi - 0.5 * z.squaredNorm();
}

/// ln N(y; m, sigma^2) for a scalar.
inline double normal_logpdf(double y, double m, double sigma) {
  const double r = (y - m) / sigma;
  return -0.5 * kLog2Pi - std::log(sigma) - 0.5 * r * r;
}

/// Per-sample, per-group feature log-density ln phi_q(e(x_i); mu_k, omega_k^-1)
/// for every row of `embedded`.
inline Vector feature_logpdf(const Matrix& embedded, const MixtureParams& params, Index k) {
  const auto& g = params.group(k);
  const auto& f = params.factor(k);
  const double q = static_cast<double>(params.embed_dim());
  const Matrix z = f.whiten(embedded.rowwise() - g.mu.transpose());
  Vector out = z.rowwise().squaredNorm();
  out = (-0.5 * out).array() + (0.5 * f.log_det - 0.5 * q * kLog2Pi);
  return out;
}

/// Per-sample regression log-density ln phi_1(y_i; alpha_k + beta_k^T x_i, sigma_k^2).
inline Vector response_logpdf(const Dataset& data, const MixtureParams& params, Index k) {
  const auto& g = params.group(k);
  Vector r = data.y() - data.x() * g.beta;
  r.array() -= g.alpha;
  const double s = g.sigma;
  return (-0.5 * kLog2Pi - std::log(s) - 0.5 * (r.array() / s).square()).matrix();
}

/// n x K matrix of ln phi_1(y) + (1/T) ln phi_q(e(x)) + ln tau_k.
inline Matrix component_log_scores(const Dataset& data, const Matrix& embedded,
                                   const MixtureParams& params, double T) {
  detail::require(T > 0.0, "balancing T must be > 0");
  detail::require(embedded.rows() == data.n(), "embedded row count does not match data");
  detail::require(embedded.cols() == params.embed_dim(),
                  "embedded has " + std::to_string(embedded.cols()) + " columns, params expect " +
                      std::to_string(params.embed_dim()));
  detail::require(data.p() == params.ambient_dim(), "data dimension does not match params");
  Matrix scores(data.n(), params.k());
  for (Index k = 0; k < params.k(); ++k) {
    const double log_tau = std::log(params.group(k).tau);
    scores.col(k) = response_logpdf(data, params, k) + feature_logpdf(embedded, params, k) / T;
    scores.col(k).array() += log_tau;
  }
  return scores;
}

/// ln sum_k exp(row_k), stable.
inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log((row.array() - m).exp().sum());
}

namespace detail {

inline void check_scores(const Matrix& scores) {
  for (Index i = 0; i < scores.rows(); ++i) {
    for (Index k = 0; k < scores.cols(); ++k) {
      const double v = scores(i, k);
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw Error("non-finite log-density at sample " + std::to_string(i));
      }
    }
  }
}

}  // namespace detail

/// -sum_i ln sum_k exp(component_log_scores).
inline double observed_neg_log_likelihood(const Dataset& data, const Matrix& embedded,
                                          const MixtureParams& params, double T) {
  const Matrix scores = component_log_scores(data, embedded, params, T);
  detail::check_scores(scores);
  double total = 0.0;
  for (Index i = 0; i < scores.rows(); ++i) {
    const double l = log_sum_exp(scores.row(i));
    if (!std::isfinite(l)) throw Error("non-finite likelihood at sample " + std::to_string(i));
    total -= l;
  }
  return total;
}

/// sum_k [ lambda_k / sigma_k^2 |beta_k|_1 + (p + gamma) ln sigma_k^2 - rho ln tau_k ]
/// plus (1/T) delta/2 tr(omega_k) under the nuclear-norm mode.
inline double penalty_value(const MixtureParams& params, const PenaltyConfig& cfg) {
  cfg.validate(params.k());
  const double p = static_cast<double>(params.ambient_dim());
  double total = 0.0;
  for (Index k = 0; k < params.k(); ++k) {
    const auto& g = params.group(k);
    const double s2 = g.sigma * g.sigma;
    total += cfg.lambda[static_cast<std::size_t>(k)] / s2 * g.beta.lpNorm<1>();
    total += (p + cfg.gamma) * std::log(s2);
    if (cfg.rho > 0.0) {
      if (g.tau <= 0.0) throw Error("vanished component");
      total -= cfg.rho * std::log(g.tau);
    }
    if (cfg.omega_mode.kind == OmegaMode::Kind::NuclearNorm) {
      total += 0.5 * cfg.omega_mode.delta * g.omega.trace() / cfg.balancing_T;
    }
  }
  return total;
}

/// Penalised EM objective: observed negative log-likelihood plus penalty.
inline double em_objective(const Dataset& data, const Matrix& embedded,
                           const MixtureParams& params, const PenaltyConfig& cfg) {
  return observed_neg_log_likelihood(data, embedded, params, cfg.balancing_T) +
         penalty_value(params, cfg);
}

}  // namespace srjm
