#pragma once

// One final estimation step in the ambient space: per group, a weighted
// Lasso for beta and a graphical lasso for omega.

#include "srjm/covariance.hpp"
#include "srjm/glasso.hpp"
#include "srjm/lasso.hpp"
#include "srjm/types.hpp"

#include <string>
#include <vector>

namespace srjm {

inline constexpr double kPatternThreshold = 1e-8;

struct FinalGroupEstimate {
  double alpha = 0.0;
  Vector beta;
  Matrix omega;
};

struct SparseEstimates {
  std::vector<FinalGroupEstimate> groups;

  /// Indices of beta entries with |value| > 1e-8.
  static std::vector<bool> beta_pattern(const Vector& beta) {
    std::vector<bool> out(static_cast<std::size_t>(beta.size()));
    for (Index j = 0; j < beta.size(); ++j) out[static_cast<std::size_t>(j)] = std::abs(beta(j)) > kPatternThreshold;
    return out;
  }
};

struct FinalConfig {
  enum class Covariance { Naive, Nonparanormal, Mixed };
  std::vector<double> lambda;  // per group
  std::vector<double> delta;   // per group
  Covariance covariance = Covariance::Naive;
  std::vector<bool> binary_mask;  // Mixed only
  GlassoOptions glasso;
};

inline LassoResult final_beta(const Dataset& data, const GroupWeights& gw, Index k, double lambda_k) {
  detail::require(gw.n() == data.n(), "final_beta: row count mismatch");
  detail::require(gw.w.col(k).sum() >= 1e-8, "final_beta: effective group empty (group " + std::to_string(k) + ")");
  return weighted_lasso(data.x(), data.y(), gw.w.col(k), lambda_k);
}

inline Matrix final_covariance(const Dataset& data, const GroupWeights& gw, Index k, const FinalConfig& cfg) {
  switch (cfg.covariance) {
    case FinalConfig::Covariance::Naive:
      return covariance_naive(data.x(), gw, k);
    case FinalConfig::Covariance::Nonparanormal:
      return covariance_nonparanormal(data.x(), gw, k);
    case FinalConfig::Covariance::Mixed:
      return covariance_mixed(data.x(), gw, k, cfg.binary_mask);
  }
  throw Error("unknown covariance estimator");
}

/// Groups are estimated independently of one another.
inline SparseEstimates estimate_final(const Dataset& data, const GroupWeights& gw, const FinalConfig& cfg) {
  const Index kk = gw.k();
  detail::require(static_cast<Index>(cfg.lambda.size()) == kk, "estimate_final: lambda needs one entry per group");
  detail::require(static_cast<Index>(cfg.delta.size()) == kk, "estimate_final: delta needs one entry per group");
  SparseEstimates out;
  out.groups.resize(static_cast<std::size_t>(kk));
  for (Index k = 0; k < kk; ++k) {
    try {
      auto& g = out.groups[static_cast<std::size_t>(k)];
      auto reg = final_beta(data, gw, k, cfg.lambda[static_cast<std::size_t>(k)]);
      g.alpha = reg.alpha;
      g.beta = std::move(reg.beta);
      const Matrix s = final_covariance(data, gw, k, cfg);
      g.omega = graphical_lasso(s, cfg.delta[static_cast<std::size_t>(k)], cfg.glasso);
    } catch (const Error& e) {
      throw Error("group " + std::to_string(k) + ": " + e.what());
    }
  }
  return out;
}

/// Lasso path of one group on a decreasing lambda grid, for recovery curves.
inline std::vector<Vector> final_beta_path(const Dataset& data, const GroupWeights& gw, Index k,
                                           const std::vector<double>& lambdas) {
  const auto path = weighted_lasso_path(data.x(), data.y(), gw.w.col(k), lambdas);
  std::vector<Vector> out;
  out.reserve(path.size());
  for (const auto& r : path) out.push_back(r.beta);
  return out;
}

/// Graphical lasso path on a decreasing delta grid.
inline std::vector<Matrix> final_omega_path(const Matrix& s, const std::vector<double>& deltas,
                                            const GlassoOptions& opts = {}) {
  std::vector<Matrix> out;
  out.reserve(deltas.size());
  for (double d : deltas) out.push_back(graphical_lasso(s, d, opts));
  return out;
}

}  // namespace srjm
