#pragma once

#include "srjm/types.hpp"

#include <algorithm>

namespace srjm {

struct OasResult {
  double delta_hat = 1.0;
  Matrix sigma_shrunk;
};

/// Oracle-approximating shrinkage of a q x q covariance estimate towards
/// (tr(s)/q) I, with intensity
///   min(1, [(1 - 2/q) tr(s^2) + tr(s)^2] / [(n + 1 - 2/q)(tr(s^2) - tr(s)^2/q)]).
/// A vanishing denominator (s proportional to I) gives full shrinkage.
inline OasResult oas_shrinkage(const Matrix& s, double n_eff) {
  detail::require(s.rows() == s.cols() && s.rows() >= 1, "oas_shrinkage: s must be square");
  detail::require(n_eff > 0.0, "oas_shrinkage: n_eff must be > 0");
  const double q = static_cast<double>(s.rows());
  const double tr = s.trace();
  const double tr2 = s.cwiseProduct(s.transpose()).sum();  // tr(s^2)
  const double num = (1.0 - 2.0 / q) * tr2 + tr * tr;
  const double den = (n_eff + 1.0 - 2.0 / q) * (tr2 - tr * tr / q);
  double delta = 1.0;
  if (den > 0.0) delta = std::clamp(num / den, 0.0, 1.0);

  OasResult r;
  r.delta_hat = delta;
  r.sigma_shrunk = (1.0 - delta) * s;
  r.sigma_shrunk.diagonal().array() += delta * tr / q;
  return r;
}

}  // namespace srjm
