#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace srjm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// All recoverable failures of the library surface as this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace detail

/// Feature matrix `x` (n x p) paired row-wise with response `y`.
class Dataset {
 public:
  Dataset(Matrix x, Vector y) : x_(std::move(x)), y_(std::move(y)) {
    detail::require(x_.rows() >= 1 && x_.cols() >= 1, "dataset: need n >= 1 and p >= 1");
    detail::require(y_.size() == x_.rows(),
                    "dataset: y has " + std::to_string(y_.size()) + " rows, x has " +
                        std::to_string(x_.rows()));
    detail::require(detail::all_finite(x_), "dataset: non-finite entry in x");
    detail::require(detail::all_finite(y_), "dataset: non-finite entry in y");
  }

  const Matrix& x() const noexcept { return x_; }
  const Vector& y() const noexcept { return y_; }
  Index n() const noexcept { return x_.rows(); }
  Index p() const noexcept { return x_.cols(); }

  /// Row subset, in the order given.
  Dataset subset(const std::vector<Index>& rows) const {
    Matrix xs(static_cast<Index>(rows.size()), p());
    Vector ys(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      xs.row(static_cast<Index>(i)) = x_.row(rows[i]);
      ys(static_cast<Index>(i)) = y_(rows[i]);
    }
    return Dataset(std::move(xs), std::move(ys));
  }

 private:
  Matrix x_;
  Vector y_;
};

/// Parameters of one latent group: feature model (tau, mu, omega) in the
/// embedding space and regression model (alpha, beta, sigma) in the ambient one.
struct GroupParams {
  double tau = 1.0;
  Vector mu;
  Matrix omega;  // precision
  double alpha = 0.0;
  Vector beta;
  double sigma = 1.0;
};

/// Triangular factor of a precision matrix, omega = factor * factor^T, plus
/// log det(omega).
struct PrecisionFactor {
  Matrix factor;
  bool upper = false;  // lower triangular unless set
  double log_det = 0.0;

  /// Rows of `centered` mapped to factor^T (v - mu), i.e. centered * factor.
  Matrix whiten(const Matrix& centered) const {
    if (upper) return centered * factor.triangularView<Eigen::Upper>();
    return centered * factor.triangularView<Eigen::Lower>();
  }
};

inline PrecisionFactor factor_precision(const Matrix& omega) {
  detail::require(omega.rows() == omega.cols(), "precision not square");
  Eigen::LLT<Matrix> llt(omega);
  if (llt.info() != Eigen::Success) throw Error("precision not positive definite");
  PrecisionFactor f;
  f.factor = llt.matrixL();
  f.log_det = 2.0 * f.factor.diagonal().array().log().sum();
  if (!std::isfinite(f.log_det) || (f.factor.diagonal().array() <= 0.0).any()) {
    throw Error("precision not positive definite");
  }
  return f;
}

/// K groups sharing embedding dimension q and ambient dimension p. The
/// precision factors are computed once at construction; construction is the
/// SPD check.
class MixtureParams {
 public:
  MixtureParams(std::vector<GroupParams> groups, Index embed_dim, Index ambient_dim)
      : MixtureParams(std::move(groups), embed_dim, ambient_dim, {}) {}

  /// `factors`, when non-empty, must satisfy omega_k = F_k F_k^T; they are
  /// used instead of refactoring each omega.
  MixtureParams(std::vector<GroupParams> groups, Index embed_dim, Index ambient_dim,
                std::vector<PrecisionFactor> factors)
      : groups_(std::move(groups)), q_(embed_dim), p_(ambient_dim) {
    detail::require(factors.empty() || factors.size() == groups_.size(),
                    "mixture: one precision factor per group");
    detail::require(!groups_.empty(), "mixture: need K >= 1");
    detail::require(q_ >= 1 && p_ >= 1, "mixture: dimensions must be positive");
    double tau_sum = 0.0;
    factors_.reserve(groups_.size());
    for (std::size_t k = 0; k < groups_.size(); ++k) {
      const auto& g = groups_[k];
      const std::string where = "group " + std::to_string(k) + ": ";
      detail::require(g.mu.size() == q_, where + "mu has wrong dimension");
      detail::require(g.omega.rows() == q_ && g.omega.cols() == q_,
                      where + "omega has wrong dimension");
      detail::require(g.beta.size() == p_, where + "beta has wrong dimension");
      detail::require(g.tau >= 0.0 && g.tau <= 1.0, where + "tau outside [0,1]");
      detail::require(std::isfinite(g.sigma) && g.sigma > 0.0, where + "sigma must be > 0");
      detail::require(std::isfinite(g.alpha) && g.mu.allFinite() && g.beta.allFinite() &&
                          g.omega.allFinite(),
                      where + "non-finite parameter");
      detail::require((g.omega - g.omega.transpose()).cwiseAbs().maxCoeff() <=
                          1e-9 * (1.0 + g.omega.cwiseAbs().maxCoeff()),
                      where + "omega not symmetric");
      if (factors.empty()) {
        factors_.push_back(factor_precision(g.omega));
      } else {
        detail::require(factors[k].factor.rows() == q_ && factors[k].factor.cols() == q_,
                        where + "precision factor has wrong dimension");
        factors_.push_back(std::move(factors[k]));
      }
      tau_sum += g.tau;
    }
    detail::require(std::abs(tau_sum - 1.0) <= 1e-12, "mixture: tau does not sum to 1");
  }

  Index k() const noexcept { return static_cast<Index>(groups_.size()); }
  Index embed_dim() const noexcept { return q_; }
  Index ambient_dim() const noexcept { return p_; }
  const std::vector<GroupParams>& groups() const noexcept { return groups_; }
  const GroupParams& group(Index k) const { return groups_.at(static_cast<std::size_t>(k)); }
  const PrecisionFactor& factor(Index k) const { return factors_.at(static_cast<std::size_t>(k)); }

 private:
  std::vector<GroupParams> groups_;
  std::vector<PrecisionFactor> factors_;
  Index q_;
  Index p_;
};

/// How the feature-model precision is regularised inside the EM.
struct OmegaMode {
  enum class Kind { OAS, NuclearNorm, None };
  Kind kind = Kind::OAS;
  double delta = 0.0;  // NuclearNorm only

  static OmegaMode oas() { return {Kind::OAS, 0.0}; }
  static OmegaMode none() { return {Kind::None, 0.0}; }
  static OmegaMode nuclear_norm(double delta) { return {Kind::NuclearNorm, delta}; }
};

struct PenaltyConfig {
  double rho = 1.0;
  double gamma = 0.0;
  std::vector<double> lambda;  // per group
  double balancing_T = 1.0;
  OmegaMode omega_mode = OmegaMode::oas();

  void validate(Index k) const {
    detail::require(rho >= 0.0, "penalty: rho must be >= 0");
    detail::require(std::isfinite(gamma), "penalty: gamma must be finite");
    detail::require(balancing_T > 0.0 && std::isfinite(balancing_T),
                    "penalty: balancing_T must be > 0");
    detail::require(static_cast<Index>(lambda.size()) == k,
                    "penalty: lambda needs one entry per group");
    for (double l : lambda) detail::require(l >= 0.0 && std::isfinite(l), "penalty: lambda must be >= 0");
    if (omega_mode.kind == OmegaMode::Kind::NuclearNorm) {
      detail::require(omega_mode.delta >= 0.0, "penalty: nuclear-norm delta must be >= 0");
    }
  }
};

/// n x K row-stochastic matrix of posterior group probabilities.
class Responsibilities {
 public:
  explicit Responsibilities(Matrix p) : p_(std::move(p)) {
    detail::require(p_.rows() >= 1 && p_.cols() >= 1, "responsibilities: empty matrix");
    for (Index i = 0; i < p_.rows(); ++i) {
      double s = 0.0;
      for (Index k = 0; k < p_.cols(); ++k) {
        const double v = p_(i, k);
        detail::require(v >= 0.0 && v <= 1.0, "responsibilities: entry outside [0,1] at row " +
                                                   std::to_string(i));
        s += v;
      }
      detail::require(std::abs(s - 1.0) <= 1e-12,
                      "responsibilities: row " + std::to_string(i) + " does not sum to 1");
    }
  }

  const Matrix& matrix() const noexcept { return p_; }
  Index n() const noexcept { return p_.rows(); }
  Index k() const noexcept { return p_.cols(); }
  double group_size(Index k) const { return p_.col(k).sum(); }

  std::vector<int> hard_labels() const {
    std::vector<int> out(static_cast<std::size_t>(p_.rows()));
    for (Index i = 0; i < p_.rows(); ++i) {
      Index best = 0;
      p_.row(i).maxCoeff(&best);
      out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
  }

  static Responsibilities one_hot(const std::vector<int>& labels, Index k, double smoothing = 0.0) {
    Matrix p = Matrix::Constant(static_cast<Index>(labels.size()), k, smoothing / static_cast<double>(k));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      detail::require(labels[i] >= 0 && labels[i] < k, "label out of range");
      p(static_cast<Index>(i), labels[i]) += 1.0 - smoothing;
    }
    return Responsibilities(std::move(p));
  }

 private:
  Matrix p_;
};

}  // namespace srjm
