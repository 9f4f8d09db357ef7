#pragma once

// Penalised EM for the regularised joint mixture and its balanced / projected
// variants. One fit is single-threaded and only reads the Dataset.

#include "srjm/baselines.hpp"
#include "srjm/core_model.hpp"
#include "srjm/embedding.hpp"
#include "srjm/lasso.hpp"
#include "srjm/oas.hpp"
#include "srjm/types.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace srjm {

inline constexpr double kEmptyGroup = 1e-8;
inline constexpr double kSigma2Floor = 1e-12;

struct FitConfig {
  enum class Init { KMeansOnEmbedded, RandomResponsibilities };
  enum class LambdaRule { FLassoCV, FLasso, FLassoTracking, Fixed };

  Index k = 2;
  EmbeddingSpec embedding;
  PenaltyConfig penalty;  // penalty.balancing_T is the T of the balanced E-step
  LambdaRule lambda_rule = LambdaRule::FLassoCV;  // Fixed uses penalty.lambda throughout
  int max_iter = 500;
  double tol_obj = 1e-6;
  double tol_param = 1e-6;
  int n_restarts = 3;
  std::uint64_t seed = 0;
  Init init = Init::KMeansOnEmbedded;
  double init_smoothing = 1e-3;
  bool record_responsibilities = false;

  double balancing_T() const noexcept { return penalty.balancing_T; }

  void validate(Index n) const {
    detail::require(k >= 1, "fit: k must be >= 1");
    detail::require(k <= n, "fit: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
    detail::require(max_iter >= 1, "fit: max_iter must be >= 1");
    detail::require(tol_obj > 0.0 && tol_param > 0.0, "fit: tolerances must be > 0");
    detail::require(n_restarts >= 1, "fit: n_restarts must be >= 1");
    detail::require(init_smoothing >= 0.0 && init_smoothing < 1.0, "fit: init_smoothing outside [0,1)");
    detail::require(penalty.rho >= 0.0, "penalty: rho must be >= 0");
    detail::require(penalty.balancing_T > 0.0 && std::isfinite(penalty.balancing_T),
                    "penalty: balancing_T must be > 0");
    if (lambda_rule == LambdaRule::Fixed) penalty.validate(k);
  }
};

/// The four named variants.
enum class Variant { RJM, Balanced, Projected, BalancedProjected };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::RJM: return "rjm";
    case Variant::Balanced: return "bal";
    case Variant::Projected: return "proj";
    case Variant::BalancedProjected: return "bal-proj";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "rjm") return Variant::RJM;
  if (s == "bal") return Variant::Balanced;
  if (s == "proj") return Variant::Projected;
  if (s == "bal-proj") return Variant::BalancedProjected;
  throw Error("unknown variant '" + s + "' (expected rjm, bal, proj, bal-proj)");
}

/// Default configuration of a variant: omega is OAS-shrunk in every variant
/// (the unshrunk MLE goes singular for small groups at larger K); balanced
/// uses T = p, projected runs on PCA(q), balanced-projected uses T = q. gamma = -p makes the sigma update the
/// penalised residual variance over n_k.
inline FitConfig variant_config(Variant v, Index k, Index p, Index q) {
  FitConfig cfg;
  cfg.k = k;
  cfg.penalty.gamma = -static_cast<double>(p);
  switch (v) {
    case Variant::RJM:
      cfg.penalty.balancing_T = 1.0;
      break;
    case Variant::Balanced:
      cfg.penalty.balancing_T = static_cast<double>(p);
      break;
    case Variant::Projected:
      cfg.embedding = EmbeddingSpec::pca(q);
      break;
    case Variant::BalancedProjected:
      cfg.embedding = EmbeddingSpec::pca(q);
      cfg.penalty.balancing_T = static_cast<double>(q);
      break;
  }
  return cfg;
}

struct EStepResult {
  Responsibilities resp;
  double neg_log_lik = 0.0;
};

namespace detail {

inline EStepResult normalize_scores(const Matrix& scores) {
  check_scores(scores);
  Matrix p(scores.rows(), scores.cols());
  double nll = 0.0;
  for (Index i = 0; i < scores.rows(); ++i) {
    const double lse = log_sum_exp(scores.row(i));
    if (!std::isfinite(lse)) throw Error("all components underflow at sample " + std::to_string(i));
    nll -= lse;
    p.row(i) = (scores.row(i).array() - lse).exp();
    p.row(i) /= p.row(i).sum();
  }
  return {Responsibilities(std::move(p)), nll};
}

inline double group_weight(const Responsibilities& resp, Index k) {
  const double nk = resp.group_size(k);
  if (!(nk >= kEmptyGroup)) throw Error("effective group empty (group " + std::to_string(k) + ")");
  return nk;
}

}  // namespace detail

/// Posterior responsibilities together with the observed negative log-likelihood.
inline EStepResult e_step_full(const Dataset& data, const Matrix& embedded, const MixtureParams& params,
                               double T) {
  return detail::normalize_scores(component_log_scores(data, embedded, params, T));
}

inline Responsibilities e_step(const Dataset& data, const Matrix& embedded, const MixtureParams& params,
                               double T) {
  return e_step_full(data, embedded, params, T).resp;
}

/// Weighted Lasso on column k of resp with penalty 2 lambda_k.
inline LassoResult m_step_regression(const Dataset& data, const Responsibilities& resp, Index k,
                                     double lambda_k, const Vector* warm_beta = nullptr) {
  detail::group_weight(resp, k);
  return weighted_lasso(data.x(), data.y(), resp.matrix().col(k), lambda_k, warm_beta);
}

inline double m_step_sigma(const Dataset& data, const Responsibilities& resp, Index k, double alpha,
                           const Vector& beta, double lambda_k, double gamma) {
  const double nk = detail::group_weight(resp, k);
  const double denom = nk + 2.0 * static_cast<double>(data.p()) + 2.0 * gamma;
  if (!(denom > 0.0)) throw Error("gamma too negative");
  Vector r = data.y() - data.x() * beta;
  r.array() -= alpha;
  const double rss = resp.matrix().col(k).dot(r.cwiseProduct(r));
  const double s2 = (rss + 2.0 * lambda_k * beta.lpNorm<1>()) / denom;
  if (!(s2 >= kSigma2Floor)) throw Error("degenerate zero variance (group " + std::to_string(k) + ")");
  return std::sqrt(s2);
}

inline Vector m_step_mu(const Matrix& embedded, const Responsibilities& resp, Index k) {
  const double nk = detail::group_weight(resp, k);
  return (embedded.transpose() * resp.matrix().col(k)) / nk;
}

/// Responsibility-weighted covariance of the embedded rows about mu.
inline Matrix weighted_covariance(const Matrix& embedded, const Responsibilities& resp, Index k,
                                  const Vector& mu) {
  const double nk = detail::group_weight(resp, k);
  const Matrix wd = resp.matrix().col(k).cwiseSqrt().asDiagonal() * (embedded.rowwise() - mu.transpose());
  Matrix s = Matrix::Zero(embedded.cols(), embedded.cols());
  s.selfadjointView<Eigen::Lower>().rankUpdate(wd.transpose(), 1.0 / nk);
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return s;
}

struct OmegaUpdate {
  Matrix omega;
  PrecisionFactor factor;
  double delta_hat = 0.0;  // OAS only
};

/// Inverts a covariance through its Cholesky factor L: omega = L^-T L^-1, so
/// L^-T is an upper-triangular factor of omega.
inline OmegaUpdate invert_covariance(const Matrix& cov, const char* what) {
  const Index q = cov.rows();
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw Error(what);
  const Matrix l = llt.matrixL();
  if ((l.diagonal().array() <= 0.0).any() || !l.allFinite()) throw Error(what);
  const Matrix linv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(q, q));
  OmegaUpdate out;
  out.omega = linv.transpose() * linv;
  out.omega = 0.5 * (out.omega + out.omega.transpose()).eval();
  out.factor.factor = linv.transpose();
  out.factor.upper = true;
  out.factor.log_det = -2.0 * l.diagonal().array().log().sum();
  if (!out.omega.allFinite() || !std::isfinite(out.factor.log_det)) throw Error(what);
  return out;
}

inline OmegaUpdate m_step_omega_full(const Matrix& embedded, const Responsibilities& resp, Index k,
                                     const Vector& mu, const OmegaMode& mode) {
  const double nk = detail::group_weight(resp, k);
  const Matrix s = weighted_covariance(embedded, resp, k, mu);
  switch (mode.kind) {
    case OmegaMode::Kind::OAS: {
      const auto o = oas_shrinkage(s, nk);
      auto out = invert_covariance(o.sigma_shrunk, "singular covariance after shrinkage");
      out.delta_hat = o.delta_hat;
      return out;
    }
    case OmegaMode::Kind::None:
      return invert_covariance(s, "singular covariance");
    case OmegaMode::Kind::NuclearNorm: {
      // stationary point of n_k/2 [tr(S omega) - ln det omega] + delta/2 tr(omega)
      Matrix c = s;
      c.diagonal().array() += mode.delta / nk;
      return invert_covariance(c, "singular covariance");
    }
  }
  throw Error("unknown omega mode");
}

inline Matrix m_step_omega(const Matrix& embedded, const Responsibilities& resp, Index k, const Vector& mu,
                           const OmegaMode& mode) {
  return m_step_omega_full(embedded, resp, k, mu, mode).omega;
}

inline Vector m_step_tau(const Responsibilities& resp, double rho) {
  detail::require(rho >= 0.0, "rho must be >= 0");
  const double n = static_cast<double>(resp.n());
  const double kk = static_cast<double>(resp.k());
  Vector tau = (resp.matrix().colwise().sum().transpose().array() + rho) / (n + kk * rho);
  return tau;
}

/// Full M-step. `lambda` holds one value per group; `warm` seeds the Lasso.
/// The output does not depend on the balancing T.
inline MixtureParams m_step(const Dataset& data, const Matrix& embedded, const Responsibilities& resp,
                            const std::vector<double>& lambda, const PenaltyConfig& pen,
                            const MixtureParams* warm = nullptr) {
  const Index kk = resp.k();
  detail::require(static_cast<Index>(lambda.size()) == kk, "m_step: lambda needs one entry per group");
  detail::require(resp.n() == data.n() && embedded.rows() == data.n(), "m_step: row count mismatch");
  const Vector tau = m_step_tau(resp, pen.rho);
  std::vector<GroupParams> groups(static_cast<std::size_t>(kk));
  std::vector<PrecisionFactor> factors(static_cast<std::size_t>(kk));
  for (Index k = 0; k < kk; ++k) {
    auto& g = groups[static_cast<std::size_t>(k)];
    const double lk = lambda[static_cast<std::size_t>(k)];
    const Vector* wb = warm != nullptr ? &warm->group(k).beta : nullptr;
    auto reg = m_step_regression(data, resp, k, lk, wb);
    g.alpha = reg.alpha;
    g.beta = std::move(reg.beta);
    g.sigma = m_step_sigma(data, resp, k, g.alpha, g.beta, lk, pen.gamma);
    g.mu = m_step_mu(embedded, resp, k);
    auto om = m_step_omega_full(embedded, resp, k, g.mu, pen.omega_mode);
    g.omega = std::move(om.omega);
    factors[static_cast<std::size_t>(k)] = std::move(om.factor);
    g.tau = tau(k);
  }
  // tau sums to 1 up to rounding; renormalise the last entry
  double partial = 0.0;
  for (Index k = 0; k + 1 < kk; ++k) partial += groups[static_cast<std::size_t>(k)].tau;
  groups.back().tau = std::max(0.0, 1.0 - partial);
  return MixtureParams(std::move(groups), embedded.cols(), data.p(), std::move(factors));
}

/// Per-group Lasso penalty: n/K until the hard classification first repeats.
/// Universal then freezes lambda_k = sigma_k sqrt(n_k ln p); Tracking
/// re-evaluates that value at every later iteration. CrossValidated sets
/// lambda_k to the weighted 5-fold CV Lasso penalty of group k, and tunes
/// again whenever the classification settles on a partition that differs from
/// the last tuned one in more than 1% of the points; between those events
/// lambda is fixed.
class FLassoSchedule {
 public:
  enum class After { Universal, Tracking, CrossValidated };

  FLassoSchedule(Index n, Index k, After after = After::Universal, std::uint64_t seed = 0)
      : lambda_(static_cast<std::size_t>(k), static_cast<double>(n) / static_cast<double>(k)),
        after_(after),
        seed_(seed) {}

  const std::vector<double>& lambda() const noexcept { return lambda_; }
  bool triggered() const noexcept { return triggered_; }
  bool frozen() const noexcept { return triggered_ && after_ != After::Tracking; }

  /// Returns true on the iteration where the trigger fires.
  bool observe(bool classification_unchanged, const Dataset& data, const MixtureParams& params,
               const Responsibilities& resp) {
    if (!triggered_) {
      if (!classification_unchanged) return false;
      triggered_ = true;
      if (after_ == After::CrossValidated) {
        cross_validate(data, resp);
      } else {
        assign(params, resp);
      }
      return true;
    }
    if (after_ == After::Tracking) assign(params, resp);
    if (after_ == After::CrossValidated && classification_unchanged) {
      const auto labels = resp.hard_labels();
      std::size_t moved = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) moved += labels[i] != tuned_on_[i];
      if (100 * moved > labels.size()) {
        cross_validate(data, resp);
        return true;
      }
    }
    return false;
  }


  static double frozen_value(double sigma, double n_k, double log_p) {
    return sigma * std::sqrt(std::max(0.0, n_k * log_p));
  }

  static constexpr int kFolds = 5;

 private:
  void assign(const MixtureParams& params, const Responsibilities& resp) {
    const double lp = std::log(static_cast<double>(params.ambient_dim()));
    for (Index k = 0; k < params.k(); ++k) {
      lambda_[static_cast<std::size_t>(k)] = frozen_value(params.group(k).sigma, resp.group_size(k), lp);
    }
  }

  void cross_validate(const Dataset& data, const Responsibilities& resp) {
    tuned_on_ = resp.hard_labels();
    const int folds = static_cast<int>(std::min<Index>(kFolds, data.n()));
    for (Index k = 0; k < resp.k(); ++k) {
      const Vector w = resp.matrix().col(k);
      lambda_[static_cast<std::size_t>(k)] =
          weighted_lasso_cv(data.x(), data.y(), w, folds, seed_ + static_cast<std::uint64_t>(k)).best_lambda;
    }
  }

  std::vector<double> lambda_;
  After after_;
  std::uint64_t seed_;
  std::vector<int> tuned_on_;
  bool triggered_ = false;
};

struct FitResult {
  FitResult(MixtureParams p, Responsibilities r) : params(std::move(p)), resp(std::move(r)) {}

  MixtureParams params;
  Responsibilities resp;
  std::vector<int> hard_labels;
  std::vector<double> objective_trace;  // entry t: objective after the t-th M-step
  int n_iter = 0;
  bool converged = false;
  double wall_time_seconds = 0.0;
  std::vector<double> lambda;  // at the end of the run
  bool lambda_frozen = false;
  Matrix embedded;
  double balancing_T = 1.0;
  int restart = 0;  // index of the winning restart
  int failed_restarts = 0;
  std::vector<Matrix> resp_trace;  // responsibilities fed to each M-step, when recorded
};

namespace detail {

inline double block_shift(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-8);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Largest relative sup-norm change over the parameter blocks.
inline double param_shift(const MixtureParams& a, const MixtureParams& b) {
  const Index kk = a.k();
  Vector tau_a(kk), tau_b(kk), al_a(kk), al_b(kk), s_a(kk), s_b(kk);
  double worst = 0.0;
  Matrix mu_a(a.embed_dim(), kk), mu_b(a.embed_dim(), kk);
  Matrix be_a(a.ambient_dim(), kk), be_b(a.ambient_dim(), kk);
  for (Index k = 0; k < kk; ++k) {
    const auto& ga = a.group(k);
    const auto& gb = b.group(k);
    tau_a(k) = ga.tau;
    tau_b(k) = gb.tau;
    al_a(k) = ga.alpha;
    al_b(k) = gb.alpha;
    s_a(k) = ga.sigma;
    s_b(k) = gb.sigma;
    mu_a.col(k) = ga.mu;
    mu_b.col(k) = gb.mu;
    be_a.col(k) = ga.beta;
    be_b.col(k) = gb.beta;
    worst = std::max(worst, block_shift(ga.omega, gb.omega));
  }
  worst = std::max(worst, block_shift(tau_a, tau_b));
  worst = std::max(worst, block_shift(al_a, al_b));
  worst = std::max(worst, block_shift(s_a, s_b));
  worst = std::max(worst, block_shift(mu_a, mu_b));
  worst = std::max(worst, block_shift(be_a, be_b));
  return worst;
}

inline Responsibilities dirichlet_responsibilities(Index n, Index k, std::mt19937_64& rng) {
  std::exponential_distribution<double> ex(1.0);
  Matrix p(n, k);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < k; ++c) p(i, c) = ex(rng) + 1e-300;
    p.row(i) /= p.row(i).sum();
  }
  return Responsibilities(std::move(p));
}

inline Responsibilities initial_responsibilities(const Matrix& embedded, const FitConfig& cfg,
                                                 std::uint64_t seed) {
  if (cfg.k == 1) return Responsibilities(Matrix::Ones(embedded.rows(), 1));
  if (cfg.init == FitConfig::Init::RandomResponsibilities) {
    std::mt19937_64 rng(seed);
    return dirichlet_responsibilities(embedded.rows(), cfg.k, rng);
  }
  const auto km = kmeans(embedded, cfg.k, 10, 300, seed);
  return Responsibilities::one_hot(km.labels, cfg.k, cfg.init_smoothing);
}

inline FLassoSchedule::After schedule_mode(FitConfig::LambdaRule r) {
  switch (r) {
    case FitConfig::LambdaRule::FLasso: return FLassoSchedule::After::Universal;
    case FitConfig::LambdaRule::FLassoTracking: return FLassoSchedule::After::Tracking;
    default: return FLassoSchedule::After::CrossValidated;
  }
}

}  // namespace detail

/// Runs the EM from the given starting responsibilities (one restart).
/// `fixed_lambda`, when set, replaces the FLasso schedule.
inline FitResult fit_from_responsibilities(const Dataset& data, const Matrix& embedded,
                                           const Responsibilities& init, const FitConfig& cfg,
                                           const std::vector<double>* fixed_lambda = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const Index n = data.n();
  const Index kk = init.k();
  detail::require(init.n() == n && embedded.rows() == n, "fit: row count mismatch");
  const double T = cfg.balancing_T();
  PenaltyConfig pen = cfg.penalty;

  FLassoSchedule schedule(n, kk, detail::schedule_mode(cfg.lambda_rule), cfg.seed);
  auto current_lambda = [&]() -> const std::vector<double>& {
    return fixed_lambda != nullptr ? *fixed_lambda : schedule.lambda();
  };
  auto objective = [&](const MixtureParams& th, double nll) {
    pen.lambda = current_lambda();
    return nll + penalty_value(th, pen);
  };

  std::vector<Matrix> resp_trace;
  if (cfg.record_responsibilities) resp_trace.push_back(init.matrix());
  MixtureParams theta = m_step(data, embedded, init, current_lambda(), pen);
  EStepResult est = e_step_full(data, embedded, theta, T);
  std::vector<double> trace{objective(theta, est.neg_log_lik)};
  std::vector<int> prev_labels = init.hard_labels();

  bool converged = false;
  int it = 0;
  while (it < cfg.max_iter) {
    ++it;
    const std::vector<int> labels = est.resp.hard_labels();
    bool reset = false;
    double lambda_shift = 0.0;
    if (fixed_lambda == nullptr) {
      const std::vector<double> before = schedule.lambda();
      reset = schedule.observe(labels == prev_labels, data, theta, est.resp);
      for (std::size_t k = 0; k < before.size(); ++k)
        lambda_shift = std::max(lambda_shift, std::abs(schedule.lambda()[k] - before[k]) / std::max(before[k], 1e-300));
    }
    if (cfg.record_responsibilities) resp_trace.push_back(est.resp.matrix());
    MixtureParams next = m_step(data, embedded, est.resp, current_lambda(), pen, &theta);
    EStepResult next_est = e_step_full(data, embedded, next, T);
    const double obj = objective(next, next_est.neg_log_lik);
    const double prev_obj = trace.back();
    trace.push_back(obj);
    const double obj_shift = std::abs(obj - prev_obj) / std::max(std::abs(obj), 1e-300);
    const double par_shift = std::max(detail::param_shift(theta, next), lambda_shift);
    theta = std::move(next);
    est = std::move(next_est);
    prev_labels = labels;
    if (!reset && obj_shift < cfg.tol_obj && par_shift < cfg.tol_param) {
      converged = true;
      break;
    }
  }

  FitResult res(std::move(theta), std::move(est.resp));
  res.hard_labels = res.resp.hard_labels();
  res.objective_trace = std::move(trace);
  res.n_iter = it;
  res.converged = converged;
  res.lambda = current_lambda();
  res.lambda_frozen = fixed_lambda != nullptr || schedule.frozen();
  res.embedded = embedded;
  res.balancing_T = T;
  res.resp_trace = std::move(resp_trace);
  res.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Penalised EM with restarts; the restart with the smallest final objective wins.
inline FitResult fit_em(const Dataset& data, const FitConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate(data.n());
  const Matrix embedded = embedded_features(data.x(), cfg.embedding);
  const std::vector<double>* fixed =
      cfg.lambda_rule == FitConfig::LambdaRule::Fixed ? &cfg.penalty.lambda : nullptr;

  std::optional<FitResult> best;
  int failed = 0;
  std::string last_error;
  for (int r = 0; r < cfg.n_restarts; ++r) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
    try {
      const Responsibilities init = detail::initial_responsibilities(embedded, cfg, seed);
      FitResult cur = fit_from_responsibilities(data, embedded, init, cfg, fixed);
      cur.restart = r;
      if (!best || cur.objective_trace.back() < best->objective_trace.back()) best = std::move(cur);
    } catch (const Error& e) {
      ++failed;
      last_error = e.what();
    }
  }
  if (!best) {
    throw Error("all " + std::to_string(cfg.n_restarts) + " restarts failed; last error: " + last_error);
  }
  best->failed_restarts = failed;
  best->wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return std::move(*best);
}

}  // namespace srjm
