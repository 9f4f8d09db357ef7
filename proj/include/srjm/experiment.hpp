#pragma once

// Method runner and evaluation shared by the command line and the test
// suites: one method on one dataset, scored against a ground truth.

#include "srjm/baselines.hpp"
#include "srjm/covariance.hpp"
#include "srjm/em.hpp"
#include "srjm/io.hpp"
#include "srjm/lasso.hpp"
#include "srjm/metrics.hpp"
#include "srjm/model_selection.hpp"
#include "srjm/simgen.hpp"
#include "srjm/sparse_final.hpp"
#include "srjm/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace srjm {

struct MethodSpec {
  enum class Kind { RJM, Balanced, Projected, BalancedProjected, KMeans, GaussianMixture, Oracle };

  std::string name;
  Kind kind = Kind::RJM;
  BaselineSpec::Input input = BaselineSpec::Input::XOnly;  // baselines only
  Index k = 0;                 // 0: number of groups of the ground truth
  Index q = 5;                 // projected variants only
  std::optional<double> T;     // overrides the variant default
  bool adaptive = false;       // choose (K, q) by model selection
  SelectionGrid grid;

  bool is_em() const noexcept { return kind <= Kind::BalancedProjected; }
  Variant variant() const {
    detail::require(is_em(), "method '" + name + "' is not an EM variant");
    return static_cast<Variant>(static_cast<int>(kind));
  }
};

inline MethodSpec::Kind parse_method_kind(const std::string& s) {
  if (s == "rjm") return MethodSpec::Kind::RJM;
  if (s == "bal") return MethodSpec::Kind::Balanced;
  if (s == "proj") return MethodSpec::Kind::Projected;
  if (s == "bal-proj") return MethodSpec::Kind::BalancedProjected;
  if (s == "kmeans") return MethodSpec::Kind::KMeans;
  if (s == "mog") return MethodSpec::Kind::GaussianMixture;
  if (s == "oracle") return MethodSpec::Kind::Oracle;
  throw Error("unknown method kind '" + s + "' (expected rjm, bal, proj, bal-proj, kmeans, mog, oracle)");
}

/// Settings shared by every EM method of a run.
struct RunSettings {
  int max_iter = 500;
  double tol_obj = 1e-6;
  double tol_param = 1e-6;
  int restarts = 3;
  bool recovery_beta = true;
  bool recovery_omega = true;
  int beta_path = 30;       // lambda grid size, down to 1e-3 lambda_max
  int omega_path = 12;      // delta grid size, down to 2e-2 delta_max
};

/// EM configuration of an EM method at (k, q).
inline FitConfig method_config(const MethodSpec& m, Index k, Index p, Index q, const RunSettings& s,
                               std::uint64_t seed) {
  FitConfig cfg = variant_config(m.variant(), k, p, q);
  if (m.T) cfg.penalty.balancing_T = *m.T;
  cfg.max_iter = s.max_iter;
  cfg.tol_obj = s.tol_obj;
  cfg.tol_param = s.tol_param;
  cfg.n_restarts = s.restarts;
  cfg.seed = seed;
  return cfg;
}

struct MethodOutcome {
  std::vector<int> labels;
  Index k = 0;
  std::optional<Index> q;
  std::optional<double> T;
  std::optional<FitResult> fit;
  std::optional<SelectionResult> selection;
  double wall_time_seconds = 0.0;
};

/// Runs one method. `truth` is needed only by the oracle and by k = 0.
inline MethodOutcome run_method(const Dataset& data, const MethodSpec& m, const RunSettings& s,
                                std::uint64_t seed, const GroundTruth* truth = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  MethodOutcome out;
  Index k = m.k;
  if (k == 0) {
    detail::require(truth != nullptr, "method '" + m.name + "': K not set and no ground truth available");
    k = truth->k();
  }
  switch (m.kind) {
    case MethodSpec::Kind::KMeans:
    case MethodSpec::Kind::GaussianMixture: {
      BaselineSpec b;
      b.method = m.kind == MethodSpec::Kind::KMeans ? BaselineSpec::Method::KMeans
                                                    : BaselineSpec::Method::GaussianMixture;
      b.input = m.input;
      b.k = k;
      b.seed = seed;
      out.labels = run_baseline(data, b);
      out.k = k;
      break;
    }
    case MethodSpec::Kind::Oracle: {
      detail::require(truth != nullptr, "oracle method needs the ground truth");
      out.labels = oracle_classifier(data, truth->params(), 1.0);
      out.k = truth->k();
      out.T = 1.0;
      break;
    }
    default: {
      const Variant v = m.variant();
      const bool ambient = v == Variant::RJM || v == Variant::Balanced;
      Index q = ambient ? data.p() : m.q;
      if (m.adaptive) {
        const ConfigFactory make = [&](Index kk, Index qq) {
          return method_config(m, kk, data.p(), ambient ? data.p() : qq, s, seed);
        };
        SelectionResult sel = select_k_q(data, m.grid, make, ambient, seed);
        k = sel.chosen_k;
        if (!ambient) q = sel.chosen_q;
        out.selection = std::move(sel);
      }
      const FitConfig cfg = method_config(m, k, data.p(), q, s, seed);
      FitResult fit = fit_em(data, cfg);
      out.labels = fit.hard_labels;
      out.k = k;
      out.q = fit.params.embed_dim();
      out.T = fit.balancing_T;
      out.fit = std::move(fit);
    }
  }
  out.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct RecoveryScores {
  std::optional<Recovery> beta;
  std::optional<Recovery> omega;
};

namespace detail {

/// est labels mapped onto truth labels; estimated groups without a partner
/// get indices >= K_truth.
inline std::vector<int> aligned_labels(const std::vector<int>& est, const std::vector<int>& truth) {
  return apply_permutation(est, hungarian_align(est, truth));
}

inline std::vector<double> log_grid(double top, int count, double ratio) {
  return lambda_grid(std::max(top, 1e-300), count, ratio);
}

}  // namespace detail

/// Sparsity recovery of the final-stage estimators run on `labels`: per
/// truth group, the Lasso path (beta) and graphical-lasso path on the naive
/// covariance (omega) rank entries by activation; scores of all groups are
/// pooled into one PR and one ROC curve.
inline RecoveryScores recovery_from_labels(const Dataset& data, const std::vector<int>& labels,
                                           const GroundTruth& truth, const RunSettings& s) {
  RecoveryScores out;
  if (!s.recovery_beta && !s.recovery_omega) return out;
  const std::vector<int> al = detail::aligned_labels(labels, truth.labels);
  const Index kt = truth.k();
  const Index kall = std::max<Index>(kt, *std::max_element(al.begin(), al.end()) + 1);
  const GroupWeights gw = GroupWeights::hard(al, kall);

  std::vector<double> bs, os;
  std::vector<bool> bt, ot;
  for (Index k = 0; k < kt; ++k) {
    const auto sk = static_cast<std::size_t>(k);
    const double nk = gw.w.col(k).sum();
    if (s.recovery_beta) {
      std::vector<double> sc(static_cast<std::size_t>(data.p()), 0.0);
      if (nk >= 2.0) {
        const double lmax = weighted_lasso_lambda_max(data.x(), data.y(), gw.w.col(k));
        if (lmax > 0.0) sc = activation_scores(final_beta_path(data, gw, k, detail::log_grid(lmax, s.beta_path, 1e-3)));
      }
      bs.insert(bs.end(), sc.begin(), sc.end());
      bt.insert(bt.end(), truth.beta_pattern[sk].begin(), truth.beta_pattern[sk].end());
    }
    if (s.recovery_omega && data.p() >= 2) {
      const std::size_t m = static_cast<std::size_t>(data.p() * (data.p() - 1) / 2);
      std::vector<double> sc(m, 0.0);
      if (nk >= 2.0) {
        const Matrix cov = covariance_naive(data.x(), gw, k);
        const double dmax = upper_entries(cov).cwiseAbs().maxCoeff();
        if (dmax > 0.0) {
          std::vector<Vector> flat;
          for (const Matrix& om : final_omega_path(cov, detail::log_grid(dmax, s.omega_path, 2e-2)))
            flat.push_back(upper_entries(om));
          sc = activation_scores(flat);
        }
      }
      os.insert(os.end(), sc.begin(), sc.end());
      ot.insert(ot.end(), truth.omega_pattern[sk].begin(), truth.omega_pattern[sk].end());
    }
  }
  if (s.recovery_beta && std::count(bt.begin(), bt.end(), true) > 0) out.beta = recovery_curves(bs, bt);
  if (s.recovery_omega && std::count(ot.begin(), ot.end(), true) > 0) out.omega = recovery_curves(os, ot);
  return out;
}

/// Result row of a method run; metrics needing the truth stay empty without it.
inline io::ResultRow make_row(const std::string& method, int replicate, const Dataset& data,
                              const MethodOutcome& o, const GroundTruth* truth, const RunSettings& s) {
  io::ResultRow r;
  r.method = method;
  r.replicate = replicate;
  r.n = data.n();
  r.p = data.p();
  r.q = o.q;
  r.K = o.k;
  r.T = o.T;
  r.wall_time_seconds = o.wall_time_seconds;
  if (o.fit) {
    r.n_iter = o.fit->n_iter;
    r.objective_final = o.fit->objective_trace.back();
  }
  if (truth != nullptr) {
    r.ari = adjusted_rand_index(o.labels, truth->labels);
    const RecoveryScores rec = recovery_from_labels(data, o.labels, *truth, s);
    if (rec.beta) {
      r.pr_auc_beta = rec.beta->pr.auc;
      r.roc_auc_beta = rec.beta->roc.auc;
    }
    if (rec.omega) {
      r.pr_auc_omega = rec.omega->pr.auc;
      r.roc_auc_omega = rec.omega->roc.auc;
    }
  }
  return r;
}

// ---- summaries ----

/// Linear-interpolation quantile of a non-empty sample.
inline double quantile(std::vector<double> v, double prob) {
  detail::require(!v.empty(), "quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

/// {"median", "q25", "q75", "iqr", "count"} of the present values, or null.
inline io::json summarize(const std::vector<std::optional<double>>& vals) {
  std::vector<double> v;
  for (const auto& x : vals)
    if (x) v.push_back(*x);
  if (v.empty()) return nullptr;
  const double q25 = quantile(v, 0.25), q75 = quantile(v, 0.75);
  return {{"median", quantile(v, 0.5)}, {"q25", q25}, {"q75", q75}, {"iqr", q75 - q25}, {"count", v.size()}};
}

inline const std::vector<std::string>& summary_metrics() {
  static const std::vector<std::string> m{"ari", "pr_auc_beta", "pr_auc_omega", "roc_auc_beta", "roc_auc_omega",
                                          "wall_time_seconds", "n_iter", "objective_final"};
  return m;
}

inline std::optional<double> metric_of(const io::ResultRow& r, const std::string& m) {
  if (m == "ari") return r.ari;
  if (m == "pr_auc_beta") return r.pr_auc_beta;
  if (m == "pr_auc_omega") return r.pr_auc_omega;
  if (m == "roc_auc_beta") return r.roc_auc_beta;
  if (m == "roc_auc_omega") return r.roc_auc_omega;
  if (m == "wall_time_seconds") return r.wall_time_seconds;
  if (m == "n_iter") return r.n_iter ? std::optional<double>(*r.n_iter) : std::nullopt;
  if (m == "objective_final") return r.objective_final;
  throw Error("unknown metric '" + m + "'");
}

/// Per-method summaries of a set of rows, methods in first-seen order.
inline io::json summarize_rows(const std::vector<io::ResultRow>& rows) {
  std::vector<std::string> methods;
  for (const auto& r : rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  io::json out = io::json::object();
  for (const auto& m : methods) {
    io::json e = io::json::object();
    int count = 0;
    for (const auto& name : summary_metrics()) {
      std::vector<std::optional<double>> vals;
      for (const auto& r : rows)
        if (r.method == m) vals.push_back(metric_of(r, name));
      count = static_cast<int>(vals.size());
      e[name] = summarize(vals);
    }
    e["rows"] = count;
    out[m] = e;
  }
  return out;
}

}  // namespace srjm
