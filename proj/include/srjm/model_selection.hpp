#pragma once

// Choice of the number of groups K and embedding dimension q: information
// criteria per K, then subsample stability across q.

#include "srjm/em.hpp"
#include "srjm/metrics.hpp"
#include "srjm/parallel.hpp"
#include "srjm/simgen.hpp"
#include "srjm/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace srjm {

enum class Criterion { AIC, BIC };

inline Criterion parse_criterion(const std::string& s) {
  if (s == "aic") return Criterion::AIC;
  if (s == "bic") return Criterion::BIC;
  throw Error("unknown information criterion '" + s + "' (expected aic or bic)");
}

/// K (3 + p + q (q + 3) / 2); q (q + 3) is always even.
inline long long degrees_of_freedom(long long k, long long p, long long q) {
  detail::require(k >= 1 && p >= 1 && q >= 1, "degrees_of_freedom: k, p, q must be >= 1");
  return k * (3 + p + q * (q + 3) / 2);
}

/// -2 lnL + 2 eta df (AIC) or -2 lnL + eta df ln n (BIC).
inline double information_criterion(double log_lik, long long df, Index n, Criterion ic, double eta) {
  detail::require(eta >= 0.0, "information criterion: eta must be >= 0");
  const double d = static_cast<double>(df);
  if (ic == Criterion::AIC) return -2.0 * log_lik + 2.0 * eta * d;
  return -2.0 * log_lik + eta * d * std::log(static_cast<double>(n));
}

/// Criterion of a fit, on the unpenalised likelihood of the fitted variant
/// (its own embedding and T).
inline double information_criterion(const FitResult& fit, const Dataset& data, Criterion ic, double eta) {
  const double ll = -observed_neg_log_likelihood(data, fit.embedded, fit.params, fit.balancing_T);
  const long long df = degrees_of_freedom(fit.params.k(), fit.params.ambient_dim(), fit.params.embed_dim());
  return information_criterion(ll, df, data.n(), ic, eta);
}

struct SelectionGrid {
  std::vector<Index> k_candidates{1, 2, 3, 4, 5};
  std::vector<Index> q_candidates{2, 5, 10};  // ignored for ambient variants
  Criterion ic = Criterion::AIC;
  double eta = 1.0;
  int n_folds = 5;
  double fold_fraction = 0.75;
  unsigned jobs = 1;

  void validate() const {
    detail::require(!k_candidates.empty() && !q_candidates.empty(), "selection grid: empty candidate list");
    for (Index k : k_candidates) detail::require(k >= 1, "selection grid: K candidates must be >= 1");
    for (Index q : q_candidates) detail::require(q >= 1, "selection grid: q candidates must be >= 1");
    detail::require(eta >= 0.0, "selection grid: eta must be >= 0");
    detail::require(n_folds >= 2, "selection grid: need at least 2 folds");
    detail::require(fold_fraction > 0.0 && fold_fraction <= 1.0, "selection grid: fold_fraction outside (0,1]");
  }
};

struct StabilityResult {
  double score = 0.0;
  std::vector<double> pair_ari;            // NaN for excluded pairs
  std::vector<std::vector<Index>> fold_rows;
  std::vector<std::vector<int>> fold_labels;  // empty when the fold fit failed
};

/// Any function mapping a dataset to hard labels.
using Clusterer = std::function<std::vector<int>(const Dataset&, std::uint64_t seed)>;

/// Mean pairwise ARI between fold fits, each pair compared on shared samples.
inline StabilityResult stability_score(const Dataset& data, const Clusterer& cluster, std::uint64_t seed,
                                       int n_folds = 5, double fold_fraction = 0.75, unsigned jobs = 1) {
  const Index n = data.n();
  const auto m = static_cast<Index>(std::floor(fold_fraction * static_cast<double>(n)));
  detail::require(m >= 2, "stability: folds too small");
  StabilityResult res;
  std::mt19937_64 rng(seed);
  for (int f = 0; f < n_folds; ++f) {
    auto rows = detail::sample_without_replacement(n, m, rng);
    std::sort(rows.begin(), rows.end());
    res.fold_rows.push_back(std::move(rows));
  }
  res.fold_labels.assign(static_cast<std::size_t>(n_folds), {});
  parallel_for(static_cast<std::size_t>(n_folds), jobs, [&](std::size_t f) {
    try {
      res.fold_labels[f] = cluster(data.subset(res.fold_rows[f]), seed * 1000003ULL + f + 1);
    } catch (const Error&) {
      res.fold_labels[f].clear();
    }
  });
  double total = 0.0;
  int used = 0;
  for (int a = 0; a < n_folds; ++a) {
    for (int b = a + 1; b < n_folds; ++b) {
      const auto& la = res.fold_labels[static_cast<std::size_t>(a)];
      const auto& lb = res.fold_labels[static_cast<std::size_t>(b)];
      if (la.empty() || lb.empty()) {
        res.pair_ari.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      const auto& ra = res.fold_rows[static_cast<std::size_t>(a)];
      const auto& rb = res.fold_rows[static_cast<std::size_t>(b)];
      std::vector<int> sa, sb;
      std::size_t i = 0, j = 0;
      while (i < ra.size() && j < rb.size()) {
        if (ra[i] < rb[j]) {
          ++i;
        } else if (rb[j] < ra[i]) {
          ++j;
        } else {
          sa.push_back(la[i]);
          sb.push_back(lb[j]);
          ++i;
          ++j;
        }
      }
      const double ari = sa.empty() ? std::numeric_limits<double>::quiet_NaN() : adjusted_rand_index(sa, sb);
      res.pair_ari.push_back(ari);
      if (!std::isnan(ari)) {
        total += ari;
        ++used;
      }
    }
  }
  if (used == 0) throw Error("stability: every fold pair failed");
  res.score = total / used;
  return res;
}

/// Stability of an EM configuration; each fold refits cfg (embedding included)
/// with a fold-derived seed.
inline StabilityResult stability_score(const Dataset& data, const FitConfig& cfg, std::uint64_t seed,
                                       int n_folds = 5, double fold_fraction = 0.75, unsigned jobs = 1) {
  detail::require(std::floor(fold_fraction * static_cast<double>(data.n())) >= static_cast<double>(cfg.k),
                  "stability: folds smaller than k");
  const Clusterer c = [&cfg](const Dataset& d, std::uint64_t s) {
    FitConfig fc = cfg;
    fc.seed = s;
    return fit_em(d, fc).hard_labels;
  };
  return stability_score(data, c, seed, n_folds, fold_fraction, jobs);
}

struct SelectionCell {
  Index q = 0;
  Index k = 0;
  double ic = std::numeric_limits<double>::infinity();
  double neg_log_lik = std::numeric_limits<double>::quiet_NaN();
  long long df = 0;
  std::string error;  // non-empty when every restart failed
};

struct SelectionResult {
  Index chosen_q = 0;  // 0 for ambient variants
  Index chosen_k = 0;
  std::vector<SelectionCell> ic_table;
  std::map<Index, Index> k_hat;  // q -> IC-optimal K
  std::map<Index, StabilityResult> stability;  // q -> stability of (q, K(q))
};

/// Builds the FitConfig of candidate (k, q).
using ConfigFactory = std::function<FitConfig(Index k, Index q)>;

inline SelectionResult select_k_q(const Dataset& data, const SelectionGrid& grid, const ConfigFactory& make,
                                  bool ambient, std::uint64_t seed) {
  grid.validate();
  std::vector<Index> qs = ambient ? std::vector<Index>{0} : grid.q_candidates;
  SelectionResult res;
  for (Index q : qs)
    for (Index k : grid.k_candidates) {
      SelectionCell cell;
      cell.q = q;
      cell.k = k;
      res.ic_table.push_back(cell);
    }

  parallel_for(res.ic_table.size(), grid.jobs, [&](std::size_t c) {
    auto& cell = res.ic_table[c];
    try {
      FitConfig cfg = make(cell.k, cell.q);
      cfg.seed = seed + 7919ULL * c;
      const FitResult fit = fit_em(data, cfg);
      cell.neg_log_lik = observed_neg_log_likelihood(data, fit.embedded, fit.params, fit.balancing_T);
      cell.df = degrees_of_freedom(fit.params.k(), fit.params.ambient_dim(), fit.params.embed_dim());
      cell.ic = information_criterion(-cell.neg_log_lik, cell.df, data.n(), grid.ic, grid.eta);
    } catch (const Error& e) {
      cell.error = "(q=" + std::to_string(cell.q) + ", K=" + std::to_string(cell.k) + "): " + e.what();
    }
  });

  for (Index q : qs) {
    const SelectionCell* best = nullptr;
    std::string errors;
    for (const auto& cell : res.ic_table) {
      if (cell.q != q) continue;
      if (!cell.error.empty()) {
        errors += cell.error + "; ";
        continue;
      }
      if (best == nullptr || cell.ic < best->ic || (cell.ic == best->ic && cell.k < best->k)) best = &cell;
    }
    if (best == nullptr) throw Error("model selection: every K failed " + errors);
    res.k_hat[q] = best->k;
  }

  if (ambient) {
    res.chosen_q = 0;
    res.chosen_k = res.k_hat[0];
    return res;
  }
  double best_score = -std::numeric_limits<double>::infinity();
  for (Index q : qs) {
    const Index k = res.k_hat[q];
    double score = -std::numeric_limits<double>::infinity();
    try {
      auto st = stability_score(data, make(k, q), seed + 104729ULL * static_cast<std::uint64_t>(q),
                                grid.n_folds, grid.fold_fraction, grid.jobs);
      score = st.score;
      res.stability[q] = std::move(st);
    } catch (const Error&) {
      res.stability[q] = StabilityResult{std::numeric_limits<double>::quiet_NaN(), {}, {}, {}};
    }
    // strict improvement keeps the smaller q on ties (candidates scanned in grid order)
    if (res.chosen_k == 0 || score > best_score ||
        (score == best_score && q < res.chosen_q)) {
      best_score = score;
      res.chosen_q = q;
      res.chosen_k = k;
    }
  }
  return res;
}

/// select_k_q for one of the named variants built on `base` (stopping rule,
/// restarts, penalty constants). Balanced-projected runs use T = q.
inline SelectionResult select_k_q(const Dataset& data, const SelectionGrid& grid, Variant v,
                                  const FitConfig& base, std::uint64_t seed) {
  const bool ambient = v == Variant::RJM || v == Variant::Balanced;
  const ConfigFactory make = [&](Index k, Index q) {
    const FitConfig vc = variant_config(v, k, data.p(), q);
    FitConfig cfg = base;
    cfg.k = k;
    cfg.embedding = vc.embedding;
    cfg.penalty.balancing_T = vc.penalty.balancing_T;
    cfg.penalty.omega_mode = vc.penalty.omega_mode;
    return cfg;
  };
  return select_k_q(data, grid, make, ambient, seed);
}

}  // namespace srjm
