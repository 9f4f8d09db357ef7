#pragma once

// Synthetic hierarchical data: group labels, group means with controlled
// spacing, sparse precision matrices and sparse group regressions.

#include "srjm/core_model.hpp"
#include "srjm/embedding.hpp"
#include "srjm/types.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

namespace srjm {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct SignalSpec {
  enum class BetaMode { DisjointSupports, FlippedSigns, Shared };
  enum class OmegaKind { SharedRandom, DistinctSparse };

  Index k = 2;
  double delta_mu = 0.0;
  double beta_amplitude = 0.0;
  Index beta_nonzeros = 0;  // per group; 0 means max(1, p/10)
  BetaMode beta_mode = BetaMode::DisjointSupports;
  OmegaKind omega_kind = OmegaKind::SharedRandom;
  Index omega_edges = -1;            // off-diagonal pairs; -1 means p
  std::vector<double> sigma_noise;   // empty means 0.5 for every group
  std::vector<double> tau;           // empty means balanced

  Index nonzeros(Index p) const { return beta_nonzeros > 0 ? beta_nonzeros : std::max<Index>(1, p / 10); }
  Index edges(Index p) const { return omega_edges >= 0 ? omega_edges : p; }

  double sigma(Index g) const {
    return sigma_noise.empty() ? 0.5 : sigma_noise.at(static_cast<std::size_t>(g));
  }

  std::vector<double> proportions() const {
    if (tau.empty()) return std::vector<double>(static_cast<std::size_t>(k), 1.0 / static_cast<double>(k));
    return tau;
  }

  void validate(Index p) const {
    detail::require(k >= 1, "signal: k must be >= 1");
    detail::require(delta_mu >= 0.0 && std::isfinite(delta_mu), "signal: delta_mu must be >= 0");
    detail::require(beta_amplitude >= 0.0 && std::isfinite(beta_amplitude), "signal: beta_amplitude must be >= 0");
    detail::require(beta_mode != BetaMode::FlippedSigns || k == 2, "signal: flipped signs requires k = 2");
    if (beta_mode == BetaMode::DisjointSupports) {
      detail::require(nonzeros(p) * k <= p, "signal: disjoint supports need k * nonzeros <= p");
    } else {
      detail::require(nonzeros(p) <= p, "signal: more nonzeros than features");
    }
    detail::require(edges(p) <= p * (p - 1) / 2, "signal: too many precision edges");
    detail::require(sigma_noise.empty() || static_cast<Index>(sigma_noise.size()) == k,
                    "signal: sigma_noise needs one entry per group");
    for (double s : sigma_noise) detail::require(s > 0.0, "signal: sigma_noise must be > 0");
    if (!tau.empty()) {
      detail::require(static_cast<Index>(tau.size()) == k, "signal: tau needs one entry per group");
      double s = 0.0;
      for (double t : tau) {
        detail::require(t > 0.0, "signal: tau entries must be > 0");
        s += t;
      }
      detail::require(std::abs(s - 1.0) <= 1e-12, "signal: tau must sum to 1");
    }
  }
};

/// Generating parameters and labels. Precisions are kept sparse so that very
/// wide designs stay cheap; params() densifies them.
struct GroundTruth {
  Index p = 0;
  std::vector<double> tau;
  std::vector<Vector> mu;
  std::vector<SparseMatrix> omega;
  std::vector<double> alpha;
  std::vector<Vector> beta;
  std::vector<double> sigma;
  std::vector<int> labels;
  std::vector<std::vector<bool>> beta_pattern;
  std::vector<std::vector<bool>> omega_pattern;  // strict upper triangle, row-major

  Index k() const noexcept { return static_cast<Index>(tau.size()); }

  MixtureParams params() const {
    std::vector<GroupParams> groups;
    for (Index g = 0; g < k(); ++g) {
      const auto s = static_cast<std::size_t>(g);
      groups.push_back({tau[s], mu[s], Matrix(omega[s]), alpha[s], beta[s], sigma[s]});
    }
    return MixtureParams(std::move(groups), p, p);
  }
};

/// Affine spacing mu_k + l (mu_k - mean) with l chosen so the RMS distance to
/// the barycenter equals delta_mu.
inline std::vector<Vector> space_means(const std::vector<Vector>& mus, double delta_mu) {
  detail::require(!mus.empty(), "space_means: no means");
  detail::require(delta_mu >= 0.0, "space_means: delta_mu must be >= 0");
  const double kk = static_cast<double>(mus.size());
  Vector bar = Vector::Zero(mus.front().size());
  for (const auto& m : mus) bar += m;
  bar /= kk;
  double spread = 0.0;
  for (const auto& m : mus) spread += (m - bar).squaredNorm();
  spread = std::sqrt(spread / kk);
  std::vector<Vector> out;
  out.reserve(mus.size());
  if (delta_mu == 0.0) {
    for (std::size_t i = 0; i < mus.size(); ++i) out.push_back(bar);
    return out;
  }
  detail::require(spread > 0.0, "space_means: zero spread cannot be rescaled");
  const double l = delta_mu / spread - 1.0;
  for (const auto& m : mus) out.push_back(m + l * (m - bar));
  return out;
}

struct SparseBeta {
  std::vector<Vector> beta;
  std::vector<std::vector<bool>> pattern;
};

namespace detail {

inline std::vector<Index> sample_without_replacement(Index population, Index count, std::mt19937_64& rng) {
  std::vector<Index> all(static_cast<std::size_t>(population));
  for (Index i = 0; i < population; ++i) all[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, population - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(count));
  return all;
}

inline double random_sign(std::mt19937_64& rng) {
  return std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
}

inline std::size_t upper_index(Index i, Index j, Index p) {
  // position of (i, j), i < j, in the row-major strict upper triangle
  return static_cast<std::size_t>(i * p - i * (i + 1) / 2 + (j - i - 1));
}

}  // namespace detail

inline SparseBeta gen_sparse_beta(Index p, const SignalSpec& spec, std::mt19937_64& rng) {
  spec.validate(p);
  const Index kk = spec.k;
  const Index s = spec.nonzeros(p);
  const double a = spec.beta_amplitude;
  SparseBeta out;
  out.beta.assign(static_cast<std::size_t>(kk), Vector::Zero(p));
  out.pattern.assign(static_cast<std::size_t>(kk), std::vector<bool>(static_cast<std::size_t>(p), false));
  switch (spec.beta_mode) {
    case SignalSpec::BetaMode::DisjointSupports: {
      const auto idx = detail::sample_without_replacement(p, s * kk, rng);
      for (Index g = 0; g < kk; ++g)
        for (Index t = 0; t < s; ++t)
          out.beta[static_cast<std::size_t>(g)](idx[static_cast<std::size_t>(g * s + t)]) = a * detail::random_sign(rng);
      break;
    }
    case SignalSpec::BetaMode::FlippedSigns: {
      const auto idx = detail::sample_without_replacement(p, s, rng);
      for (Index j : idx) out.beta[0](j) = a * detail::random_sign(rng);
      out.beta[1] = -out.beta[0];
      break;
    }
    case SignalSpec::BetaMode::Shared: {
      const auto idx = detail::sample_without_replacement(p, s, rng);
      for (Index g = 0; g < kk; ++g)
        for (Index j : idx) out.beta[static_cast<std::size_t>(g)](j) = a * detail::random_sign(rng);
      break;
    }
  }
  for (Index g = 0; g < kk; ++g)
    for (Index j = 0; j < p; ++j)
      out.pattern[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)] = out.beta[static_cast<std::size_t>(g)](j) != 0.0;
  return out;
}

struct SparsePrecision {
  SparseMatrix omega;
  std::vector<bool> pattern;  // strict upper triangle, row-major
};

/// Random edge set of the requested size, weights uniform in +-[0.1, 0.4],
/// diagonal 1 + absolute row sum.
inline SparsePrecision gen_sparse_precision(Index p, Index edges, std::mt19937_64& rng) {
  detail::require(p >= 1 && edges >= 0 && edges <= p * (p - 1) / 2, "gen_sparse_precision: bad edge count");
  std::unordered_set<std::size_t> chosen;
  std::vector<std::pair<Index, Index>> pairs;
  std::uniform_int_distribution<Index> pick(0, p - 1);
  std::uniform_real_distribution<double> mag(0.1, 0.4);
  std::vector<Eigen::Triplet<double>> trip;
  Vector rowsum = Vector::Zero(p);
  SparsePrecision out;
  out.pattern.assign(static_cast<std::size_t>(p * (p - 1) / 2), false);
  while (static_cast<Index>(pairs.size()) < edges) {
    Index i = pick(rng), j = pick(rng);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    const std::size_t key = detail::upper_index(i, j, p);
    if (!chosen.insert(key).second) continue;
    pairs.emplace_back(i, j);
    const double w = mag(rng) * detail::random_sign(rng);
    trip.emplace_back(i, j, w);
    trip.emplace_back(j, i, w);
    rowsum(i) += std::abs(w);
    rowsum(j) += std::abs(w);
    out.pattern[key] = true;
  }
  for (Index i = 0; i < p; ++i) trip.emplace_back(i, i, 1.0 + rowsum(i));
  out.omega.resize(p, p);
  out.omega.setFromTriplets(trip.begin(), trip.end());
  out.omega.makeCompressed();
  return out;
}

namespace detail {

/// Rows mu^T + (L z)^T with L L^T = omega^-1, from rows of z.
class PrecisionSampler {
 public:
  explicit PrecisionSampler(const SparseMatrix& omega) : llt_(omega) {
    if (llt_.info() != Eigen::Success) throw Error("precision not positive definite");
  }
  /// z: p x m standard normal columns; returns p x m draws with covariance omega^-1.
  Matrix transform(const Matrix& z) const {
    const Matrix v = llt_.matrixU().solve(z);
    return llt_.permutationPinv() * v;
  }

 private:
  Eigen::SimplicialLLT<SparseMatrix> llt_;
};

struct LatentDraw {
  GroundTruth truth;
  Matrix x;
  Vector noise;
};

inline LatentDraw draw_latent(Index n, Index p, const SignalSpec& spec, std::uint64_t seed, double t_dof) {
  spec.validate(p);
  require(n >= 1 && p >= 1, "generator: need n, p >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Index kk = spec.k;
  LatentDraw d;
  auto& g = d.truth;
  g.p = p;
  g.tau = spec.proportions();

  std::vector<Vector> base(static_cast<std::size_t>(kk), Vector(p));
  for (auto& m : base)
    for (Index j = 0; j < p; ++j) m(j) = nd(rng);
  g.mu = kk == 1 ? base : space_means(base, spec.delta_mu);

  auto sb = gen_sparse_beta(p, spec, rng);
  g.beta = std::move(sb.beta);
  g.beta_pattern = std::move(sb.pattern);
  g.alpha.assign(static_cast<std::size_t>(kk), 0.0);
  for (Index c = 0; c < kk; ++c) g.sigma.push_back(spec.sigma(c));

  const Index edges = spec.edges(p);
  if (spec.omega_kind == SignalSpec::OmegaKind::SharedRandom) {
    auto sp = gen_sparse_precision(p, edges, rng);
    g.omega.assign(static_cast<std::size_t>(kk), sp.omega);
    g.omega_pattern.assign(static_cast<std::size_t>(kk), sp.pattern);
  } else {
    for (Index c = 0; c < kk; ++c) {
      auto sp = gen_sparse_precision(p, edges, rng);
      g.omega.push_back(std::move(sp.omega));
      g.omega_pattern.push_back(std::move(sp.pattern));
    }
  }

  std::discrete_distribution<int> cat(g.tau.begin(), g.tau.end());
  g.labels.resize(static_cast<std::size_t>(n));
  for (auto& l : g.labels) l = kk == 1 ? 0 : cat(rng);

  d.x.resize(n, p);
  for (Index c = 0; c < kk; ++c) {
    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i)
      if (g.labels[static_cast<std::size_t>(i)] == c) rows.push_back(i);
    if (rows.empty()) continue;
    Matrix z(p, static_cast<Index>(rows.size()));
    for (Index t = 0; t < z.cols(); ++t)
      for (Index j = 0; j < p; ++j) z(j, t) = nd(rng);
    if (t_dof > 0.0) {
      std::chi_squared_distribution<double> chi(t_dof);
      for (Index t = 0; t < z.cols(); ++t) z.col(t) /= std::sqrt(chi(rng) / t_dof);
    }
    const PrecisionSampler sampler(g.omega[static_cast<std::size_t>(c)]);
    const Matrix draws = sampler.transform(z);
    for (Index t = 0; t < z.cols(); ++t)
      d.x.row(rows[static_cast<std::size_t>(t)]) = (draws.col(t) + g.mu[static_cast<std::size_t>(c)]).transpose();
  }
  d.noise.resize(n);
  for (Index i = 0; i < n; ++i) d.noise(i) = nd(rng);
  return d;
}

inline Vector responses(const Matrix& x, const GroundTruth& g, const Vector& noise) {
  Vector y(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const auto c = static_cast<std::size_t>(g.labels[static_cast<std::size_t>(i)]);
    y(i) = g.alpha[c] + x.row(i).dot(g.beta[c]) + g.sigma[c] * noise(i);
  }
  return y;
}

}  // namespace detail

struct Simulation {
  Dataset data;
  GroundTruth truth;
  std::vector<bool> binary_mask;  // mixed generator only; empty otherwise
};

/// (x | z=k) ~ N(mu_k, omega_k^-1), (y | x, z=k) ~ N(beta_k^T x, sigma_k^2).
inline Simulation gen_gaussian(Index n, Index p, const SignalSpec& spec, std::uint64_t seed) {
  auto d = detail::draw_latent(n, p, spec, seed, 0.0);
  Vector y = detail::responses(d.x, d.truth, d.noise);
  return {Dataset(std::move(d.x), std::move(y)), std::move(d.truth), {}};
}

/// Multivariate Student-t features with `dof` degrees of freedom.
inline Simulation gen_student_t(Index n, Index p, const SignalSpec& spec, double dof, std::uint64_t seed) {
  detail::require(dof > 2.0, "gen_student_t: dof must be > 2");
  auto d = detail::draw_latent(n, p, spec, seed, dof);
  Vector y = detail::responses(d.x, d.truth, d.noise);
  return {Dataset(std::move(d.x), std::move(y)), std::move(d.truth), {}};
}

/// Gaussian latent features of which round(binary_fraction * p) columns are
/// dichotomised at their group-conditional latent mean; y uses observed x.
inline Simulation gen_mixed_binary(Index n, Index p, const SignalSpec& spec, double binary_fraction,
                                   std::uint64_t seed) {
  detail::require(binary_fraction >= 0.0 && binary_fraction <= 1.0, "gen_mixed_binary: fraction outside [0,1]");
  auto d = detail::draw_latent(n, p, spec, seed, 0.0);
  const auto nb = static_cast<Index>(std::llround(binary_fraction * static_cast<double>(p)));
  std::mt19937_64 col_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<bool> mask(static_cast<std::size_t>(p), false);
  for (Index j : detail::sample_without_replacement(p, nb, col_rng)) mask[static_cast<std::size_t>(j)] = true;
  for (Index i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(d.truth.labels[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < p; ++j)
      if (mask[static_cast<std::size_t>(j)]) d.x(i, j) = d.x(i, j) > d.truth.mu[c](j) ? 1.0 : 0.0;
  }
  Vector y = detail::responses(d.x, d.truth, d.noise);
  return {Dataset(std::move(d.x), std::move(y)), std::move(d.truth), std::move(mask)};
}

/// Feature model of `params` pushed through a linear embedding:
/// mu -> w^T (mu - center), omega -> (w^T omega^-1 w)^-1.
inline MixtureParams embed_params(const MixtureParams& params, const LinearEmbedding& emb) {
  detail::require(emb.ambient_dim() == params.embed_dim(), "embed_params: dimension mismatch");
  std::vector<GroupParams> groups;
  for (Index k = 0; k < params.k(); ++k) {
    GroupParams g = params.group(k);
    g.mu = emb.w.transpose() * (g.mu - emb.center);
    const Matrix cov = g.omega.llt().solve(Matrix::Identity(g.omega.rows(), g.omega.cols()));
    const Matrix ce = emb.w.transpose() * cov * emb.w;
    g.omega = ce.llt().solve(Matrix::Identity(ce.rows(), ce.cols()));
    g.omega = 0.5 * (g.omega + g.omega.transpose()).eval();
    groups.push_back(std::move(g));
  }
  return MixtureParams(std::move(groups), emb.embed_dim(), params.ambient_dim());
}

/// Maximum-score classifier at the true parameters, with the run's T and
/// (optional) linear embedding.
inline std::vector<int> oracle_classifier(const Dataset& data, const MixtureParams& truth, double T,
                                          const LinearEmbedding* emb = nullptr) {
  const MixtureParams par = emb != nullptr ? embed_params(truth, *emb) : truth;
  const Matrix embedded = emb != nullptr ? embed(data.x(), *emb) : data.x();
  const Matrix scores = component_log_scores(data, embedded, par, T);
  std::vector<int> out(static_cast<std::size_t>(data.n()));
  for (Index i = 0; i < data.n(); ++i) {
    Index best = 0;
    scores.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace srjm
