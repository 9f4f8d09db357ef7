#pragma once

// Data reduction e: R^p -> R^q used by the projected EM variants.

#include "srjm/types.hpp"

#include <Eigen/SVD>

#include <memory>
#include <string>

namespace srjm {

/// e(x) = (x - center)^T w, with w of size p x q.
struct LinearEmbedding {
  Matrix w;
  Vector center;

  Index ambient_dim() const noexcept { return w.rows(); }
  Index embed_dim() const noexcept { return w.cols(); }

  static LinearEmbedding identity(Index p) {
    return {Matrix::Identity(p, p), Vector::Zero(p)};
  }
};

/// An n x q embedding computed elsewhere (for instance by an autoencoder),
/// aligned row-by-row with the dataset.
struct PrecomputedEmbedding {
  Matrix values;
};

/// PCA on centered x: w holds the top-q right singular vectors ordered by
/// decreasing singular value; each column's largest-magnitude entry is positive.
inline LinearEmbedding fit_pca(const Matrix& x, Index q) {
  const Index n = x.rows();
  const Index p = x.cols();
  detail::require(q >= 1 && q <= std::min(n, p),
                  "fit_pca: q=" + std::to_string(q) + " outside [1, min(n,p)]");
  LinearEmbedding emb;
  emb.center = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - emb.center.transpose();

  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const Matrix& v = svd.matrixV();
  const Vector& sv = svd.singularValues();
  const double scale = std::max(1.0, centered.cwiseAbs().maxCoeff());
  if (sv.size() == 0 || sv(0) <= 1e-13 * scale * std::sqrt(static_cast<double>(n * p))) {
    throw Error("degenerate data: zero variance");
  }
  emb.w = v.leftCols(q);
  for (Index j = 0; j < q; ++j) {
    Index imax = 0;
    emb.w.col(j).cwiseAbs().maxCoeff(&imax);
    if (emb.w(imax, j) < 0.0) emb.w.col(j) *= -1.0;
  }
  return emb;
}

/// (x - 1 center^T) w.
inline Matrix embed(const Matrix& x, const LinearEmbedding& emb) {
  detail::require(x.cols() == emb.w.rows() && emb.center.size() == emb.w.rows(),
                  "embed: x has " + std::to_string(x.cols()) + " columns, embedding expects " +
                      std::to_string(emb.w.rows()));
  return (x.rowwise() - emb.center.transpose()) * emb.w;
}

/// Which embedding the EM runs on.
struct EmbeddingSpec {
  enum class Kind { Identity, PCA, Precomputed };
  Kind kind = Kind::Identity;
  Index q = 0;                                      // PCA only
  std::shared_ptr<const PrecomputedEmbedding> precomputed;  // Precomputed only

  static EmbeddingSpec identity() { return {}; }
  static EmbeddingSpec pca(Index q) { return {Kind::PCA, q, nullptr}; }
  static EmbeddingSpec from_values(Matrix values) {
    return {Kind::Precomputed, values.cols(),
            std::make_shared<const PrecomputedEmbedding>(PrecomputedEmbedding{std::move(values)})};
  }
};

/// Materialises the n x q matrix the EM works on. PCA is fit once on the full x.
inline Matrix embedded_features(const Matrix& x, const EmbeddingSpec& spec) {
  switch (spec.kind) {
    case EmbeddingSpec::Kind::Identity:
      return x;
    case EmbeddingSpec::Kind::PCA:
      return embed(x, fit_pca(x, spec.q));
    case EmbeddingSpec::Kind::Precomputed:
      detail::require(spec.precomputed != nullptr, "precomputed embedding missing");
      detail::require(spec.precomputed->values.rows() == x.rows(),
                      "precomputed embedding has " + std::to_string(spec.precomputed->values.rows()) +
                          " rows, data has " + std::to_string(x.rows()));
      detail::require(spec.precomputed->values.allFinite(), "precomputed embedding not finite");
      return spec.precomputed->values;
  }
  throw Error("unknown embedding kind");
}

}  // namespace srjm
