#pragma once

// Structural similarity indices over activation matrices: linear CKA,
// projection-weighted CCA, orthogonal Procrustes distance, and the residual
// of the best affine fit (direct matching used as a structural distance).

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>
#include <string_view>

#include "repsim/activations.hpp"
#include "repsim/errors.hpp"
#include "repsim/numerics.hpp"

namespace repsim::simindex {

enum class Convention { LckaFlatten, PositionsAsSamples };

struct PreprocessedPair {
  Matrix a;
  Matrix b;
  Convention convention = Convention::PositionsAsSamples;
};

enum class Index { Lcka, Pwcca, Opd, DmStructural };

inline Index parse_index(std::string_view name) {
  if (name == "lcka") return Index::Lcka;
  if (name == "pwcca") return Index::Pwcca;
  if (name == "opd") return Index::Opd;
  if (name == "dm-struct" || name == "dm-structural") return Index::DmStructural;
  throw ArgumentError("unknown similarity index '" + std::string(name) + "'");
}

inline const char* index_name(Index i) {
  switch (i) {
    case Index::Lcka: return "lcka";
    case Index::Pwcca: return "pwcca";
    case Index::Opd: return "opd";
    case Index::DmStructural: return "dm-struct";
  }
  return "?";
}

// LCKA and PWCCA are similarities; OPD and the DM residual are distances.
inline bool higher_is_similar(Index i) { return i == Index::Lcka || i == Index::Pwcca; }

// LCKA: flatten each sample to one row, center columns.
// Everything else: every (sample, position) is a row, center columns, then
// scale to unit Frobenius norm.
inline PreprocessedPair preprocess(const ActivationSet& acts_a, const ActivationSet& acts_b,
                                   Index index) {
  if (acts_a.n != acts_b.n)
    throw ShapeError("preprocess: sample counts differ (" + std::to_string(acts_a.n) + " vs " +
                     std::to_string(acts_b.n) + ")");
  if (index == Index::Lcka) {
    return {center_columns(acts_a.flattened()), center_columns(acts_b.flattened()),
            Convention::LckaFlatten};
  }
  if (acts_a.s != acts_b.s)
    throw ShapeError("preprocess: position counts differ (" + std::to_string(acts_a.s) + " vs " +
                     std::to_string(acts_b.s) + ")");
  return {normalize_frobenius(center_columns(acts_a.data)),
          normalize_frobenius(center_columns(acts_b.data)), Convention::PositionsAsSamples};
}

inline PreprocessedPair preprocess(const ActivationSet& a, const ActivationSet& b, std::string_view index) {
  return preprocess(a, b, parse_index(index));
}

namespace detail {
inline void require_same_rows(const PreprocessedPair& p, const char* what) {
  require_nonempty(p.a, what);
  require_nonempty(p.b, what);
  if (p.a.rows() != p.b.rows()) throw ShapeError(std::string(what) + ": row counts differ");
}
}  // namespace detail

inline double lcka(const PreprocessedPair& p) {
  detail::require_same_rows(p, "lcka");
  const double cross = (p.b.transpose() * p.a).squaredNorm();
  const double den = (p.a.transpose() * p.a).norm() * (p.b.transpose() * p.b).norm();
  if (!(den > 0.0)) throw DegenerateInputError("lcka: zero denominator (constant representation)");
  return cross / den;
}

struct CcaResult {
  Vector coefficients;  // rho_i in [0,1], non-increasing
  Matrix weights_a;     // p1 x k, A * weights_a = canonical variates of A
  Matrix weights_b;     // p2 x k
  Matrix variates_a;    // n x k, orthonormal columns
  Matrix variates_b;    // n x k
  Vector alphas;        // projection weights of A's variates onto A's columns
};

inline constexpr double kCcaRankTol = 1e-10;

// Canonical correlations as singular values of Qa^T Qb where Qa, Qb are
// orthonormal bases of the (rank-truncated) column spaces.
inline CcaResult cca(const PreprocessedPair& p) {
  detail::require_same_rows(p, "cca");
  const SvdFactors fa = svd(p.a), fb = svd(p.b);
  const Eigen::Index ra = effective_rank(fa.singular_values, kCcaRankTol);
  const Eigen::Index rb = effective_rank(fb.singular_values, kCcaRankTol);
  if (ra == 0 || rb == 0) throw DegenerateInputError("cca: rank-zero input");

  const Matrix qa = fa.u.leftCols(ra), qb = fb.u.leftCols(rb);
  const SvdFactors fm = svd(qa.transpose() * qb);
  const Eigen::Index k = std::min(ra, rb);

  CcaResult out;
  out.coefficients = fm.singular_values.head(k).cwiseMax(0.0).cwiseMin(1.0);
  const Matrix pa = fm.u.leftCols(k);                 // ra x k
  const Matrix pb = fm.vt.topRows(k).transpose();     // rb x k
  out.variates_a = qa * pa;
  out.variates_b = qb * pb;
  const Vector inv_sa = fa.singular_values.head(ra).cwiseInverse();
  const Vector inv_sb = fb.singular_values.head(rb).cwiseInverse();
  out.weights_a = fa.vt.topRows(ra).transpose() * inv_sa.asDiagonal() * pa;
  out.weights_b = fb.vt.topRows(rb).transpose() * inv_sb.asDiagonal() * pb;
  out.alphas = (out.variates_a.transpose() * p.a).cwiseAbs().rowwise().sum();
  return out;
}

// Projection-weighted mean of canonical correlations; the first matrix of the
// pair supplies the weights, so pwcca(A,B) != pwcca(B,A) in general.
inline double pwcca(const PreprocessedPair& p) {
  const CcaResult r = cca(p);
  const double total = r.alphas.sum();
  if (!(total > 0.0)) throw DegenerateInputError("pwcca: all projection weights are zero");
  return r.alphas.dot(r.coefficients) / total;
}

// Orthogonal R minimizing ||B - A R||_F. For p1 != p2 the narrower matrix is
// padded with zero columns, giving a max(p1,p2) square R.
inline Matrix procrustes_solve(const PreprocessedPair& p) {
  detail::require_same_rows(p, "procrustes_solve");
  const Eigen::Index w = std::max(p.a.cols(), p.b.cols());
  Matrix a = Matrix::Zero(p.a.rows(), w), b = Matrix::Zero(p.b.rows(), w);
  a.leftCols(p.a.cols()) = p.a;
  b.leftCols(p.b.cols()) = p.b;
  const SvdFactors f = svd(a.transpose() * b);
  return f.u * f.vt;
}

inline double opd(const PreprocessedPair& p) {
  detail::require_same_rows(p, "opd");
  const double d = p.a.squaredNorm() + p.b.squaredNorm() - 2.0 * nuclear_norm(p.b.transpose() * p.a);
  return std::max(d, 0.0);
}

// [A | 1]
inline Matrix bias_augmented(const Matrix& a) {
  Matrix x(a.rows(), a.cols() + 1);
  x.leftCols(a.cols()) = a;
  x.col(a.cols()).setOnes();
  return x;
}

// min over affine maps of ||A W + 1 b^T - B||_F via the pseudoinverse.
inline double dm_structural_distance(const PreprocessedPair& p) {
  detail::require_same_rows(p, "dm_structural_distance");
  const Matrix x = bias_augmented(p.a);
  const Matrix theta = pseudoinverse(x) * p.b;
  return (x * theta - p.b).norm();
}

inline double compute(Index index, const PreprocessedPair& p) {
  switch (index) {
    case Index::Lcka: return lcka(p);
    case Index::Pwcca: return pwcca(p);
    case Index::Opd: return opd(p);
    case Index::DmStructural: return dm_structural_distance(p);
  }
  throw ArgumentError("unknown index");
}

inline double compute(Index index, const ActivationSet& a, const ActivationSet& b) {
  return compute(index, preprocess(a, b, index));
}

}  // namespace repsim::simindex
