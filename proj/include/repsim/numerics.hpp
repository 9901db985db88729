#pragma once

// Dense kernels shared by every other module: SVD and the quantities derived
// from it, plus the column centering / Frobenius normalization used when
// preparing activation matrices.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "repsim/errors.hpp"

namespace repsim {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct SvdFactors {
  Matrix u;                // rows x k
  Vector singular_values;  // k, non-increasing
  Matrix vt;               // k x cols
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw ArgumentError(std::string(what) + ": non-finite entries");
}

inline void require_nonempty(const Matrix& m, const char* what) {
  if (m.rows() < 1 || m.cols() < 1)
    throw ShapeError(std::string(what) + ": matrix must have at least one row and column");
}

// Thin SVD with k = min(rows, cols). One-sided Jacobi (Eigen's JacobiSVD with
// a column-pivoting QR preconditioner) is deterministic for fixed input bits.
inline SvdFactors svd(const Matrix& m) {
  require_nonempty(m, "svd");
  require_finite(m, "svd");
  Eigen::JacobiSVD<Matrix, Eigen::ColPivHouseholderQRPreconditioner> solver(
      m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success)
    throw NumericalError("svd: Jacobi iteration did not converge");
  SvdFactors f{solver.matrixU(), solver.singularValues(),
               solver.matrixV().transpose()};
  if (!f.u.allFinite() || !f.singular_values.allFinite() || !f.vt.allFinite())
    throw NumericalError("svd: non-finite factors");
  return f;
}

inline double default_rcond(const Matrix& m) {
  return std::numeric_limits<double>::epsilon() *
         static_cast<double>(std::max(m.rows(), m.cols()));
}

// Moore-Penrose pseudoinverse; singular values <= rcond * sigma_max are
// treated as zero.
inline Matrix pseudoinverse(const Matrix& m, double rcond) {
  if (!(rcond >= 0.0)) throw ArgumentError("pseudoinverse: rcond must be >= 0");
  const SvdFactors f = svd(m);
  const double smax = f.singular_values.size() ? f.singular_values(0) : 0.0;
  const double cutoff = rcond * smax;
  Vector inv = Vector::Zero(f.singular_values.size());
  for (Eigen::Index i = 0; i < inv.size(); ++i) {
    const double s = f.singular_values(i);
    if (s > cutoff && s > 0.0) inv(i) = 1.0 / s;
  }
  return f.vt.transpose() * inv.asDiagonal() * f.u.transpose();
}

inline Matrix pseudoinverse(const Matrix& m) { return pseudoinverse(m, default_rcond(m)); }

inline double nuclear_norm(const Matrix& m) { return svd(m).singular_values.sum(); }

// Best rank-r approximation in Frobenius norm (Eckart-Young).
inline Matrix low_rank_approx(const Matrix& m, Eigen::Index r) {
  const Eigen::Index k = std::min(m.rows(), m.cols());
  if (r < 1 || r > k)
    throw ArgumentError("low_rank_approx: rank " + std::to_string(r) +
                        " outside [1, " + std::to_string(k) + "]");
  const SvdFactors f = svd(m);
  return f.u.leftCols(r) * f.singular_values.head(r).asDiagonal() * f.vt.topRows(r);
}

inline Matrix center_columns(const Matrix& m) {
  if (m.rows() < 1) throw ShapeError("center_columns: need at least one row");
  const RowVector mean = m.colwise().mean();
  return m.rowwise() - mean;
}

inline Matrix normalize_frobenius(const Matrix& m) {
  const double norm = m.norm();
  if (!(norm > 0.0)) throw DegenerateInputError("normalize_frobenius: zero matrix");
  return m / norm;
}

// Number of singular values strictly above tol * sigma_max.
inline Eigen::Index effective_rank(const Vector& singular_values, double tol) {
  if (singular_values.size() == 0 || !(singular_values(0) > 0.0)) return 0;
  const double cutoff = tol * singular_values(0);
  Eigen::Index r = 0;
  while (r < singular_values.size() && singular_values(r) > cutoff) ++r;
  return r;
}

}  // namespace repsim
