#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary. Each one is written from the textbook definition, not
// from the library code path it checks.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "repsim/numerics.hpp"
#include "repsim/rng.hpp"

namespace repsim::oracle {

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  SplitMix64 rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Matrix random_orthogonal(Eigen::Index c, std::uint64_t seed) {
  return Eigen::HouseholderQR<Matrix>(random_matrix(c, c, seed)).householderQ();
}

inline Matrix prep(const Matrix& m) {
  const Matrix c = m.rowwise() - m.colwise().mean();
  return c / c.norm();
}

// Gram-matrix form: HSIC(K, L) = tr(K H L H) with H the centering matrix.
inline double lcka_gram(const Matrix& x, const Matrix& y) {
  const Eigen::Index n = x.rows();
  const Matrix h = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  const Matrix k = x * x.transpose(), l = y * y.transpose();
  auto hsic = [&](const Matrix& p, const Matrix& q) { return (p * h * q * h).trace(); };
  return hsic(k, l) / std::sqrt(hsic(k, k) * hsic(l, l));
}

inline Matrix inv_sqrt_spd(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

// Covariance whitening: canonical correlations are the singular values of
// Saa^{-1/2} Sab Sbb^{-1/2}; A's canonical directions are Saa^{-1/2} u_i.
struct Cca {
  Vector rho;
  Matrix directions_a;
};

inline Cca cca_whitening(const Matrix& a, const Matrix& b) {
  const Matrix saa = a.transpose() * a, sbb = b.transpose() * b, sab = a.transpose() * b;
  const Matrix wa = inv_sqrt_spd(saa), wb = inv_sqrt_spd(sbb);
  Eigen::JacobiSVD<Matrix> svd(wa * sab * wb, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::Index k = std::min(a.cols(), b.cols());
  return {svd.singularValues().head(k), wa * svd.matrixU().leftCols(k)};
}

inline double pwcca(const Matrix& raw_a, const Matrix& raw_b) {
  const Matrix a = prep(raw_a), b = prep(raw_b);
  const Cca o = cca_whitening(a, b);
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < o.rho.size(); ++i) {
    Vector h = a * o.directions_a.col(i);
    h /= h.norm();
    double alpha = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) alpha += std::abs(h.dot(a.col(j)));
    num += alpha * std::min(o.rho(i), 1.0);
    den += alpha;
  }
  return num / den;
}

// DM residual from the normal equations (X^T X) theta = X^T B.
inline double dm_normal_equations(const Matrix& raw_a, const Matrix& raw_b) {
  const Matrix a = prep(raw_a), b = prep(raw_b);
  Matrix x(a.rows(), a.cols() + 1);
  x << a, Matrix::Ones(a.rows(), 1);
  const Matrix theta = (x.transpose() * x).ldlt().solve(x.transpose() * b);
  return (x * theta - b).norm();
}

// tau-b straight from the pair definition.
inline double tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  std::int64_t conc = 0, disc = 0, tx = 0, ty = 0, n0 = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      ++n0;
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0.0) ++tx;
      if (dy == 0.0) ++ty;
      if (dx * dy > 0) ++conc;
      else if (dx * dy < 0) ++disc;
    }
  return static_cast<double>(conc - disc) / std::sqrt(static_cast<double>(n0 - tx) * static_cast<double>(n0 - ty));
}

// Average ranks by counting: rank = 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> count_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) ++less;
      if (w == v[i]) ++equal;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  const auto a = count_ranks(x), b = count_ranks(y);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// O(n^2) pairwise definition.
inline double auroc_pairwise(const std::vector<double>& neg, const std::vector<double>& pos) {
  double s = 0.0;
  for (double p : pos)
    for (double n : neg) s += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return s / static_cast<double>(neg.size() * pos.size());
}

inline std::vector<double> tied_values(std::size_t n, std::uint64_t seed, std::size_t levels) {
  SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(rng.below(levels));
  return v;
}

inline std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace repsim::oracle
