#include <gtest/gtest.h>

#include <cmath>

#include "repsim/numerics.hpp"
#include "repsim/rng.hpp"

using namespace repsim;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(Svd, ReconstructsInput) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix m = random_matrix(7 + static_cast<Eigen::Index>(s % 3), 5, s);
    const SvdFactors f = svd(m);
    const Matrix back = f.u * f.singular_values.asDiagonal() * f.vt;
    EXPECT_LT((back - m).norm(), 1e-12 * m.norm());
    for (Eigen::Index i = 1; i < f.singular_values.size(); ++i)
      EXPECT_GE(f.singular_values(i - 1), f.singular_values(i));
  }
}

TEST(Svd, RejectsNonFinite) {
  Matrix m = Matrix::Ones(3, 3);
  m(1, 1) = std::nan("");
  EXPECT_THROW(svd(m), ArgumentError);
  EXPECT_THROW(svd(Matrix(0, 3)), ShapeError);
}

TEST(Pseudoinverse, PenroseConditions) {
  // Rank-deficient 6x4 matrix.
  Matrix m = random_matrix(6, 3, 1) * random_matrix(3, 4, 2);
  const Matrix p = pseudoinverse(m);
  EXPECT_LT((m * p * m - m).norm(), 1e-10);
  EXPECT_LT((p * m * p - p).norm(), 1e-10);
  EXPECT_LT(((m * p).transpose() - m * p).norm(), 1e-10);
  EXPECT_LT(((p * m).transpose() - p * m).norm(), 1e-10);
}

TEST(Pseudoinverse, MatchesInverseForSquareFullRank) {
  const Matrix m = random_matrix(5, 5, 3) + 5.0 * Matrix::Identity(5, 5);
  EXPECT_LT((pseudoinverse(m) - m.inverse()).norm(), 1e-10);
}

TEST(Pseudoinverse, ZeroMatrixGivesZero) {
  EXPECT_EQ(pseudoinverse(Matrix::Zero(3, 2)).norm(), 0.0);
  EXPECT_THROW(pseudoinverse(Matrix::Ones(2, 2), -1.0), ArgumentError);
}

TEST(NuclearNorm, DiagonalAndOrthogonalInvariance) {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 3.0, -2.0, 0.5;
  EXPECT_NEAR(nuclear_norm(d), 5.5, 1e-12);
  const Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(3, 3, 4)).householderQ();
  EXPECT_NEAR(nuclear_norm(q * d), 5.5, 1e-12);
}

TEST(LowRankApprox, EckartYoungError) {
  const Matrix m = random_matrix(8, 6, 5);
  const SvdFactors f = svd(m);
  for (Eigen::Index r = 1; r <= 6; ++r) {
    const Matrix a = low_rank_approx(m, r);
    const double expected = std::sqrt(f.singular_values.tail(6 - r).squaredNorm());
    EXPECT_NEAR((m - a).norm(), expected, 1e-10);
    EXPECT_EQ(effective_rank(svd(a).singular_values, 1e-10), r);
  }
  EXPECT_THROW(low_rank_approx(m, 0), ArgumentError);
  EXPECT_THROW(low_rank_approx(m, 7), ArgumentError);
}

TEST(Preprocessing, CenterAndNormalize) {
  const Matrix m = random_matrix(10, 4, 6).array() + 3.0;
  const Matrix c = center_columns(m);
  EXPECT_LT(c.colwise().sum().norm(), 1e-12);
  EXPECT_NEAR(normalize_frobenius(c).norm(), 1.0, 1e-15);
  EXPECT_THROW(normalize_frobenius(Matrix::Zero(2, 2)), DegenerateInputError);
}

TEST(Rng, DeterministicAndInRange) {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  SplitMix64 r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
}
