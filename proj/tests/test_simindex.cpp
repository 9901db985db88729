#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <vector>

#include "repsim/rng.hpp"
#include "oracles.hpp"
#include "repsim/simindex.hpp"

using namespace repsim;
using namespace repsim::simindex;
using namespace repsim::oracle;

namespace {

ActivationSet acts(const Matrix& m) { return ActivationSet::from_rows(m); }

}  // namespace

TEST(Lcka, MatchesGramOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix x = random_matrix(40, 6, s), y = random_matrix(40, 9, s + 100) + 0.5 * x * random_matrix(6, 9, s + 200);
    EXPECT_NEAR(compute(Index::Lcka, acts(x), acts(y)), lcka_gram(x, y), 1e-8);
  }
}

TEST(Lcka, IdentityScaleOrthogonalAndSymmetry) {
  const Matrix x = random_matrix(50, 8, 1), y = random_matrix(50, 5, 2);
  EXPECT_NEAR(compute(Index::Lcka, acts(x), acts(x)), 1.0, 1e-12);
  const double base = compute(Index::Lcka, acts(x), acts(y));
  EXPECT_NEAR(compute(Index::Lcka, acts(3.5 * x * random_orthogonal(8, 3)), acts(y)), base, 1e-10);
  EXPECT_NEAR(compute(Index::Lcka, acts(y), acts(x)), base, 1e-12);
  EXPECT_GE(base, 0.0);
  EXPECT_LE(base, 1.0);
}

TEST(Lcka, FlattensPositions) {
  // Two positions per sample: LCKA sees n x (s*c) rows.
  const Matrix m = random_matrix(20, 3, 5);
  const ActivationSet a(10, 2, 3, m);
  const auto p = preprocess(a, a, Index::Lcka);
  EXPECT_EQ(p.a.rows(), 10);
  EXPECT_EQ(p.a.cols(), 6);
  EXPECT_THROW(lcka({Matrix::Zero(4, 2), Matrix::Ones(4, 2)}), DegenerateInputError);
}

TEST(Cca, CoefficientsMatchWhiteningOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix a = random_matrix(60, 5, s), b = random_matrix(60, 7, s + 50) + a * random_matrix(5, 7, s + 90);
    const auto p = preprocess(acts(a), acts(b), Index::Pwcca);
    const CcaResult r = cca(p);
    const oracle::Cca o = cca_whitening(p.a, p.b);
    ASSERT_EQ(r.coefficients.size(), o.rho.size());
    for (Eigen::Index i = 0; i < o.rho.size(); ++i) EXPECT_NEAR(r.coefficients(i), o.rho(i), 1e-9);
    // Variates: unit norm, A * weights reproduces them, and pairwise
    // correlations equal the coefficients.
    EXPECT_LT((p.a * r.weights_a - r.variates_a).norm(), 1e-9);
    EXPECT_LT((p.b * r.weights_b - r.variates_b).norm(), 1e-9);
    for (Eigen::Index i = 0; i < r.coefficients.size(); ++i) {
      EXPECT_NEAR(r.variates_a.col(i).norm(), 1.0, 1e-10);
      EXPECT_NEAR(r.variates_a.col(i).dot(r.variates_b.col(i)), r.coefficients(i), 1e-9);
    }
  }
}

TEST(Cca, GeneralizedEigenproblem) {
  // Sab Sbb^{-1} Sba w = rho^2 Saa w.
  const Matrix a = random_matrix(80, 4, 7), b = random_matrix(80, 6, 8) + 0.7 * a * random_matrix(4, 6, 9);
  const auto p = preprocess(acts(a), acts(b), Index::Pwcca);
  const Matrix saa = p.a.transpose() * p.a, sbb = p.b.transpose() * p.b, sab = p.a.transpose() * p.b;
  const Matrix lhs = sab * sbb.ldlt().solve(sab.transpose());
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(0.5 * (lhs + lhs.transpose()), saa);
  std::vector<double> eig(ges.eigenvalues().data(), ges.eigenvalues().data() + ges.eigenvalues().size());
  std::sort(eig.rbegin(), eig.rend());
  const CcaResult r = cca(p);
  for (Eigen::Index i = 0; i < r.coefficients.size(); ++i)
    EXPECT_NEAR(r.coefficients(i) * r.coefficients(i), eig[static_cast<std::size_t>(i)], 1e-9);
}

TEST(Pwcca, MatchesOracleAndIsAsymmetric) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix a = random_matrix(70, 4, s + 300), b = random_matrix(70, 8, s + 400) + a * random_matrix(4, 8, s + 500);
    EXPECT_NEAR(compute(Index::Pwcca, acts(a), acts(b)), oracle::pwcca(a, b), 1e-9);
    EXPECT_NEAR(compute(Index::Pwcca, acts(b), acts(a)), oracle::pwcca(b, a), 1e-9);
  }
  const Matrix a = random_matrix(70, 4, 1), b = random_matrix(70, 8, 2) + a * random_matrix(4, 8, 3);
  EXPECT_GT(std::abs(compute(Index::Pwcca, acts(a), acts(b)) - compute(Index::Pwcca, acts(b), acts(a))), 1e-6);
}

TEST(Pwcca, InvertibleLinearMapGivesOne) {
  const Matrix a = random_matrix(60, 6, 11);
  const Matrix m = random_matrix(6, 6, 12) + 3.0 * Matrix::Identity(6, 6);
  EXPECT_NEAR(compute(Index::Pwcca, acts(a), acts(a * m)), 1.0, 1e-9);
}

TEST(Pwcca, RankDeficientInputIsTruncated) {
  Matrix a = random_matrix(30, 5, 13);
  a.col(4) = a.col(0) + a.col(1);
  const auto r = cca(preprocess(acts(a), acts(a), Index::Pwcca));
  EXPECT_EQ(r.coefficients.size(), 4);
  EXPECT_NEAR(compute(Index::Pwcca, acts(a), acts(a)), 1.0, 1e-9);
}

TEST(Opd, EqualsProcrustesResidual) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Eigen::Index pa = 3 + static_cast<Eigen::Index>(s % 4), pb = 5;
    const Matrix a = random_matrix(30, pa, s + 600), b = random_matrix(30, pb, s + 700);
    const auto p = preprocess(acts(a), acts(b), Index::Opd);
    const Matrix r = procrustes_solve(p);
    Matrix ap = Matrix::Zero(30, std::max(pa, pb)), bp = ap;
    ap.leftCols(pa) = p.a;
    bp.leftCols(pb) = p.b;
    EXPECT_NEAR(opd(p), (bp - ap * r).squaredNorm(), 1e-10);
    EXPECT_LT((r.transpose() * r - Matrix::Identity(r.rows(), r.cols())).norm(), 1e-10);
  }
}

TEST(Opd, ProcrustesBeatsRandomRotations) {
  const Matrix a = random_matrix(25, 4, 20), b = random_matrix(25, 4, 21);
  const auto p = preprocess(acts(a), acts(b), Index::Opd);
  const double best = (p.b - p.a * procrustes_solve(p)).norm();
  for (std::uint64_t s = 0; s < 1000; ++s) EXPECT_LE(best, (p.b - p.a * random_orthogonal(4, 1000 + s)).norm() + 1e-12);
}

TEST(Opd, IdentityAndOrthogonalInvariance) {
  const Matrix a = random_matrix(40, 6, 30);
  EXPECT_NEAR(compute(Index::Opd, acts(a), acts(a)), 0.0, 1e-12);
  EXPECT_NEAR(compute(Index::Opd, acts(a), acts(a * random_orthogonal(6, 31))), 0.0, 1e-10);
  const Matrix b = random_matrix(40, 3, 32);
  EXPECT_NEAR(compute(Index::Opd, acts(a), acts(b)), compute(Index::Opd, acts(b), acts(a)), 1e-12);
  EXPECT_GT(compute(Index::Opd, acts(a), acts(b)), 0.0);
}

TEST(DmStructural, MatchesNormalEquations) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix a = random_matrix(50, 5, s + 800), b = random_matrix(50, 4, s + 900);
    EXPECT_NEAR(compute(Index::DmStructural, acts(a), acts(b)), dm_normal_equations(a, b), 1e-9);
  }
}

TEST(DmStructural, AffineImageHasZeroResidual) {
  const Matrix a = random_matrix(30, 4, 40);
  const Matrix b = (a * random_matrix(4, 6, 41)).rowwise() + random_matrix(1, 6, 42).row(0);
  EXPECT_NEAR(compute(Index::DmStructural, acts(a), acts(b)), 0.0, 1e-9);
  EXPECT_NEAR(compute(Index::DmStructural, acts(a), acts(a)), 0.0, 1e-9);
}

TEST(Preprocess, RejectsMismatchedShapes) {
  EXPECT_THROW(preprocess(acts(random_matrix(5, 2, 1)), acts(random_matrix(6, 2, 2)), Index::Opd), ShapeError);
  const ActivationSet two_pos(3, 2, 2, random_matrix(6, 2, 3));
  const ActivationSet one_pos(3, 1, 2, random_matrix(3, 2, 4));
  EXPECT_THROW(preprocess(two_pos, one_pos, Index::Pwcca), ShapeError);
  EXPECT_NO_THROW(preprocess(two_pos, one_pos, Index::Lcka));
  EXPECT_THROW(parse_index("cka"), ArgumentError);
  EXPECT_THROW(compute(Index::Opd, acts(Matrix::Ones(4, 2)), acts(random_matrix(4, 2, 5))), DegenerateInputError);
}
