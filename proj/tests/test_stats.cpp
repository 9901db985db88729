#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "repsim/datasets.hpp"
#include "repsim/stats.hpp"

using namespace repsim;
using namespace repsim::stats;
using oracle::normals;
using oracle::tied_values;

namespace {

bool all_tied(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
}

}  // namespace

TEST(RankCorrelation, MatchesPairDefinitionsWithTies) {
  int checked = 0;
  for (std::uint64_t s = 0; checked < 200; ++s) {
    const std::size_t n = 3 + s % 6;
    const auto x = tied_values(n, s, 4), y = tied_values(n, s + 7919, 4);
    if (all_tied(x) || all_tied(y)) continue;
    EXPECT_EQ(kendall_tau(x, y).statistic, oracle::tau_b(x, y));
    EXPECT_EQ(spearman_rho(x, y).statistic, oracle::spearman_rho(x, y));
    ++checked;
  }
}

TEST(RankCorrelation, LargeInputsMatchOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto x = tied_values(200, s, 30), y = tied_values(200, s + 99, 30);
    EXPECT_EQ(kendall_tau(x, y).statistic, oracle::tau_b(x, y));
    EXPECT_NEAR(spearman_rho(x, y).statistic, oracle::spearman_rho(x, y), 1e-12);
  }
}

TEST(RankCorrelation, PerfectAndReversed) {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{10, 20, 30, 40, 50}, z{5, 4, 3, 2, 1};
  EXPECT_EQ(kendall_tau(x, y).statistic, 1.0);
  EXPECT_EQ(spearman_rho(x, y).statistic, 1.0);
  EXPECT_EQ(kendall_tau(x, z).statistic, -1.0);
  EXPECT_EQ(spearman_rho(x, z).statistic, -1.0);
  // Exact null for n = 5: 2 of 120 orderings reach |tau| = 1.
  EXPECT_NEAR(kendall_tau(x, y).p_value, 2.0 / 120.0, 1e-15);
}

TEST(RankCorrelation, InvariantUnderIncreasingTransforms) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = normals(12, s), y = normals(12, s + 500);
    std::vector<double> tx, ty;
    for (double v : x) tx.push_back(std::exp(v));
    for (double v : y) ty.push_back(v * v * v + 2.0 * v);
    EXPECT_EQ(kendall_tau(x, y).statistic, kendall_tau(tx, ty).statistic);
    EXPECT_EQ(spearman_rho(x, y).statistic, spearman_rho(tx, ty).statistic);
  }
}

TEST(RankCorrelation, DegenerateInputs) {
  const std::vector<double> flat{1, 1, 1, 1}, x{1, 2, 3, 4};
  EXPECT_THROW(kendall_tau(flat, x), DegenerateInputError);
  EXPECT_THROW(spearman_rho(x, flat), DegenerateInputError);
  EXPECT_THROW(kendall_tau(std::vector<double>{1.0}, std::vector<double>{2.0}), ArgumentError);
  EXPECT_THROW(kendall_tau(x, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(RankCorrelation, NullPValuesAreCalibrated) {
  for (std::size_t n : {7u, 30u}) {
    int tau_hits = 0, rho_hits = 0;
    for (std::uint64_t t = 0; t < 500; ++t) {
      const auto x = normals(n, 10000 + t), y = normals(n, 20000 + t);
      if (kendall_tau(x, y).p_value < 0.05) ++tau_hits;
      if (spearman_rho(x, y).p_value < 0.05) ++rho_hits;
    }
    EXPECT_GE(tau_hits / 500.0, 0.02) << n;
    EXPECT_LE(tau_hits / 500.0, 0.09) << n;
    EXPECT_GE(rho_hits / 500.0, 0.02) << n;
    EXPECT_LE(rho_hits / 500.0, 0.09) << n;
  }
}

TEST(Identification, TiesFavourCorrespondingLayer) {
  SimilarityGrid g;
  g.higher_is_similar = true;
  g.source_layers = g.target_layers = {1, 2, 3};
  g.values.resize(3, 3);
  g.values << 1.0, 1.0, 0.5,  // tie with the diagonal
      0.2, 0.9, 0.95,         // wrong
      0.1, 0.1, 0.3;          // right
  const auto id = layer_identification(g, IdentificationMode::Intra);
  EXPECT_EQ(id.rows, 3u);
  EXPECT_EQ(id.correct, 2u);
  EXPECT_EQ(id.ties, 1u);
  g.higher_is_similar = false;
  EXPECT_EQ(layer_identification(g, IdentificationMode::Inter).correct, 0u);
}

TEST(Identification, NanCellsAreSkipped) {
  SimilarityGrid g;
  g.source_layers = g.target_layers = {1, 2};
  g.values.resize(2, 2);
  g.values << 0.5, std::nan(""), std::nan(""), 0.1;
  const auto id = layer_identification(g, IdentificationMode::Intra);
  EXPECT_EQ(id.correct, 2u);
  EXPECT_EQ(id.nan_cells, 2u);
}

TEST(Probe, SeparableAndSpiralInputs) {
  datasets::DatasetSpec blobs;
  blobs.generator = "blobs";
  blobs.classes = 2;
  blobs.n = 600;
  blobs.noise = 1.0;
  blobs.seed = 1;
  const auto b = datasets::generate_dataset(blobs);
  ProbeConfig cfg;
  cfg.train = {60, 64, 1e-2, 1e-5, nets::Optimizer::Adam, 0};
  cfg.seed = 2;
  EXPECT_GE(linear_probe(ActivationSet::from_rows(b.inputs), b.labels, cfg).accuracy, 0.99);

  datasets::DatasetSpec spiral;
  spiral.seed = 3;
  const auto s = datasets::generate_dataset(spiral);
  EXPECT_LE(linear_probe(ActivationSet::from_rows(s.inputs), s.labels, cfg).accuracy, 0.75);

  const std::vector<int> one_class(b.labels.size(), 0);
  EXPECT_THROW(linear_probe(ActivationSet::from_rows(b.inputs), one_class, cfg), DegenerateInputError);
}

TEST(Sensitivity, FullRankReferenceHasZeroGapAndDistance) {
  datasets::DatasetSpec spec;
  spec.generator = "blobs";
  spec.classes = 3;
  spec.dim = 8;
  spec.n = 300;
  spec.noise = 1.0;
  spec.separation = 4.0;
  spec.seed = 5;
  const auto d = datasets::generate_dataset(spec);
  TestOptions opt;
  opt.probe.train = {40, 64, 1e-2, 1e-5, nets::Optimizer::Adam, 0};
  opt.probe.seed = 6;
  const auto rep = sensitivity_test(ActivationSet::from_rows(d.inputs), d.labels, {8, 6, 4, 2, 1}, Measure::Opd, opt);
  ASSERT_EQ(rep.rows.size(), 5u);
  for (const auto& r : rep.rows) {
    EXPECT_GE(r.functional_gap, 0.0);
    if (r.id == rep.reference_id) {
      EXPECT_EQ(r.functional_gap, 0.0);
      EXPECT_EQ(r.dissimilarity, 0.0);
    }
  }
  EXPECT_THROW(sensitivity_test(ActivationSet::from_rows(d.inputs), d.labels, {8, 4, 2, 1}, Measure::Opd, opt),
               ArgumentError);
  EXPECT_THROW(sensitivity_test(ActivationSet::from_rows(d.inputs), d.labels, {6, 5, 4, 2, 1}, Measure::Opd, opt),
               ArgumentError);
}

TEST(Sensitivity, NestedSubspacesTieUnderPwcca) {
  // Every low-rank member lies in the reference span, so PWCCA sees no
  // difference at all.
  datasets::DatasetSpec spec;
  spec.generator = "blobs";
  spec.classes = 3;
  spec.dim = 8;
  spec.n = 300;
  spec.seed = 5;
  const auto d = datasets::generate_dataset(spec);
  TestOptions opt;
  opt.probe.train = {20, 64, 1e-2, 1e-5, nets::Optimizer::Adam, 0};
  const auto acts = ActivationSet::from_rows(d.inputs);
  EXPECT_THROW(sensitivity_test(acts, d.labels, {8, 6, 4, 2, 1}, Measure::Pwcca, opt), DegenerateInputError);
  opt.tolerate_ties = true;
  const auto rep = sensitivity_test(acts, d.labels, {8, 6, 4, 2, 1}, Measure::Pwcca, opt);
  for (const auto& r : rep.rows) EXPECT_EQ(r.dissimilarity, 0.0);
  EXPECT_TRUE(std::isnan(rep.kendall.statistic));
  EXPECT_TRUE(std::isnan(rep.spearman.p_value));
  EXPECT_FALSE(rep.note.empty());
}

TEST(Measures, NamesRoundTrip) {
  for (Measure m : {Measure::Lcka, Measure::Pwcca, Measure::Opd, Measure::DmStructural, Measure::DmFunctional})
    EXPECT_EQ(parse_measure(measure_name(m)), m);
  EXPECT_TRUE(measure_is_similarity(Measure::Lcka));
  EXPECT_FALSE(measure_is_similarity(Measure::Opd));
  EXPECT_THROW(parse_measure("tlm"), ArgumentError);
}
