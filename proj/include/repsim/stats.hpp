#pragma once

// Rank correlations, linear probing, and the sensitivity / specificity test
// procedures that correlate functional gaps |F(A) - F(B)| with
// dissimilarities d(A, B).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "repsim/activations.hpp"
#include "repsim/errors.hpp"
#include "repsim/grid.hpp"
#include "repsim/nets.hpp"
#include "repsim/numerics.hpp"
#include "repsim/ranks.hpp"
#include "repsim/rng.hpp"
#include "repsim/simindex.hpp"
#include "repsim/stitching.hpp"

namespace repsim::stats {

enum class CorrelationMethod { KendallTauB, SpearmanRho };

struct RankCorrelation {
  double statistic = 0.0;
  double p_value = 1.0;
  CorrelationMethod method = CorrelationMethod::KendallTauB;
  std::size_t n = 0;
};

inline const char* method_name(CorrelationMethod m) {
  return m == CorrelationMethod::KendallTauB ? "kendall-tau-b" : "spearman-rho";
}

// Sample sizes up to this use the exact permutation null.
inline constexpr std::size_t kExactPermutationMax = 8;

namespace detail {

inline void check_pair(std::span<const double> x, std::span<const double> y, std::size_t min_n, const char* what) {
  if (x.size() != y.size()) throw ShapeError(std::string(what) + ": length mismatch");
  if (x.size() < min_n)
    throw ArgumentError(std::string(what) + ": need at least " + std::to_string(min_n) + " observations");
  for (std::size_t k = 0; k < x.size(); ++k)
    if (std::isnan(x[k]) || std::isnan(y[k])) throw ArgumentError(std::string(what) + ": NaN input");
  auto all_tied = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
  };
  if (all_tied(x) || all_tied(y)) throw DegenerateInputError(std::string(what) + ": all values tied");
}

inline std::int64_t tie_pairs(const std::vector<double>& sorted) {
  std::int64_t total = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

// Merge sort on v counting inversions (strictly-greater pairs).
inline std::int64_t sort_count_swaps(std::vector<double>& v) {
  std::int64_t swaps = 0;
  std::vector<double> buf(v.size());
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size()), hi = std::min(lo + 2 * width, v.size());
      std::size_t a = lo, b = mid, k = lo;
      while (a < mid && b < hi) {
        if (v[b] < v[a]) {
          swaps += static_cast<std::int64_t>(mid - a);
          buf[k++] = v[b++];
        } else {
          buf[k++] = v[a++];
        }
      }
      while (a < mid) buf[k++] = v[a++];
      while (b < hi) buf[k++] = v[b++];
    }
    std::swap(v, buf);
  }
  return swaps;
}

struct TauCounts {
  std::int64_t numerator;  // concordant - discordant
  std::int64_t pairs;      // n(n-1)/2
  std::int64_t x_ties;
  std::int64_t y_ties;
};

// Knight's O(n log n) algorithm.
inline TauCounts tau_counts(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t k = 0; k < n; ++k) {
    xs[k] = x[order[k]];
    ys[k] = y[order[k]];
  }
  const std::int64_t n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const std::int64_t n1 = tie_pairs(xs);
  std::int64_t n3 = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && xs[j] == xs[i] && ys[j] == ys[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    n3 += t * (t - 1) / 2;
    i = j;
  }
  const std::int64_t swaps = sort_count_swaps(ys);
  const std::int64_t n2 = tie_pairs(ys);
  return {n0 - n1 - n2 + n3 - 2 * swaps, n0, n1, n2};
}

inline double tau_b_from_counts(const TauCounts& c) {
  const double den = std::sqrt(static_cast<double>(c.pairs - c.x_ties) * static_cast<double>(c.pairs - c.y_ties));
  return static_cast<double>(c.numerator) / den;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
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

inline double spearman_statistic(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

// Two-sided exact permutation p-value: fraction of the n! reorderings of y
// whose |statistic| is at least the observed one.
template <typename Stat>
double exact_permutation_p(std::span<const double> x, std::span<const double> y, double observed, Stat stat) {
  std::vector<std::size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<double> yp(y.size());
  std::size_t hits = 0, total = 0;
  const double thresh = std::abs(observed) - 1e-12;
  do {
    for (std::size_t k = 0; k < perm.size(); ++k) yp[k] = y[perm[k]];
    double s = 0.0;
    try {
      s = stat(x, std::span<const double>(yp));
    } catch (const DegenerateInputError&) {
      s = 0.0;
    }
    if (std::abs(s) >= thresh) ++hits;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace detail

inline RankCorrelation kendall_tau(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y, 2, "kendall_tau");
  RankCorrelation r;
  r.method = CorrelationMethod::KendallTauB;
  r.n = x.size();
  r.statistic = detail::tau_b_from_counts(detail::tau_counts(x, y));
  if (r.n <= kExactPermutationMax) {
    r.p_value = detail::exact_permutation_p(x, y, r.statistic, [](auto a, auto b) {
      return detail::tau_b_from_counts(detail::tau_counts(a, b));
    });
  } else {
    const double n = static_cast<double>(r.n);
    const double sd = std::sqrt(2.0 * (2.0 * n + 5.0) / (9.0 * n * (n - 1.0)));
    r.p_value = std::erfc(std::abs(r.statistic / sd) / std::sqrt(2.0));
  }
  r.p_value = std::clamp(r.p_value, 0.0, 1.0);
  return r;
}

inline RankCorrelation spearman_rho(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y, 3, "spearman_rho");
  RankCorrelation r;
  r.method = CorrelationMethod::SpearmanRho;
  r.n = x.size();
  r.statistic = detail::spearman_statistic(x, y);
  if (r.n <= kExactPermutationMax) {
    r.p_value = detail::exact_permutation_p(x, y, r.statistic,
                                            [](auto a, auto b) { return detail::spearman_statistic(a, b); });
  } else if (std::abs(r.statistic) >= 1.0) {
    r.p_value = 0.0;
  } else {
    const double df = static_cast<double>(r.n) - 2.0;
    const double t = r.statistic * std::sqrt(df / (1.0 - r.statistic * r.statistic));
    boost::math::students_t dist(df);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  r.p_value = std::clamp(r.p_value, 0.0, 1.0);
  return r;
}

inline RankCorrelation kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  return kendall_tau(std::span<const double>(x), std::span<const double>(y));
}
inline RankCorrelation spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  return spearman_rho(std::span<const double>(x), std::span<const double>(y));
}

// ------------------------------------------------------------- probing ----

struct ProbeConfig {
  nets::TrainConfig train{100, 64, 1e-3, 1e-5, nets::Optimizer::Adam, 0};
  double holdout_fraction = 0.3;
  bool held_out = true;  // false: report training accuracy
  std::uint64_t seed = 0;
};

struct ProbeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Deterministic shuffled split of n samples.
inline ProbeSplit probe_split(std::size_t n, double holdout_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx = iota_indices(n);
  SplitMix64 rng(seed);
  rng.shuffle(idx);
  auto n_test = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(n)));
  n_test = std::min(n_test, n > 0 ? n - 1 : 0);
  ProbeSplit s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

struct ProbeResult {
  double accuracy = 0.0;  // held-out or train per config
  double train_accuracy = 0.0;
  nets::FeedforwardNet probe;
};

// Bias-included linear softmax classifier on position-mean-pooled activations.
inline ProbeResult linear_probe(const ActivationSet& acts, std::span<const int> labels, const ProbeConfig& cfg) {
  if (static_cast<Eigen::Index>(labels.size()) != acts.n) throw ShapeError("linear_probe: label count != n");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; }))
    throw DegenerateInputError("linear_probe: labels contain a single class");
  const Matrix x = acts.position_mean();
  const ProbeSplit split = cfg.held_out ? probe_split(static_cast<std::size_t>(acts.n), cfg.holdout_fraction,
                                                      derive_seed(cfg.seed, 0))
                                        : ProbeSplit{iota_indices(static_cast<std::size_t>(acts.n)), {}};
  nets::LabeledDataset all{x, std::vector<int>(labels.begin(), labels.end()), classes};
  const nets::LabeledDataset train = all.subset(split.train);
  ProbeResult r;
  r.probe = nets::init_net({x.cols(), classes}, nets::Nonlinearity::Identity, derive_seed(cfg.seed, 1));
  nets::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 2);
  nets::train(r.probe, train, tc);
  r.train_accuracy = nets::accuracy(r.probe, train);
  r.accuracy = cfg.held_out && !split.test.empty() ? nets::accuracy(r.probe, all.subset(split.test)) : r.train_accuracy;
  return r;
}

// ------------------------------------------------------ test framework ----

// lcka, pwcca, opd, dm-struct (structural), dm-func (needs a net).
enum class Measure { Lcka, Pwcca, Opd, DmStructural, DmFunctional };

inline Measure parse_measure(std::string_view s) {
  if (s == "dm-func" || s == "dm-functional") return Measure::DmFunctional;
  switch (simindex::parse_index(s)) {
    case simindex::Index::Lcka: return Measure::Lcka;
    case simindex::Index::Pwcca: return Measure::Pwcca;
    case simindex::Index::Opd: return Measure::Opd;
    case simindex::Index::DmStructural: return Measure::DmStructural;
  }
  throw ArgumentError("unknown measure");
}

inline const char* measure_name(Measure m) {
  switch (m) {
    case Measure::Lcka: return "lcka";
    case Measure::Pwcca: return "pwcca";
    case Measure::Opd: return "opd";
    case Measure::DmStructural: return "dm-struct";
    case Measure::DmFunctional: return "dm-func";
  }
  return "?";
}

// Similarities enter the correlation as d = 1 - s; distances as-is.
inline bool measure_is_similarity(Measure m) {
  return m == Measure::Lcka || m == Measure::Pwcca || m == Measure::DmFunctional;
}

struct TestRow {
  std::string id;
  double probe_accuracy = 0.0;
  double functional_gap = 0.0;  // |F(A) - F(B)|
  double dissimilarity = 0.0;   // d(A, B)
};

struct TestReport {
  std::string test;     // sensitivity / specificity
  std::string measure;
  std::string reference_id;
  double reference_accuracy = 0.0;
  std::vector<TestRow> rows;
  RankCorrelation kendall;
  RankCorrelation spearman;
  std::string note;  // set when the correlations are undefined
};

inline constexpr std::size_t kMinTestSetSize = 5;

// Context needed by the functional direct-matching measure: the net whose
// tail receives the stitched representation, the layer it enters at, and
// the evaluation labels.
struct FunctionalContext {
  const nets::FeedforwardNet* net = nullptr;
  int layer = 0;
};

struct TestOptions {
  ProbeConfig probe;
  std::size_t dm_samples = 100;
  std::uint64_t seed = 0;
  // All-tied gaps or dissimilarities give NaN correlations and a note
  // instead of DegenerateInputError.
  bool tolerate_ties = false;
};

// Index values this close to their bound are rounding noise.
inline constexpr double kDissimilarityZero = 1e-12;

namespace detail {

inline void finish_report(TestReport& rep, const TestOptions& opt) {
  if (rep.rows.size() < kMinTestSetSize)
    throw ArgumentError("test needs at least " + std::to_string(kMinTestSetSize) + " representations, got " +
                        std::to_string(rep.rows.size()));
  std::vector<double> gaps, ds;
  for (const auto& r : rep.rows) {
    gaps.push_back(r.functional_gap);
    ds.push_back(r.dissimilarity);
  }
  auto flat = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (opt.tolerate_ties && (flat(gaps) || flat(ds))) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rep.kendall = {nan, nan, CorrelationMethod::KendallTauB, rep.rows.size()};
    rep.spearman = {nan, nan, CorrelationMethod::SpearmanRho, rep.rows.size()};
    rep.note = flat(ds) ? "undefined: all dissimilarities tied" : "undefined: all functional gaps tied";
    return;
  }
  rep.kendall = kendall_tau(gaps, ds);
  rep.spearman = spearman_rho(gaps, ds);
}

inline double snap_zero(double d) { return std::abs(d) < kDissimilarityZero ? 0.0 : d; }

// d(reference, member). DM variants fit member -> reference (member is the
// source) on a seeded subset of the fit rows and evaluate on `eval_rows`.
inline double dissimilarity(Measure m, const ActivationSet& reference, const ActivationSet& member,
                            std::span<const int> labels, const FunctionalContext& ctx,
                            const ProbeSplit& split, const TestOptions& opt, std::uint64_t seed) {
  switch (m) {
    case Measure::Lcka: return snap_zero(1.0 - simindex::compute(simindex::Index::Lcka, reference, member));
    case Measure::Pwcca: return snap_zero(1.0 - simindex::compute(simindex::Index::Pwcca, reference, member));
    case Measure::Opd: return snap_zero(simindex::compute(simindex::Index::Opd, reference, member));
    case Measure::DmStructural:
      return snap_zero(simindex::compute(simindex::Index::DmStructural, member, reference));
    case Measure::DmFunctional: {
      if (!ctx.net) throw ArgumentError("dm-func needs the receiving network");
      std::vector<std::size_t> fit_rows = split.train;
      SplitMix64 rng(seed);
      rng.shuffle(fit_rows);
      fit_rows.resize(std::min(opt.dm_samples, fit_rows.size()));
      std::sort(fit_rows.begin(), fit_rows.end());
      const auto map = stitching::fit_direct(member.subset(fit_rows), reference.subset(fit_rows)).map;
      const std::vector<std::size_t>& eval_rows = split.test.empty() ? split.train : split.test;
      const ActivationSet mem_eval = member.subset(eval_rows), ref_eval = reference.subset(eval_rows);
      std::vector<int> y;
      for (auto r : eval_rows) y.push_back(labels[r]);
      const double target_acc = nets::accuracy_of_logits(nets::forward_from(*ctx.net, ctx.layer, ref_eval.data), y);
      if (!(target_acc > 0.0)) throw DegenerateInputError("dm-func: reference accuracy is zero");
      const double stitched_acc =
          nets::accuracy_of_logits(nets::forward_from(*ctx.net, ctx.layer, map.apply(mem_eval.data)), y);
      return 1.0 - stitched_acc / target_acc;
    }
  }
  throw ArgumentError("unknown measure");
}

}  // namespace detail

// S = rank-r approximations of one layer's activations. The reference A is
// the member with the highest probe accuracy (earliest in `ranks` on ties).
inline TestReport sensitivity_test(const ActivationSet& layer_acts, std::span<const int> labels,
                                   const std::vector<Eigen::Index>& ranks, Measure measure,
                                   const TestOptions& opt, FunctionalContext ctx = {}) {
  if (ranks.size() < kMinTestSetSize)
    throw ArgumentError("sensitivity_test: need at least " + std::to_string(kMinTestSetSize) + " ranks");
  const Eigen::Index full = std::min(layer_acts.data.rows(), layer_acts.data.cols());
  if (std::find(ranks.begin(), ranks.end(), full) == ranks.end())
    throw ArgumentError("sensitivity_test: rank list must include full rank " + std::to_string(full));
  const SvdFactors f = svd(layer_acts.data);
  std::vector<ActivationSet> members;
  for (auto r : ranks) {
    if (r < 1 || r > full) throw ArgumentError("sensitivity_test: rank " + std::to_string(r) + " out of range");
    Matrix m = f.u.leftCols(r) * f.singular_values.head(r).asDiagonal() * f.vt.topRows(r);
    members.push_back(layer_acts.with_data(std::move(m)));
  }
  std::vector<double> acc;
  for (const auto& m : members) acc.push_back(linear_probe(m, labels, opt.probe).accuracy);
  const std::size_t ref = static_cast<std::size_t>(std::max_element(acc.begin(), acc.end()) - acc.begin());

  const ProbeSplit split = probe_split(static_cast<std::size_t>(layer_acts.n), opt.probe.holdout_fraction,
                                       derive_seed(opt.probe.seed, 0));
  TestReport rep;
  rep.test = "sensitivity";
  rep.measure = measure_name(measure);
  rep.reference_id = "rank-" + std::to_string(ranks[ref]);
  rep.reference_accuracy = acc[ref];
  for (std::size_t k = 0; k < members.size(); ++k) {
    TestRow row{"rank-" + std::to_string(ranks[k]), acc[k], std::abs(acc[ref] - acc[k]), 0.0};
    if (k != ref)
      row.dissimilarity = detail::dissimilarity(measure, members[ref], members[k], labels, ctx, split, opt,
                                                derive_seed(opt.seed, k));
    rep.rows.push_back(std::move(row));
  }
  detail::finish_report(rep, opt);
  return rep;
}

struct SpecificityResult {
  std::vector<TestReport> per_anchor;  // one per anchor layer
  double mean_kendall = 0.0;
  double mean_spearman = 0.0;
};

// For every layer of the anchor instance, S is every listed layer of every
// other instance; the anchor is the reference. Probe accuracies are computed
// once per (instance, layer).
inline SpecificityResult specificity_test(const std::vector<nets::FeedforwardNet>& instances,
                                          const std::vector<int>& layers, const nets::LabeledDataset& data,
                                          Measure measure, const TestOptions& opt, std::size_t anchor = 0) {
  if (instances.size() < 3) throw ArgumentError("specificity_test: need at least 3 instances");
  if (anchor >= instances.size()) throw ArgumentError("specificity_test: anchor out of range");
  if (layers.empty()) throw ArgumentError("specificity_test: no layers");
  data.validate();
  std::vector<std::vector<ActivationSet>> acts(instances.size());
  std::vector<std::vector<double>> acc(instances.size());
  for (std::size_t k = 0; k < instances.size(); ++k)
    for (int l : layers) {
      acts[k].push_back(nets::extract(instances[k], data, l));
      acc[k].push_back(linear_probe(acts[k].back(), data.labels, opt.probe).accuracy);
    }
  const ProbeSplit split = probe_split(static_cast<std::size_t>(data.size()), opt.probe.holdout_fraction,
                                       derive_seed(opt.probe.seed, 0));
  SpecificityResult out;
  std::size_t defined = 0;
  for (std::size_t a = 0; a < layers.size(); ++a) {
    TestReport rep;
    rep.test = "specificity";
    rep.measure = measure_name(measure);
    rep.reference_id = "net" + std::to_string(anchor) + ":layer" + std::to_string(layers[a]);
    rep.reference_accuracy = acc[anchor][a];
    const FunctionalContext ctx{&instances[anchor], layers[a]};
    for (std::size_t k = 0; k < instances.size(); ++k) {
      if (k == anchor) continue;
      for (std::size_t b = 0; b < layers.size(); ++b) {
        TestRow row{"net" + std::to_string(k) + ":layer" + std::to_string(layers[b]), acc[k][b],
                    std::abs(acc[anchor][a] - acc[k][b]), 0.0};
        row.dissimilarity = detail::dissimilarity(measure, acts[anchor][a], acts[k][b], data.labels, ctx, split,
                                                  opt, derive_seed(opt.seed, a, k, b));
        rep.rows.push_back(std::move(row));
      }
    }
    detail::finish_report(rep, opt);
    if (rep.note.empty()) {
      out.mean_kendall += rep.kendall.statistic;
      out.mean_spearman += rep.spearman.statistic;
      ++defined;
    }
    out.per_anchor.push_back(std::move(rep));
  }
  if (defined == 0) {
    out.mean_kendall = out.mean_spearman = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.mean_kendall /= static_cast<double>(defined);
    out.mean_spearman /= static_cast<double>(defined);
  }
  return out;
}

// ------------------------------------------------- layer identification ----

enum class IdentificationMode { Intra, Inter };

struct Identification {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t rows = 0;
  std::size_t ties = 0;       // rows where the corresponding cell shares the best score
  std::size_t nan_cells = 0;  // excluded cells
};

// Fraction of source layers whose best-scoring target (max similarity or min
// distance per grid direction) is the same layer number. Ties resolve in
// favour of the corresponding layer and are counted.
inline Identification layer_identification(const SimilarityGrid& grid, IdentificationMode mode) {
  if (mode == IdentificationMode::Intra && grid.rows() != grid.cols())
    throw ShapeError("layer_identification: intra mode needs a square grid");
  auto label = [](const std::vector<int>& v, Eigen::Index k) {
    return k < static_cast<Eigen::Index>(v.size()) ? v[static_cast<std::size_t>(k)] : static_cast<int>(k);
  };
  Identification id;
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    const int want = label(grid.source_layers, r);
    Eigen::Index target = -1;
    for (Eigen::Index c = 0; c < grid.cols(); ++c)
      if (label(grid.target_layers, c) == want) target = c;
    if (target < 0) continue;
    ++id.rows;
    double best = std::nan("");
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      const double v = grid.values(r, c);
      if (std::isnan(v)) {
        ++id.nan_cells;
        continue;
      }
      if (std::isnan(best) || (grid.higher_is_similar ? v > best : v < best)) best = v;
    }
    const double mine = grid.values(r, target);
    if (std::isnan(mine) || std::isnan(best) || mine != best) continue;
    ++id.correct;
    for (Eigen::Index c = 0; c < grid.cols(); ++c)
      if (c != target && grid.values(r, c) == best) {
        ++id.ties;
        break;
      }
  }
  id.accuracy = id.rows ? static_cast<double>(id.correct) / static_cast<double>(id.rows) : 0.0;
  return id;
}

}  // namespace repsim::stats
