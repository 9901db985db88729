#pragma once

// Synthetic classification datasets. Sample k belongs to class k % classes,
// so classes are balanced to within one sample.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>

#include "repsim/errors.hpp"
#include "repsim/nets.hpp"
#include "repsim/rng.hpp"

namespace repsim::datasets {

struct DatasetSpec {
  std::string generator = "spiral";  // blobs | rings | spiral | uniform-noise
  Eigen::Index n = 3000;
  int classes = 3;
  Eigen::Index dim = 2;      // blobs and uniform-noise only
  double noise = 0.2;        // blob sigma, ring width, spiral angle jitter
  double separation = 10.0;  // blobs: distance between adjacent centers in sigmas
  double low = -1.0;         // uniform-noise box
  double high = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1) throw ArgumentError("dataset: n must be >= 1");
    if (classes < 2) throw ArgumentError("dataset: need at least 2 classes");
    if (dim < 1) throw ArgumentError("dataset: dim must be >= 1");
    if (!(noise >= 0.0)) throw ArgumentError("dataset: noise must be >= 0");
    if (!(high > low)) throw ArgumentError("dataset: empty uniform box");
    if (generator != "blobs" && generator != "rings" && generator != "spiral" && generator != "uniform-noise")
      throw ArgumentError("dataset: unknown generator '" + generator + "'");
    if ((generator == "rings" || generator == "spiral") && dim != 2)
      throw ArgumentError("dataset: " + generator + " is two-dimensional");
  }
};

inline nets::LabeledDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  SplitMix64 rng(spec.seed);
  nets::LabeledDataset d;
  d.num_classes = spec.classes;
  d.inputs.resize(spec.n, spec.dim);
  d.labels.resize(static_cast<std::size_t>(spec.n));
  const double k_classes = static_cast<double>(spec.classes);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    const int label = static_cast<int>(i % spec.classes);
    d.labels[static_cast<std::size_t>(i)] = label;
    if (spec.generator == "blobs") {
      // Centers on a circle with adjacent centers separation*sigma apart.
      const double sigma = spec.noise > 0.0 ? spec.noise : 1.0;
      const double radius = spec.separation * sigma / (2.0 * std::sin(std::numbers::pi / k_classes));
      const double angle = 2.0 * std::numbers::pi * label / k_classes;
      for (Eigen::Index c = 0; c < spec.dim; ++c) d.inputs(i, c) = spec.noise * rng.normal();
      d.inputs(i, 0) += radius * std::cos(angle);
      if (spec.dim > 1) d.inputs(i, 1) += radius * std::sin(angle);
    } else if (spec.generator == "rings") {
      const double r = 1.0 + label + spec.noise * rng.normal();
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      d.inputs(i, 0) = r * std::cos(angle);
      d.inputs(i, 1) = r * std::sin(angle);
    } else if (spec.generator == "spiral") {
      // Arm `label` sweeps 4 radians as the radius grows from 0 to 1.
      const double t = rng.uniform();
      const double angle = 4.0 * (label + t) + spec.noise * rng.normal();
      d.inputs(i, 0) = t * std::sin(angle);
      d.inputs(i, 1) = t * std::cos(angle);
    } else {
      for (Eigen::Index c = 0; c < spec.dim; ++c) d.inputs(i, c) = rng.uniform(spec.low, spec.high);
    }
  }
  return d;
}

struct Split {
  nets::LabeledDataset train;
  nets::LabeledDataset test;
};

// Seeded shuffle, first floor(test_fraction * n) rows to the test split.
inline Split train_test_split(const nets::LabeledDataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ArgumentError("test_fraction must be in (0,1)");
  std::vector<std::size_t> idx = iota_indices(static_cast<std::size_t>(data.size()));
  SplitMix64 rng(seed);
  rng.shuffle(idx);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(idx.size())));
  if (n_test == 0 || n_test == idx.size()) throw ArgumentError("split leaves an empty side");
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

// Axis-aligned box around the rows of m, grown by `inflate` about its center.
inline std::pair<RowVector, RowVector> inflated_box(const Matrix& m, double inflate) {
  const RowVector lo = m.colwise().minCoeff(), hi = m.colwise().maxCoeff();
  const RowVector mid = 0.5 * (lo + hi), half = 0.5 * inflate * (hi - lo);
  return {mid - half, mid + half};
}

// n rows uniform in the inflated bounding box of `reference`.
inline Matrix uniform_noise_like(const Matrix& reference, Eigen::Index n, double inflate, std::uint64_t seed) {
  const auto [lo, hi] = inflated_box(reference, inflate);
  SplitMix64 rng(seed);
  Matrix out(n, reference.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < reference.cols(); ++c) out(i, c) = rng.uniform(lo(c), hi(c));
  return out;
}

}  // namespace repsim::datasets
