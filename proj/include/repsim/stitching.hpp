#pragma once

// Model stitching: an affine map T placed between the front half f<=i of one
// frozen net and the back half g>j of another. T is either fitted directly
// against the target representation (least squares, no labels) or trained on
// the task loss of the stitched composite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "repsim/activations.hpp"
#include "repsim/errors.hpp"
#include "repsim/grid.hpp"
#include "repsim/nets.hpp"
#include "repsim/numerics.hpp"
#include "repsim/parallel.hpp"
#include "repsim/rng.hpp"
#include "repsim/simindex.hpp"

namespace repsim::stitching {

using nets::FeedforwardNet;
using nets::LabeledDataset;
using nets::TrainConfig;
using nets::TrainLog;

// x -> x W + b, shared by every position.
struct AffineMap {
  Matrix weights;  // c_in x c_out
  RowVector bias;  // c_out

  Eigen::Index in_width() const { return weights.rows(); }
  Eigen::Index out_width() const { return weights.cols(); }

  static AffineMap identity(Eigen::Index c) { return {Matrix::Identity(c, c), RowVector::Zero(c)}; }
  static AffineMap zeros(Eigen::Index c_in, Eigen::Index c_out) {
    return {Matrix::Zero(c_in, c_out), RowVector::Zero(c_out)};
  }

  void validate() const {
    if (bias.size() != weights.cols()) throw ShapeError("AffineMap: bias width != output width");
    if (!weights.allFinite() || !bias.allFinite()) throw NumericalError("AffineMap: non-finite parameters");
  }

  Matrix apply(const Matrix& rows) const {
    if (rows.cols() != in_width())
      throw ShapeError("AffineMap: input width " + std::to_string(rows.cols()) + " != " +
                       std::to_string(in_width()));
    Matrix out = rows * weights;
    out.rowwise() += bias;
    return out;
  }
};

inline ActivationSet apply_map(const AffineMap& map, const ActivationSet& acts) {
  return acts.with_data(map.apply(acts.data));
}

struct DirectFit {
  AffineMap map;
  double residual = 0.0;        // ||[A|1] theta - B||_F on the fitted rows
  Eigen::Index rank = 0;        // rank of the bias-augmented design matrix
  bool rank_deficient = false;
};

// Least-squares affine map from source rows to target rows through the
// pseudoinverse of [A | 1]; label-free.
inline DirectFit fit_direct(const ActivationSet& source, const ActivationSet& target) {
  if (source.n != target.n || source.s != target.s)
    throw ShapeError("fit_direct: source and target must have the same samples and positions");
  const Matrix x = simindex::bias_augmented(source.data);
  const SvdFactors f = svd(x);
  const double cutoff = default_rcond(x) * (f.singular_values.size() ? f.singular_values(0) : 0.0);
  Eigen::Index rank = 0;
  Vector inv = Vector::Zero(f.singular_values.size());
  for (Eigen::Index k = 0; k < inv.size(); ++k)
    if (f.singular_values(k) > cutoff && f.singular_values(k) > 0.0) {
      inv(k) = 1.0 / f.singular_values(k);
      ++rank;
    }
  const Matrix theta = f.vt.transpose() * (inv.asDiagonal() * (f.u.transpose() * target.data));
  DirectFit out;
  const Eigen::Index c_in = source.c;
  out.map.weights = theta.topRows(c_in);
  out.map.bias = theta.row(c_in);
  out.residual = (x * theta - target.data).norm();
  out.rank = rank;
  out.rank_deficient = rank < x.cols();
  return out;
}

// Non-owning view of a stitched composite g>j . T . f<=i.
struct StitchedModel {
  const FeedforwardNet& source;
  int source_layer;
  const FeedforwardNet& target;
  int target_layer;
  const AffineMap& map;

  void validate() const {
    nets::check_layer_index(source, source_layer);
    nets::check_layer_index(target, target_layer);
    if (map.in_width() != source.width(source_layer) || map.out_width() != target.width(target_layer))
      throw ShapeError("stitching map is " + std::to_string(map.in_width()) + "x" +
                       std::to_string(map.out_width()) + ", layers need " +
                       std::to_string(source.width(source_layer)) + "x" +
                       std::to_string(target.width(target_layer)));
  }

  Matrix stitched_representation(const Matrix& x) const {
    return map.apply(nets::forward_to(source, source_layer, x));
  }

  Matrix logits(const Matrix& x) const {
    validate();
    return nets::forward_from(target, target_layer, stitched_representation(x));
  }
};

struct StitchScore {
  double stitched_accuracy = 0.0;
  double target_accuracy = 0.0;
  double relative = 0.0;  // stitched / target
};

// Stitched accuracy divided by the accuracy of the intact target net.
inline StitchScore relative_accuracy(const StitchedModel& model, const LabeledDataset& data) {
  data.validate();
  StitchScore s;
  s.target_accuracy = nets::accuracy(model.target, data);
  if (!(s.target_accuracy > 0.0))
    throw DegenerateInputError("relative_accuracy: target net has zero accuracy");
  s.stitched_accuracy = nets::accuracy_of_logits(model.logits(data.inputs), data.labels);
  s.relative = s.stitched_accuracy / s.target_accuracy;
  return s;
}

// Summed cross-entropy of the stitched composite on pre-computed source
// activations, with gradients w.r.t. the map parameters.
struct MapGradient {
  double loss = 0.0;
  std::size_t correct = 0;
  Matrix weights;
  RowVector bias;
};

inline MapGradient tlm_gradient(const FeedforwardNet& target, int target_layer, const AffineMap& map,
                                const Matrix& source_acts, std::span<const int> labels) {
  const Matrix z = map.apply(source_acts);
  const auto trace = nets::forward_trace(target, target_layer, z);
  MapGradient g;
  g.loss = nets::cross_entropy_sum(trace.back(), labels);
  g.correct = nets::count_correct(trace.back(), labels);
  const Matrix dz =
      nets::backward(target, target_layer, trace, nets::cross_entropy_grad(trace.back(), labels), nullptr);
  g.weights = source_acts.transpose() * dz;
  g.bias = dz.colwise().sum();
  return g;
}

struct TlmResult {
  AffineMap map;
  TrainLog log;
};

// Trains only the map's parameters on the stitched task loss. Both halves
// must be frozen and are never written to.
inline TlmResult train_tlm(const FeedforwardNet& f, int i, const FeedforwardNet& g, int j,
                           const AffineMap& init, const LabeledDataset& data, const TrainConfig& cfg) {
  if (!f.frozen || !g.frozen) throw ArgumentError("train_tlm: source and target nets must be frozen");
  cfg.validate();
  data.validate();
  init.validate();
  StitchedModel{f, i, g, j, init}.validate();

  TlmResult out{init, {}};
  const Matrix source_acts = nets::forward_to(f, i, data.inputs);
  Matrix gw = Matrix::Zero(init.weights.rows(), init.weights.cols());
  RowVector gb = RowVector::Zero(init.bias.size());
  const std::vector<nets::ParamView> params{nets::view(out.map.weights), nets::view(out.map.bias)};
  const std::vector<nets::ParamView> grads{nets::view(gw), nets::view(gb)};
  auto zero = [&] {
    gw.setZero();
    gb.setZero();
  };
  out.log = nets::train_loop(params, grads, zero, static_cast<std::size_t>(data.size()), cfg,
                             [&](std::span<const std::size_t> batch) {
                               const Matrix a = nets::gather_rows(source_acts, batch);
                               const auto y = nets::gather_labels(data.labels, batch);
                               const MapGradient mg = tlm_gradient(g, j, out.map, a, y);
                               const double scale = 1.0 / static_cast<double>(batch.size());
                               gw = mg.weights * scale;
                               gb = mg.bias * scale;
                               return nets::BatchResult{mg.loss, mg.correct};
                             });
  return out;
}

// Fits the direct-matching map on k samples drawn (without replacement,
// SplitMix64 shuffle of the row order) from `data`.
inline DirectFit fit_direct_on_sample(const FeedforwardNet& f, int i, const FeedforwardNet& g, int j,
                                      const LabeledDataset& data, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> rows = iota_indices(static_cast<std::size_t>(data.size()));
  SplitMix64 rng(seed);
  rng.shuffle(rows);
  rows.resize(std::min(k, rows.size()));
  std::sort(rows.begin(), rows.end());
  const Matrix x = nets::gather_rows(data.inputs, rows);
  return fit_direct(ActivationSet::from_rows(nets::forward_to(f, i, x)),
                    ActivationSet::from_rows(nets::forward_to(g, j, x)));
}

enum class Method { Tlm, DmFunctional };

inline Method parse_method(std::string_view s) {
  if (s == "tlm") return Method::Tlm;
  if (s == "dm-func" || s == "dm-functional" || s == "dm") return Method::DmFunctional;
  throw ArgumentError("unknown stitching method '" + std::string(s) + "'");
}

inline const char* method_name(Method m) { return m == Method::Tlm ? "tlm" : "dm-func"; }

struct GridOptions {
  std::vector<int> source_layers;
  std::vector<int> target_layers;
  std::size_t dm_samples = 100;  // K
  TrainConfig tlm{100, 256, 1e-3, 1e-5, nets::Optimizer::Adam, 0};
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

inline std::vector<int> hidden_layers(const FeedforwardNet& net) {
  std::vector<int> v;
  for (int k = 1; k < net.depth(); ++k) v.push_back(k);
  return v;
}

// Relative accuracy of stitching every source layer of f into every target
// layer of g. Every cell gets its own derived seed (DM sample, TLM shuffling)
// so cells are independent and the grid is identical for any thread count.
// Cell failures are recorded and leave NaN rather than aborting the grid.
inline SimilarityGrid similarity_grid(const FeedforwardNet& f, const FeedforwardNet& g, Method method,
                                      const LabeledDataset& train, const LabeledDataset& eval,
                                      GridOptions opt) {
  if (opt.source_layers.empty()) opt.source_layers = hidden_layers(f);
  if (opt.target_layers.empty()) opt.target_layers = hidden_layers(g);
  SimilarityGrid grid;
  grid.index = method_name(method);
  grid.higher_is_similar = true;
  grid.source_layers = opt.source_layers;
  grid.target_layers = opt.target_layers;
  const auto rows = static_cast<Eigen::Index>(opt.source_layers.size());
  const auto cols = static_cast<Eigen::Index>(opt.target_layers.size());
  grid.values = Matrix::Constant(rows, cols, std::nan(""));
  grid.stitched_accuracy = Matrix::Constant(rows, cols, std::nan(""));
  grid.seeds = {opt.seed};
  grid.target_accuracy = nets::accuracy(g, eval);
  if (!(grid.target_accuracy > 0.0)) throw DegenerateInputError("similarity_grid: target accuracy is zero");

  FeedforwardNet ff = f, gg = g;
  ff.frozen = gg.frozen = true;
  std::vector<std::string> errors(static_cast<std::size_t>(rows * cols));
  parallel_for(static_cast<std::size_t>(rows * cols), opt.threads, [&](std::size_t cell) {
    const auto r = static_cast<Eigen::Index>(cell) / cols, c = static_cast<Eigen::Index>(cell) % cols;
    const int i = opt.source_layers[static_cast<std::size_t>(r)];
    const int j = opt.target_layers[static_cast<std::size_t>(c)];
    try {
      const std::uint64_t cell_seed = derive_seed(opt.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
      AffineMap map = fit_direct_on_sample(ff, i, gg, j, train, opt.dm_samples, cell_seed).map;
      if (method == Method::Tlm) {
        TrainConfig cfg = opt.tlm;
        cfg.seed = derive_seed(cell_seed, 1);
        map = train_tlm(ff, i, gg, j, map, train, cfg).map;
      }
      const double acc = nets::accuracy_of_logits(StitchedModel{ff, i, gg, j, map}.logits(eval.inputs), eval.labels);
      grid.stitched_accuracy(r, c) = acc;
      grid.values(r, c) = acc / grid.target_accuracy;
    } catch (const std::exception& e) {
      errors[cell] = "cell (" + std::to_string(i) + "," + std::to_string(j) + "): " + e.what();
    }
  });
  for (auto& e : errors)
    if (!e.empty()) grid.failures.push_back(std::move(e));
  return grid;
}

}  // namespace repsim::stitching
