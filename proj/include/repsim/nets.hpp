#pragma once

// Small fully-connected classifiers with hand-written backpropagation.
//
// Layer numbering: layer 0 is the input, layer k (1..m) is the output of the
// k-th dense+nonlinearity block, layer m is the logits. forward_to(i) is the
// front half f<=i, forward_from(i) the back half f>i. Each hidden layer is
// one unit of stitching granularity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "repsim/activations.hpp"
#include "repsim/errors.hpp"
#include "repsim/numerics.hpp"
#include "repsim/rng.hpp"

namespace repsim::nets {

enum class Nonlinearity : std::uint8_t { Identity = 0, Relu = 1 };

struct DenseLayer {
  Matrix weights;  // c_in x c_out
  RowVector bias;  // c_out
  Nonlinearity nonlinearity = Nonlinearity::Relu;
};

struct FeedforwardNet {
  std::vector<DenseLayer> layers;
  int num_classes = 0;
  bool frozen = false;

  int depth() const { return static_cast<int>(layers.size()); }

  // Width of layer i (0 = input).
  Eigen::Index width(int i) const {
    if (i < 0 || i > depth()) throw ArgumentError("layer index " + std::to_string(i) + " out of range");
    return i == 0 ? layers.front().weights.rows() : layers[static_cast<std::size_t>(i - 1)].weights.cols();
  }

  std::vector<Eigen::Index> widths() const {
    std::vector<Eigen::Index> w;
    for (int i = 0; i <= depth(); ++i) w.push_back(width(i));
    return w;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
  }

  void validate() const {
    if (layers.empty()) throw ArgumentError("net has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.bias.size() != l.weights.cols()) throw ShapeError("layer bias width mismatch");
      if (k > 0 && layers[k - 1].weights.cols() != l.weights.rows())
        throw ShapeError("layer " + std::to_string(k + 1) + " does not chain");
    }
    if (layers.back().nonlinearity != Nonlinearity::Identity)
      throw ArgumentError("final layer must be linear");
    if (layers.back().weights.cols() != num_classes) throw ShapeError("final width != num_classes");
  }

  bool operator==(const FeedforwardNet& o) const {
    if (num_classes != o.num_classes || layers.size() != o.layers.size()) return false;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto &a = layers[k], &b = o.layers[k];
      if (a.nonlinearity != b.nonlinearity || a.weights.rows() != b.weights.rows() ||
          a.weights.cols() != b.weights.cols() || a.weights != b.weights || a.bias != b.bias)
        return false;
    }
    return true;
  }
};

struct LabeledDataset {
  Matrix inputs;            // n x d
  std::vector<int> labels;  // n
  int num_classes = 0;

  Eigen::Index size() const { return inputs.rows(); }

  void validate() const {
    if (inputs.rows() < 1) throw ArgumentError("dataset is empty");
    if (static_cast<Eigen::Index>(labels.size()) != inputs.rows())
      throw ShapeError("dataset: label count != row count");
    for (int l : labels)
      if (l < 0 || l >= num_classes) throw ArgumentError("dataset: label out of range");
  }

  LabeledDataset subset(const std::vector<std::size_t>& rows) const {
    LabeledDataset d;
    d.num_classes = num_classes;
    d.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      d.inputs.row(static_cast<Eigen::Index>(k)) = inputs.row(static_cast<Eigen::Index>(rows[k]));
      d.labels.push_back(labels[rows[k]]);
    }
    return d;
  }
};

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  Optimizer optimizer = Optimizer::Adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ArgumentError("epochs must be >= 0");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
  }
};

struct EpochStats {
  double loss = 0.0;      // mean per-sample objective over the epoch
  double accuracy = 0.0;  // fraction correct on the epoch's batches
};

struct TrainLog {
  std::vector<EpochStats> epochs;
};

// ---------------------------------------------------------------- init ----

// Fan-in scaled uniform: U(-sqrt(6/fan_in), +) for relu layers and
// U(-sqrt(3/fan_in), +) for linear layers; zero biases.
inline FeedforwardNet init_net(const std::vector<Eigen::Index>& widths, Nonlinearity hidden,
                               std::uint64_t seed) {
  if (widths.size() < 2) throw ArgumentError("init_net: need at least two widths");
  for (auto w : widths)
    if (w < 1) throw ArgumentError("init_net: zero width");
  SplitMix64 rng(seed);
  FeedforwardNet net;
  net.num_classes = static_cast<int>(widths.back());
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    DenseLayer l;
    const bool last = k + 2 == widths.size();
    l.nonlinearity = last ? Nonlinearity::Identity : hidden;
    const double fan_in = static_cast<double>(widths[k]);
    const double bound = std::sqrt((l.nonlinearity == Nonlinearity::Relu ? 6.0 : 3.0) / fan_in);
    l.weights.resize(widths[k], widths[k + 1]);
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = rng.uniform(-bound, bound);
    l.bias = RowVector::Zero(widths[k + 1]);
    net.layers.push_back(std::move(l));
  }
  return net;
}

// ------------------------------------------------------------- forward ----

inline Matrix apply_layer(const DenseLayer& l, const Matrix& x) {
  Matrix z = x * l.weights;
  z.rowwise() += l.bias;
  if (l.nonlinearity == Nonlinearity::Relu) z = z.cwiseMax(0.0);
  return z;
}

inline void check_layer_index(const FeedforwardNet& net, int i) {
  if (i < 0 || i > net.depth())
    throw ArgumentError("layer index " + std::to_string(i) + " outside [0, " +
                        std::to_string(net.depth()) + "]");
}

inline void check_width(const FeedforwardNet& net, int i, const Matrix& a) {
  if (a.cols() != net.width(i))
    throw ShapeError("activation width " + std::to_string(a.cols()) + " != layer " +
                     std::to_string(i) + " width " + std::to_string(net.width(i)));
}

// f<=i
inline Matrix forward_to(const FeedforwardNet& net, int i, const Matrix& x) {
  check_layer_index(net, i);
  check_width(net, 0, x);
  Matrix a = x;
  for (int k = 0; k < i; ++k) a = apply_layer(net.layers[static_cast<std::size_t>(k)], a);
  return a;
}

// f>i
inline Matrix forward_from(const FeedforwardNet& net, int i, const Matrix& a) {
  check_layer_index(net, i);
  check_width(net, i, a);
  Matrix h = a;
  for (int k = i; k < net.depth(); ++k) h = apply_layer(net.layers[static_cast<std::size_t>(k)], h);
  return h;
}

inline Matrix forward(const FeedforwardNet& net, const Matrix& x) { return forward_to(net, net.depth(), x); }

// --------------------------------------------------------- loss, grads ----

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  const Vector sums = p.rowwise().sum();
  for (Eigen::Index r = 0; r < p.rows(); ++r) p.row(r) /= sums(r);
  return p;
}

inline Vector log_sum_exp_rows(const Matrix& logits) {
  const Vector mx = logits.rowwise().maxCoeff();
  Vector out(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    out(r) = mx(r) + std::log((logits.row(r).array() - mx(r)).exp().sum());
  return out;
}

inline void check_labels(std::span<const int> labels, Eigen::Index rows, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) throw ShapeError("label count != row count");
  for (int l : labels)
    if (l < 0 || l >= classes) throw ArgumentError("label out of range");
}

// Summed softmax cross-entropy.
inline double cross_entropy_sum(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  const Vector lse = log_sum_exp_rows(logits);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) total += lse(r) - logits(r, labels[static_cast<std::size_t>(r)]);
  return total;
}

// d(summed cross-entropy)/d(logits) = softmax - onehot.
inline Matrix cross_entropy_grad(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  Matrix g = softmax_rows(logits);
  for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
  return g;
}

// argmax with ties to the lowest index.
inline int argmax_row(const Matrix& m, Eigen::Index r) {
  int best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = static_cast<int>(c);
  return best;
}

inline std::size_t count_correct(const Matrix& logits, std::span<const int> labels) {
  std::size_t n = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    if (argmax_row(logits, r) == labels[static_cast<std::size_t>(r)]) ++n;
  return n;
}

struct NetGradients {
  std::vector<Matrix> weights;
  std::vector<RowVector> biases;

  static NetGradients zeros_like(const FeedforwardNet& net) {
    NetGradients g;
    for (const auto& l : net.layers) {
      g.weights.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
      g.biases.push_back(RowVector::Zero(l.bias.size()));
    }
    return g;
  }
};

// Activations of layers i..m starting from a (a itself is element 0).
inline std::vector<Matrix> forward_trace(const FeedforwardNet& net, int i, const Matrix& a) {
  check_layer_index(net, i);
  check_width(net, i, a);
  std::vector<Matrix> trace{a};
  for (int k = i; k < net.depth(); ++k) trace.push_back(apply_layer(net.layers[static_cast<std::size_t>(k)], trace.back()));
  return trace;
}

// Backpropagates d(loss)/d(logits) through layers m..i+1. Accumulates
// parameter gradients into `grads` when given; returns d(loss)/d(a_i).
inline Matrix backward(const FeedforwardNet& net, int i, const std::vector<Matrix>& trace,
                       Matrix dout, NetGradients* grads) {
  for (int k = net.depth(); k > i; --k) {
    const auto& layer = net.layers[static_cast<std::size_t>(k - 1)];
    const Matrix& out = trace[static_cast<std::size_t>(k - i)];
    const Matrix& in = trace[static_cast<std::size_t>(k - i - 1)];
    if (layer.nonlinearity == Nonlinearity::Relu)
      dout = (out.array() > 0.0).select(dout, 0.0);
    if (grads) {
      grads->weights[static_cast<std::size_t>(k - 1)].noalias() += in.transpose() * dout;
      grads->biases[static_cast<std::size_t>(k - 1)] += dout.colwise().sum();
    }
    dout = dout * layer.weights.transpose();
  }
  return dout;
}

// Gradient of the summed cross-entropy of f>i(a) w.r.t. a. Parameters untouched.
inline Matrix grad_wrt_intermediate(const FeedforwardNet& net, int i, const Matrix& a,
                                    std::span<const int> labels) {
  const auto trace = forward_trace(net, i, a);
  return backward(net, i, trace, cross_entropy_grad(trace.back(), labels), nullptr);
}

inline double loss_from(const FeedforwardNet& net, int i, const Matrix& a, std::span<const int> labels) {
  return cross_entropy_sum(forward_from(net, i, a), labels);
}

// ----------------------------------------------------------- optimizer ----

struct ParamView {
  double* data;
  Eigen::Index size;
};

inline ParamView view(Matrix& m) { return {m.data(), m.size()}; }
inline ParamView view(RowVector& v) { return {v.data(), v.size()}; }

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain SGD. Weight decay is
// decoupled: p -= lr * (update + weight_decay * p).
class ParamOptimizer {
 public:
  ParamOptimizer(const TrainConfig& cfg, std::span<const ParamView> params) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.push_back(Vector::Zero(p.size));
      v_.push_back(Vector::Zero(p.size));
    }
  }

  void step(std::span<const ParamView> params, std::span<const ParamView> grads) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Eigen::Map<Vector> p(params[k].data, params[k].size);
      Eigen::Map<const Vector> g(grads[k].data, grads[k].size);
      if (cfg_.optimizer == Optimizer::Sgd) {
        p -= cfg_.learning_rate * (g + cfg_.weight_decay * p);
      } else {
        m_[k] = b1 * m_[k] + (1.0 - b1) * g;
        v_[k] = b2 * v_[k] + (1.0 - b2) * g.cwiseProduct(g);
        const Vector update =
            (m_[k] / c1).array() / ((v_[k] / c2).array().sqrt() + eps);
        p -= cfg_.learning_rate * (update + cfg_.weight_decay * p);
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Vector> m_, v_;
  long t_ = 0;
};

inline std::vector<ParamView> param_views(FeedforwardNet& net) {
  std::vector<ParamView> v;
  for (auto& l : net.layers) {
    v.push_back(view(l.weights));
    v.push_back(view(l.bias));
  }
  return v;
}

inline std::vector<ParamView> param_views(NetGradients& g) {
  std::vector<ParamView> v;
  for (std::size_t k = 0; k < g.weights.size(); ++k) {
    v.push_back(view(g.weights[k]));
    v.push_back(view(g.biases[k]));
  }
  return v;
}

// Result of one minibatch: objective summed over the batch, number of
// correct predictions, and gradients of the *mean* objective.
struct BatchResult {
  double loss_sum = 0.0;
  std::size_t correct = 0;
};

// Generic minibatch loop over `rows` examples. Each epoch shuffles indices
// with a SplitMix64 stream seeded by cfg.seed and calls
// batch_fn(indices, grads) which fills grads and returns the batch result.
// Batches are consecutive slices of the shuffled order; the last may be short.
template <typename BatchFn>
TrainLog train_loop(std::span<const ParamView> params, std::span<const ParamView> grads,
                    const std::function<void()>& zero_grads, std::size_t rows,
                    const TrainConfig& cfg, BatchFn&& batch_fn) {
  cfg.validate();
  TrainLog log;
  if (cfg.epochs == 0 || rows == 0) return log;
  ParamOptimizer opt(cfg, params);
  SplitMix64 rng(cfg.seed);
  std::vector<std::size_t> order = iota_indices(rows);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(order);
    EpochStats stats;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < rows; start += bs) {
      const std::size_t end = std::min(rows, start + bs);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      zero_grads();
      const BatchResult r = batch_fn(batch);
      if (!std::isfinite(r.loss_sum))
        throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(e));
      stats.loss += r.loss_sum;
      correct += r.correct;
      opt.step(params, grads);
    }
    stats.loss /= static_cast<double>(rows);
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(rows);
    log.epochs.push_back(stats);
  }
  return log;
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

inline std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[r]);
  return out;
}

// Cross-entropy minibatch step for the whole net; scales grads to the mean.
inline BatchResult cross_entropy_batch(const FeedforwardNet& net, const Matrix& inputs,
                                       std::span<const int> labels, std::span<const std::size_t> batch,
                                       NetGradients& grads) {
  const Matrix x = gather_rows(inputs, batch);
  const std::vector<int> y = gather_labels(labels, batch);
  const auto trace = forward_trace(net, 0, x);
  const Matrix& logits = trace.back();
  BatchResult r{cross_entropy_sum(logits, y), count_correct(logits, y)};
  const Matrix dlogits = cross_entropy_grad(logits, y) / static_cast<double>(batch.size());
  backward(net, 0, trace, dlogits, &grads);
  return r;
}

inline TrainLog train(FeedforwardNet& net, const LabeledDataset& data, const TrainConfig& cfg) {
  if (net.frozen) throw ArgumentError("train: net is frozen");
  net.validate();
  data.validate();
  if (data.inputs.cols() != net.width(0)) throw ShapeError("train: dataset width != net input width");
  if (data.num_classes > net.num_classes) throw ShapeError("train: more classes than logits");
  NetGradients grads = NetGradients::zeros_like(net);
  const auto params = param_views(net);
  const auto gviews = param_views(grads);
  auto zero = [&] {
    for (auto& w : grads.weights) w.setZero();
    for (auto& b : grads.biases) b.setZero();
  };
  return train_loop(params, gviews, zero, static_cast<std::size_t>(data.size()), cfg,
                    [&](std::span<const std::size_t> batch) {
                      return cross_entropy_batch(net, data.inputs, data.labels, batch, grads);
                    });
}

inline double accuracy_of_logits(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  if (logits.rows() == 0) return 0.0;
  return static_cast<double>(count_correct(logits, labels)) / static_cast<double>(logits.rows());
}

inline double accuracy(const FeedforwardNet& net, const LabeledDataset& data) {
  return accuracy_of_logits(forward(net, data.inputs), data.labels);
}

inline ActivationSet extract(const FeedforwardNet& net, const LabeledDataset& data, int layer) {
  return ActivationSet::from_rows(forward_to(net, layer, data.inputs), data.labels);
}

// ---------------------------------------------------------- checkpoint ----

// Net checkpoint, little-endian:
//   8 bytes "RSNET\0\0\0", u32 version (1), u32 layer count m, u32 num_classes
//   u64[m+1] widths, u8[m] nonlinearity codes (0 identity, 1 relu)
//   f64 blob: per layer, weights row-major (c_in x c_out) then bias.
namespace checkpoint {

inline constexpr char kMagic[8] = {'R', 'S', 'N', 'E', 'T', 0, 0, 0};
inline constexpr std::uint32_t kVersion = 1;

inline std::vector<unsigned char> encode(const FeedforwardNet& net) {
  using actfile::detail::put_le;
  net.validate();
  std::vector<unsigned char> out(kMagic, kMagic + 8);
  put_le(out, kVersion);
  put_le(out, static_cast<std::uint32_t>(net.depth()));
  put_le(out, static_cast<std::uint32_t>(net.num_classes));
  for (auto w : net.widths()) put_le(out, static_cast<std::uint64_t>(w));
  for (const auto& l : net.layers) put_le(out, static_cast<std::uint8_t>(l.nonlinearity));
  for (const auto& l : net.layers) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) put_le(out, l.weights(r, c));
    for (Eigen::Index c = 0; c < l.bias.size(); ++c) put_le(out, l.bias(c));
  }
  return out;
}

inline FeedforwardNet decode(const std::vector<unsigned char>& bytes) {
  actfile::detail::Reader rd(bytes);
  rd.expect_magic(kMagic, "net checkpoint");
  if (rd.get<std::uint32_t>() != kVersion) throw IoError("net checkpoint: unsupported version");
  const auto m = rd.get<std::uint32_t>();
  FeedforwardNet net;
  net.num_classes = static_cast<int>(rd.get<std::uint32_t>());
  if (m == 0 || m > 4096) throw IoError("net checkpoint: bad layer count");
  std::vector<Eigen::Index> widths;
  for (std::uint32_t k = 0; k <= m; ++k) {
    const auto w = rd.get<std::uint64_t>();
    if (w == 0 || w > (1u << 24)) throw IoError("net checkpoint: bad width");
    widths.push_back(static_cast<Eigen::Index>(w));
  }
  std::vector<Nonlinearity> acts;
  for (std::uint32_t k = 0; k < m; ++k) {
    const auto code = rd.get<std::uint8_t>();
    if (code > 1) throw IoError("net checkpoint: bad nonlinearity code");
    acts.push_back(static_cast<Nonlinearity>(code));
  }
  for (std::uint32_t k = 0; k < m; ++k) {
    DenseLayer l;
    l.nonlinearity = acts[k];
    l.weights.resize(widths[k], widths[k + 1]);
    l.bias.resize(widths[k + 1]);
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = rd.get<double>();
    for (Eigen::Index c = 0; c < l.bias.size(); ++c) l.bias(c) = rd.get<double>();
    net.layers.push_back(std::move(l));
  }
  if (rd.remaining() != 0) throw IoError("net checkpoint: trailing bytes");
  net.validate();
  return net;
}

inline void save(const std::string& path, const FeedforwardNet& net) {
  actfile::detail::write_all(path, encode(net));
}
inline FeedforwardNet load(const std::string& path) { return decode(actfile::detail::read_all(path)); }

}  // namespace checkpoint
}  // namespace repsim::nets
