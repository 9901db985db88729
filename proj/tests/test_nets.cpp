#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "repsim/datasets.hpp"
#include "repsim/nets.hpp"

using namespace repsim;
using namespace repsim::nets;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::vector<int> random_labels(std::size_t n, int classes, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::size_t>(classes)));
  return y;
}

// True when some pre-activation downstream of layer i for row r sits at a ReLU
// kink, where central differences and the subgradient legitimately differ.
bool near_kink(const FeedforwardNet& net, int i, const Matrix& a, Eigen::Index r, double tol) {
  Matrix h = a.row(r);
  for (int k = i; k < net.depth(); ++k) {
    const auto& l = net.layers[static_cast<std::size_t>(k)];
    Matrix z = h * l.weights;
    z.rowwise() += l.bias;
    if (l.nonlinearity == Nonlinearity::Relu && z.cwiseAbs().minCoeff() < tol) return true;
    h = apply_layer(l, h);
  }
  return false;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

LabeledDataset blobs(std::uint64_t seed) {
  datasets::DatasetSpec spec;
  spec.generator = "blobs";
  spec.n = 300;
  spec.noise = 1.0;
  spec.seed = seed;
  return datasets::generate_dataset(spec);
}

}  // namespace

TEST(Forward, LayerZeroIsInputAndLastIsLogits) {
  const auto net = init_net({2, 8, 8, 3}, Nonlinearity::Relu, 1);
  const Matrix x = random_matrix(5, 2, 2);
  EXPECT_EQ(forward_to(net, 0, x), x);
  EXPECT_EQ(forward_to(net, net.depth(), x), forward(net, x));
  EXPECT_EQ(forward_from(net, 1, forward_to(net, 1, x)), forward(net, x));
  EXPECT_THROW(forward_to(net, 4, x), ArgumentError);
  EXPECT_THROW(forward_from(net, 1, random_matrix(5, 3, 3)), ShapeError);
}

TEST(Loss, ArgmaxTiesPickLowestIndex) {
  Matrix logits(2, 3);
  logits << 1.0, 1.0, 0.0, 0.0, 2.0, 2.0;
  EXPECT_EQ(argmax_row(logits, 0), 0);
  EXPECT_EQ(argmax_row(logits, 1), 1);
  const std::vector<int> y{0, 2};
  EXPECT_DOUBLE_EQ(accuracy_of_logits(logits, y), 0.5);
}

TEST(Loss, CrossEntropyStableForLargeLogits) {
  Matrix logits(1, 2);
  logits << 1000.0, 0.0;
  const std::vector<int> y{1};
  EXPECT_NEAR(cross_entropy_sum(logits, y), 1000.0, 1e-9);
}

TEST(Gradients, ParameterGradientsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto net = init_net({3, 6, 5, 4}, Nonlinearity::Relu, s);
    const Matrix x = random_matrix(7, 3, s + 10);
    const auto y = random_labels(7, 4, s + 20);
    NetGradients g = NetGradients::zeros_like(net);
    const auto trace = forward_trace(net, 0, x);
    backward(net, 0, trace, cross_entropy_grad(trace.back(), y), &g);
    const double h = 1e-6;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      Matrix& w = net.layers[k].weights;
      for (Eigen::Index i = 0; i < w.size(); i += 3) {
        const double orig = w.data()[i];
        w.data()[i] = orig + h;
        const double up = cross_entropy_sum(forward(net, x), y);
        w.data()[i] = orig - h;
        const double down = cross_entropy_sum(forward(net, x), y);
        w.data()[i] = orig;
        const double fd = (up - down) / (2 * h);
        if (std::abs(fd) > 1e-6 || std::abs(g.weights[k].data()[i]) > 1e-6) {
          EXPECT_LT(rel_err(g.weights[k].data()[i], fd), 1e-4);
        }
      }
      RowVector& b = net.layers[k].bias;
      for (Eigen::Index i = 0; i < b.size(); ++i) {
        const double orig = b(i);
        b(i) = orig + h;
        const double up = cross_entropy_sum(forward(net, x), y);
        b(i) = orig - h;
        const double down = cross_entropy_sum(forward(net, x), y);
        b(i) = orig;
        const double fd = (up - down) / (2 * h);
        if (std::abs(fd) > 1e-6) { EXPECT_LT(rel_err(g.biases[k](i), fd), 1e-4); }
      }
    }
  }
}

TEST(Gradients, IntermediateGradientMatchesFiniteDifferences) {
  const auto net = init_net({2, 6, 6, 6, 3}, Nonlinearity::Relu, 4);
  const Matrix x = random_matrix(6, 2, 5);
  const auto y = random_labels(6, 3, 6);
  int checked = 0;
  for (int i = 0; i < net.depth(); ++i) {
    Matrix a = forward_to(net, i, x);
    const Matrix g = grad_wrt_intermediate(net, i, a, y);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      if (near_kink(net, i, a, k % a.rows(), 1e-4)) continue;
      ++checked;
      const double orig = a.data()[k];
      a.data()[k] = orig + h;
      const double up = loss_from(net, i, a, y);
      a.data()[k] = orig - h;
      const double down = loss_from(net, i, a, y);
      a.data()[k] = orig;
      const double fd = (up - down) / (2 * h);
      if (std::abs(fd) > 1e-6) { EXPECT_LT(rel_err(g.data()[k], fd), 1e-4); }
    }
  }
  EXPECT_GT(checked, 40);
}

TEST(Training, DeterministicForSeed) {
  const auto data = blobs(1);
  TrainConfig cfg{5, 32, 1e-2, 1e-5, Optimizer::Adam, 9};
  auto a = init_net({2, 16, 16, 3}, Nonlinearity::Relu, 3), b = a;
  const auto la = train(a, data, cfg), lb = train(b, data, cfg);
  EXPECT_TRUE(a == b);
  ASSERT_EQ(la.epochs.size(), 5u);
  for (std::size_t e = 0; e < la.epochs.size(); ++e) EXPECT_EQ(la.epochs[e].loss, lb.epochs[e].loss);
  cfg.seed = 10;
  auto c = init_net({2, 16, 16, 3}, Nonlinearity::Relu, 3);
  train(c, data, cfg);
  EXPECT_FALSE(a == c);
}

TEST(Training, LearnsSeparableBlobs) {
  const auto data = blobs(2);
  auto net = init_net({2, 16, 3}, Nonlinearity::Relu, 5);
  train(net, data, {30, 32, 1e-2, 1e-5, Optimizer::Adam, 1});
  EXPECT_GE(accuracy(net, data), 0.99);
}

TEST(Training, SmallSgdStepDescends) {
  const auto data = blobs(3);
  auto net = init_net({2, 8, 8, 3}, Nonlinearity::Relu, 6);
  const double before = cross_entropy_sum(forward(net, data.inputs), data.labels);
  train(net, data, {1, static_cast<int>(data.size()), 1e-4, 0.0, Optimizer::Sgd, 1});
  EXPECT_LT(cross_entropy_sum(forward(net, data.inputs), data.labels), before);
}

TEST(Training, ZeroEpochsLeavesNetAndFrozenIsRejected) {
  const auto data = blobs(4);
  auto net = init_net({2, 8, 3}, Nonlinearity::Relu, 7);
  const auto copy = net;
  train(net, data, {0, 32, 1e-3, 0.0, Optimizer::Adam, 1});
  EXPECT_TRUE(net == copy);
  net.frozen = true;
  EXPECT_THROW(train(net, data, {1, 32, 1e-3, 0.0, Optimizer::Adam, 1}), ArgumentError);
  net.frozen = false;
  EXPECT_THROW(train(net, data, {1, 0, 1e-3, 0.0, Optimizer::Adam, 1}), ArgumentError);
}

TEST(Training, DivergenceIsReported) {
  auto data = blobs(5);
  data.inputs *= 1e200;
  auto net = init_net({2, 8, 3}, Nonlinearity::Relu, 8);
  EXPECT_THROW(train(net, data, {2, 32, 1.0, 0.0, Optimizer::Sgd, 1}), NumericalError);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  const auto net = init_net({2, 7, 5, 3}, Nonlinearity::Relu, 11);
  EXPECT_TRUE(checkpoint::decode(checkpoint::encode(net)) == net);
  const auto path = (std::filesystem::temp_directory_path() / "repsim_ckpt_test.bin").string();
  checkpoint::save(path, net);
  EXPECT_TRUE(checkpoint::load(path) == net);
  std::filesystem::remove(path);
  auto bytes = checkpoint::encode(net);
  bytes[0] = 'X';
  EXPECT_THROW(checkpoint::decode(bytes), IoError);
  bytes = checkpoint::encode(net);
  bytes.resize(bytes.size() - 1);
  EXPECT_THROW(checkpoint::decode(bytes), IoError);
}

TEST(Extract, MatchesForwardAndCarriesLabels) {
  const auto data = blobs(6);
  const auto net = init_net({2, 4, 3}, Nonlinearity::Relu, 12);
  const auto a = extract(net, data, 1);
  EXPECT_EQ(a.n, data.size());
  EXPECT_EQ(a.s, 1);
  EXPECT_EQ(a.labels, data.labels);
  EXPECT_EQ(a.data, forward_to(net, 1, data.inputs));
}
