#pragma once

// Energy-based OOD scoring of layer activations. A detector is a classifier
// over (position-mean-pooled) activations of one layer, pre-trained with
// cross-entropy on in-distribution activations and then fine-tuned with an
// energy margin penalty against auxiliary OOD activations. Separability of
// target vs stitched activations is the AUROC of their energies, with the
// stitched set as the positive class (higher energy = more OOD), so 0.5
// means the detector cannot tell them apart.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "repsim/activations.hpp"
#include "repsim/errors.hpp"
#include "repsim/nets.hpp"
#include "repsim/ranks.hpp"
#include "repsim/report.hpp"
#include "repsim/rng.hpp"

namespace repsim::ood {

using nets::FeedforwardNet;
using nets::TrainConfig;

// -log sum_j exp(logit_j), max-shifted.
inline double energy_score(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("energy_score: no logits");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return -(mx + std::log(s));
}

inline Vector energy_scores(const Matrix& logits) { return -nets::log_sum_exp_rows(logits); }

inline double squared_hinge(double v) { return v > 0.0 ? v * v : 0.0; }

// mean_in max(0, e_in - m_in)^2 + mean_out max(0, m_out - e_out)^2
inline double energy_margin_loss(std::span<const double> e_in, std::span<const double> e_out,
                                 double m_in, double m_out) {
  double li = 0.0, lo = 0.0;
  for (double e : e_in) li += squared_hinge(e - m_in);
  for (double e : e_out) lo += squared_hinge(m_out - e);
  if (!e_in.empty()) li /= static_cast<double>(e_in.size());
  if (!e_out.empty()) lo /= static_cast<double>(e_out.size());
  return li + lo;
}

// d(energy_margin_loss)/d(logits) for each side, chained through the energy
// (d energy / d logits = -softmax).
struct MarginLossGrad {
  Matrix in;
  Matrix out;
};

inline MarginLossGrad energy_margin_grad(const Matrix& logits_in, const Matrix& logits_out, double m_in,
                                         double m_out) {
  MarginLossGrad g{nets::softmax_rows(logits_in), nets::softmax_rows(logits_out)};
  const Vector e_in = energy_scores(logits_in), e_out = energy_scores(logits_out);
  for (Eigen::Index r = 0; r < g.in.rows(); ++r) {
    const double h = std::max(0.0, e_in(r) - m_in);
    g.in.row(r) *= -2.0 * h / static_cast<double>(g.in.rows());
  }
  for (Eigen::Index r = 0; r < g.out.rows(); ++r) {
    const double h = std::max(0.0, m_out - e_out(r));
    g.out.row(r) *= 2.0 * h / static_cast<double>(g.out.rows());
  }
  return g;
}

struct EnergyDetector {
  FeedforwardNet net;
  double m_in = -7.0;
  double m_out = -3.0;
  double lambda = 0.1;
  std::string source_layer;

  EnergyDetector() = default;
  EnergyDetector(FeedforwardNet n, double min, double mout, double lam, std::string layer = {})
      : net(std::move(n)), m_in(min), m_out(mout), lambda(lam), source_layer(std::move(layer)) {
    validate();
  }

  void validate() const {
    if (!(m_in < m_out)) throw ArgumentError("EnergyDetector: m_in must be < m_out");
    if (!(lambda >= 0.0)) throw ArgumentError("EnergyDetector: lambda must be >= 0");
  }

  Vector energies(const ActivationSet& acts) const {
    return energy_scores(nets::forward(net, acts.position_mean()));
  }
};

struct DetectorConfig {
  std::vector<Eigen::Index> hidden{64, 64};
  TrainConfig pretrain{60, 64, 1e-3, 1e-5, nets::Optimizer::Adam, 0};
  // batch_size is the per-side count: each fine-tuning step sees batch_size
  // ID rows and batch_size OOD rows.
  TrainConfig finetune{40, 64, 1e-3, 1e-5, nets::Optimizer::Adam, 0};
  double m_in = -7.0;
  double m_out = -3.0;
  double lambda = 0.1;
  std::uint64_t seed = 0;
  std::string source_layer;
};

struct DetectorTraining {
  EnergyDetector detector;
  nets::TrainLog pretrain_log;
  nets::TrainLog finetune_log;
};

namespace detail {

inline void check_pair(const ActivationSet& id_acts, const ActivationSet& ood_acts) {
  if (!id_acts.has_labels()) throw ArgumentError("train_detector: ID activations need labels");
  if (id_acts.c != ood_acts.c || id_acts.s != ood_acts.s)
    throw ShapeError("train_detector: ID and OOD activations differ in layer shape");
}

inline int class_count(const std::vector<int>& labels) {
  int mx = 0;
  for (int l : labels) mx = std::max(mx, l);
  return mx + 1;
}

}  // namespace detail

// Fine-tuning stage: minibatch cross-entropy on ID rows + lambda * margin
// loss over the ID batch and an equal-sized OOD batch. OOD rows are drawn by
// cycling a separate shuffled order. With lambda == 0 the step is exactly
// the cross-entropy step used by nets::train.
inline nets::TrainLog finetune_energy(FeedforwardNet& net, const Matrix& id_x, const std::vector<int>& id_y,
                                      const Matrix& ood_x, const TrainConfig& cfg, double m_in, double m_out,
                                      double lambda, std::uint64_t ood_seed) {
  nets::NetGradients grads = nets::NetGradients::zeros_like(net);
  const auto params = nets::param_views(net);
  const auto gviews = nets::param_views(grads);
  auto zero = [&] {
    for (auto& w : grads.weights) w.setZero();
    for (auto& b : grads.biases) b.setZero();
  };
  SplitMix64 ood_rng(ood_seed);
  std::vector<std::size_t> ood_order = iota_indices(static_cast<std::size_t>(ood_x.rows()));
  ood_rng.shuffle(ood_order);
  std::size_t ood_pos = 0;

  return nets::train_loop(params, gviews, zero, id_y.size(), cfg, [&](std::span<const std::size_t> batch) {
    if (lambda == 0.0) return nets::cross_entropy_batch(net, id_x, id_y, batch, grads);

    std::vector<std::size_t> ood_batch;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      if (ood_pos == ood_order.size()) {
        ood_rng.shuffle(ood_order);
        ood_pos = 0;
      }
      ood_batch.push_back(ood_order[ood_pos++]);
    }
    const Matrix xin = nets::gather_rows(id_x, batch);
    const auto yin = nets::gather_labels(id_y, batch);
    const Matrix xout = nets::gather_rows(ood_x, ood_batch);
    const auto trace_in = nets::forward_trace(net, 0, xin);
    const auto trace_out = nets::forward_trace(net, 0, xout);
    const Matrix& lin = trace_in.back();
    const Matrix& lout = trace_out.back();

    const Vector ein = energy_scores(lin), eout = energy_scores(lout);
    const double margin = energy_margin_loss(std::span<const double>(ein.data(), ein.size()),
                                             std::span<const double>(eout.data(), eout.size()), m_in, m_out);
    const MarginLossGrad mg = energy_margin_grad(lin, lout, m_in, m_out);
    const double n = static_cast<double>(batch.size());
    const Matrix din = nets::cross_entropy_grad(lin, yin) / n + lambda * mg.in;
    const Matrix dout = lambda * mg.out;
    nets::backward(net, 0, trace_in, din, &grads);
    nets::backward(net, 0, trace_out, dout, &grads);
    return nets::BatchResult{nets::cross_entropy_sum(lin, yin) + lambda * margin * n, nets::count_correct(lin, yin)};
  });
}

// Two-stage detector training on one layer's activations.
inline DetectorTraining train_detector(const ActivationSet& id_acts, const ActivationSet& ood_acts,
                                       const DetectorConfig& cfg) {
  detail::check_pair(id_acts, ood_acts);
  const Matrix id_x = id_acts.position_mean();
  const Matrix ood_x = ood_acts.position_mean();
  if (!id_x.allFinite() || !ood_x.allFinite()) throw ArgumentError("train_detector: non-finite activations");
  const int classes = detail::class_count(id_acts.labels);

  std::vector<Eigen::Index> widths{id_acts.c};
  for (auto h : cfg.hidden) widths.push_back(h);
  widths.push_back(classes);
  DetectorTraining out;
  out.detector = EnergyDetector(nets::init_net(widths, nets::Nonlinearity::Relu, derive_seed(cfg.seed, 0)),
                                cfg.m_in, cfg.m_out, cfg.lambda, cfg.source_layer);

  nets::LabeledDataset id_data{id_x, id_acts.labels, classes};
  TrainConfig pre = cfg.pretrain;
  pre.seed = derive_seed(cfg.seed, 1);
  out.pretrain_log = nets::train(out.detector.net, id_data, pre);

  TrainConfig fine = cfg.finetune;
  fine.seed = derive_seed(cfg.seed, 2);
  out.finetune_log = finetune_energy(out.detector.net, id_x, id_acts.labels, ood_x, fine, cfg.m_in, cfg.m_out,
                                     cfg.lambda, derive_seed(cfg.seed, 3));
  return out;
}

// P(positive > negative) + 0.5 P(tie), via the Mann-Whitney rank sum.
inline double auroc(std::span<const double> negatives, std::span<const double> positives) {
  if (negatives.empty() || positives.empty()) throw ArgumentError("auroc: empty score list");
  std::vector<double> all(negatives.begin(), negatives.end());
  all.insert(all.end(), positives.begin(), positives.end());
  for (double v : all)
    if (std::isnan(v)) throw ArgumentError("auroc: NaN score");
  const auto ranks = average_ranks(all);
  double rank_sum = 0.0;
  for (std::size_t k = negatives.size(); k < all.size(); ++k) rank_sum += ranks[k];
  const double np = static_cast<double>(positives.size()), nn = static_cast<double>(negatives.size());
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

inline double auroc(const Vector& negatives, const Vector& positives) {
  return auroc(std::span<const double>(negatives.data(), static_cast<std::size_t>(negatives.size())),
               std::span<const double>(positives.data(), static_cast<std::size_t>(positives.size())));
}

// Negatives: target activations. Positives: stitched activations.
inline double separability(const EnergyDetector& detector, const ActivationSet& target_acts,
                           const ActivationSet& stitched_acts) {
  if (target_acts.c != detector.net.width(0) || stitched_acts.c != detector.net.width(0))
    throw ShapeError("separability: activation width does not match detector input");
  return auroc(detector.energies(target_acts), detector.energies(stitched_acts));
}

// Detector checkpoint = net checkpoint + JSON sidecar.
inline void save_detector(const std::string& net_path, const EnergyDetector& d) {
  nets::checkpoint::save(net_path, d.net);
  nlohmann::json j{{"m_in", d.m_in}, {"m_out", d.m_out}, {"lambda", d.lambda}, {"source_layer", d.source_layer}};
  report::write_text(net_path + ".json", j.dump(2) + "\n");
}

inline EnergyDetector load_detector(const std::string& net_path) {
  const auto j = nlohmann::json::parse(report::read_text(net_path + ".json"));
  return EnergyDetector(nets::checkpoint::load(net_path), j.at("m_in").get<double>(), j.at("m_out").get<double>(),
                        j.at("lambda").get<double>(), j.value("source_layer", std::string{}));
}

}  // namespace repsim::ood
