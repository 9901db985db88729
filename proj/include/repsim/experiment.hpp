#pragma once

// Experiment orchestration: JSON configs, dataset and model preparation, and
// the pipelines behind each CLI verb. Every artifact is written through an
// ArtifactWriter that stamps it with the config hash and base seed; nothing
// time- or host-dependent is ever written, so equal configs give
// byte-identical outputs for any thread count.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "repsim/activations.hpp"
#include "repsim/datasets.hpp"
#include "repsim/errors.hpp"
#include "repsim/grid.hpp"
#include "repsim/heatmap.hpp"
#include "repsim/nets.hpp"
#include "repsim/ood.hpp"
#include "repsim/parallel.hpp"
#include "repsim/report.hpp"
#include "repsim/simindex.hpp"
#include "repsim/stats.hpp"
#include "repsim/stitching.hpp"

namespace repsim::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kToolVersion = "repsim 1.0.0";

// Raised for config problems detected before any compute (exit code 2).
class ValidationError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

// ------------------------------------------------------------- config ----

struct ModelSpec {
  std::vector<Eigen::Index> hidden{32, 32, 32, 32, 32, 32};
  int instances = 5;
  nets::TrainConfig train{100, 64, 1e-3, 1e-5, nets::Optimizer::Adam, 0};
  std::string checkpoint_dir;  // load net{k}.bin from here instead of training
};

struct StitchingSpec {
  std::size_t dm_samples = 100;
  nets::TrainConfig tlm{100, 256, 1e-3, 1e-5, nets::Optimizer::Adam, 0};
};

struct OodSpec {
  int target_instance = 0;
  int source_instance = -1;  // -1: same as target (self-stitching)
  double inflate = 3.0;      // OOD inputs: uniform in the inflated input bounding box
  Eigen::Index n_ood = 0;    // 0: same as the training split
  ood::DetectorConfig detector;
};

struct SensitivitySpec {
  int instance = 0;
  std::vector<int> layers;             // empty: all hidden layers
  std::vector<Eigen::Index> ranks;     // empty: derived from the layer width
};

struct SpecificitySpec {
  std::vector<int> layers;  // empty: all hidden layers
  int anchor = 0;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string kind = "sanity-check";
  std::uint64_t seed = 0;
  bool seed_given = false;
  datasets::DatasetSpec dataset;
  bool dataset_seed_given = false;
  double test_fraction = 0.3;
  ModelSpec model;
  std::vector<std::string> methods;
  StitchingSpec stitching;
  OodSpec ood;
  SensitivitySpec sensitivity;
  SpecificitySpec specificity;
  stats::ProbeConfig probe;
  std::string output_dir = "out";
  unsigned threads = 1;  // runtime only; not part of the config hash
};

inline const std::set<std::string>& known_kinds() {
  static const std::set<std::string> k{"train-models", "similarity-grid", "sanity-check",
                                       "ood-grid",     "sensitivity",     "specificity"};
  return k;
}

inline const std::set<std::string>& known_methods() {
  static const std::set<std::string> m{"lcka", "pwcca", "opd", "dm-struct", "dm-func", "tlm"};
  return m;
}

namespace detail {

inline std::string optimizer_name(nets::Optimizer o) { return o == nets::Optimizer::Sgd ? "sgd" : "adam"; }

inline nets::Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return nets::Optimizer::Sgd;
  if (s == "adam") return nets::Optimizer::Adam;
  throw ValidationError("unknown optimizer '" + s + "'");
}

inline json train_to_json(const nets::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"optimizer", optimizer_name(t.optimizer)}};
}

inline nets::TrainConfig train_from_json(const json& j, nets::TrainConfig t) {
  if (!j.is_object()) throw ValidationError("train config must be an object");
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  if (j.contains("optimizer")) t.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  try {
    t.validate();
  } catch (const ArgumentError& e) {
    throw ValidationError(e.what());
  }
  return t;
}

template <typename T>
std::vector<T> list_or(const json& j, const char* key, std::vector<T> fallback) {
  return j.contains(key) ? j.at(key).get<std::vector<T>>() : fallback;
}

}  // namespace detail

// Fully-resolved config (defaults and derived seeds filled in). Hash input.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["version"] = c.version;
  j["kind"] = c.kind;
  j["seed"] = c.seed;
  j["dataset"] = {{"generator", c.dataset.generator}, {"n", c.dataset.n},
                  {"classes", c.dataset.classes},     {"dim", c.dataset.dim},
                  {"noise", c.dataset.noise},         {"separation", c.dataset.separation},
                  {"low", c.dataset.low},             {"high", c.dataset.high},
                  {"seed", c.dataset.seed},           {"test_fraction", c.test_fraction}};
  j["model"] = {{"hidden", c.model.hidden},
                {"instances", c.model.instances},
                {"train", detail::train_to_json(c.model.train)},
                {"checkpoint_dir", c.model.checkpoint_dir}};
  j["methods"] = c.methods;
  j["stitching"] = {{"dm_samples", c.stitching.dm_samples}, {"tlm", detail::train_to_json(c.stitching.tlm)}};
  j["ood"] = {{"target_instance", c.ood.target_instance},
              {"source_instance", c.ood.source_instance},
              {"inflate", c.ood.inflate},
              {"n_ood", c.ood.n_ood},
              {"hidden", c.ood.detector.hidden},
              {"pretrain", detail::train_to_json(c.ood.detector.pretrain)},
              {"finetune", detail::train_to_json(c.ood.detector.finetune)},
              {"m_in", c.ood.detector.m_in},
              {"m_out", c.ood.detector.m_out},
              {"lambda", c.ood.detector.lambda}};
  j["sensitivity"] = {{"instance", c.sensitivity.instance},
                      {"layers", c.sensitivity.layers},
                      {"ranks", c.sensitivity.ranks}};
  j["specificity"] = {{"layers", c.specificity.layers}, {"anchor", c.specificity.anchor}};
  j["probe"] = {{"train", detail::train_to_json(c.probe.train)},
                {"holdout_fraction", c.probe.holdout_fraction},
                {"held_out", c.probe.held_out}};
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) { return report::hex64(report::fnv1a(to_json(c).dump())); }

inline void validate(const ExperimentConfig& c) {
  if (c.version != kConfigVersion)
    throw ValidationError("unsupported config version " + std::to_string(c.version));
  if (!known_kinds().count(c.kind)) throw ValidationError("unknown experiment kind '" + c.kind + "'");
  if (!c.seed_given) throw ValidationError("config must set a seed");
  try {
    c.dataset.validate();
  } catch (const ArgumentError& e) {
    throw ValidationError(e.what());
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ValidationError("test_fraction must be in (0,1)");
  if (c.model.instances < 1) throw ValidationError("model.instances must be >= 1");
  if (c.model.hidden.empty()) throw ValidationError("model.hidden must list at least one hidden width");
  for (auto w : c.model.hidden)
    if (w < 1) throw ValidationError("model.hidden widths must be >= 1");
  if (c.kind != "train-models" && c.methods.empty()) throw ValidationError("method list is empty");
  for (const auto& m : c.methods)
    if (!known_methods().count(m)) throw ValidationError("unknown method '" + m + "'");
  if (c.stitching.dm_samples < 1) throw ValidationError("stitching.dm_samples must be >= 1");
  const int depth = static_cast<int>(c.model.hidden.size()) + 1;
  auto check_layers = [&](const std::vector<int>& ls, const char* what) {
    for (int l : ls)
      if (l < 1 || l >= depth) throw ValidationError(std::string(what) + ": layer " + std::to_string(l) + " is not a hidden layer");
  };
  check_layers(c.sensitivity.layers, "sensitivity.layers");
  check_layers(c.specificity.layers, "specificity.layers");
  if (c.kind == "ood-grid") {
    if (c.ood.target_instance < 0 || c.ood.target_instance >= c.model.instances)
      throw ValidationError("ood.target_instance out of range");
    if (c.ood.source_instance >= c.model.instances) throw ValidationError("ood.source_instance out of range");
    if (!(c.ood.detector.m_in < c.ood.detector.m_out)) throw ValidationError("ood: m_in must be < m_out");
    if (!(c.ood.inflate > 0.0)) throw ValidationError("ood.inflate must be > 0");
    for (const auto& m : c.methods)
      if (m != "dm-func" && m != "tlm") throw ValidationError("ood-grid supports methods dm-func and tlm only");
  }
  if (c.kind == "sensitivity") {
    if (c.sensitivity.instance < 0 || c.sensitivity.instance >= c.model.instances)
      throw ValidationError("sensitivity.instance out of range");
    for (const auto& m : c.methods)
      if (m == "tlm") throw ValidationError("sensitivity test does not support tlm");
    if (!c.sensitivity.ranks.empty() && c.sensitivity.ranks.size() < stats::kMinTestSetSize)
      throw ValidationError("sensitivity.ranks needs at least 5 entries");
  }
  if (c.kind == "specificity") {
    if (c.model.instances < 3) throw ValidationError("specificity needs at least 3 instances");
    if (c.specificity.anchor < 0 || c.specificity.anchor >= c.model.instances)
      throw ValidationError("specificity.anchor out of range");
    for (const auto& m : c.methods)
      if (m == "tlm") throw ValidationError("specificity test does not support tlm");
  }
}

inline ExperimentConfig from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  ExperimentConfig c;
  try {
    c.version = j.value("version", kConfigVersion);
    c.kind = j.value("kind", c.kind);
    if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
      c.seed_given = true;
    }
    c.dataset.seed = derive_seed(c.seed, 1);
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      c.dataset.generator = d.value("generator", c.dataset.generator);
      c.dataset.n = d.value("n", c.dataset.n);
      c.dataset.classes = d.value("classes", c.dataset.classes);
      c.dataset.dim = d.value("dim", c.dataset.dim);
      c.dataset.noise = d.value("noise", c.dataset.noise);
      c.dataset.separation = d.value("separation", c.dataset.separation);
      c.dataset.low = d.value("low", c.dataset.low);
      c.dataset.high = d.value("high", c.dataset.high);
      if (d.contains("seed")) {
        c.dataset.seed = d.at("seed").get<std::uint64_t>();
        c.dataset_seed_given = true;
      }
      c.test_fraction = d.value("test_fraction", c.test_fraction);
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      c.model.hidden = detail::list_or<Eigen::Index>(m, "hidden", c.model.hidden);
      c.model.instances = m.value("instances", c.model.instances);
      if (m.contains("train")) c.model.train = detail::train_from_json(m.at("train"), c.model.train);
      c.model.checkpoint_dir = m.value("checkpoint_dir", c.model.checkpoint_dir);
    }
    c.methods = detail::list_or<std::string>(j, "methods", {});
    if (j.contains("stitching")) {
      const json& s = j.at("stitching");
      c.stitching.dm_samples = s.value("dm_samples", c.stitching.dm_samples);
      if (s.contains("tlm")) c.stitching.tlm = detail::train_from_json(s.at("tlm"), c.stitching.tlm);
    }
    if (j.contains("ood")) {
      const json& o = j.at("ood");
      c.ood.target_instance = o.value("target_instance", c.ood.target_instance);
      c.ood.source_instance = o.value("source_instance", c.ood.source_instance);
      c.ood.inflate = o.value("inflate", c.ood.inflate);
      c.ood.n_ood = o.value("n_ood", c.ood.n_ood);
      c.ood.detector.hidden = detail::list_or<Eigen::Index>(o, "hidden", c.ood.detector.hidden);
      if (o.contains("pretrain")) c.ood.detector.pretrain = detail::train_from_json(o.at("pretrain"), c.ood.detector.pretrain);
      if (o.contains("finetune")) c.ood.detector.finetune = detail::train_from_json(o.at("finetune"), c.ood.detector.finetune);
      c.ood.detector.m_in = o.value("m_in", c.ood.detector.m_in);
      c.ood.detector.m_out = o.value("m_out", c.ood.detector.m_out);
      c.ood.detector.lambda = o.value("lambda", c.ood.detector.lambda);
    }
    if (j.contains("sensitivity")) {
      const json& s = j.at("sensitivity");
      c.sensitivity.instance = s.value("instance", c.sensitivity.instance);
      c.sensitivity.layers = detail::list_or<int>(s, "layers", {});
      c.sensitivity.ranks = detail::list_or<Eigen::Index>(s, "ranks", {});
    }
    if (j.contains("specificity")) {
      const json& s = j.at("specificity");
      c.specificity.layers = detail::list_or<int>(s, "layers", {});
      c.specificity.anchor = s.value("anchor", c.specificity.anchor);
    }
    if (j.contains("probe")) {
      const json& p = j.at("probe");
      if (p.contains("train")) c.probe.train = detail::train_from_json(p.at("train"), c.probe.train);
      c.probe.holdout_fraction = p.value("holdout_fraction", c.probe.holdout_fraction);
      c.probe.held_out = p.value("held_out", c.probe.held_out);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

// Overrides the base seed; the dataset seed follows unless set explicitly.
inline void set_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.seed_given = true;
  if (!c.dataset_seed_given) c.dataset.seed = derive_seed(seed, 1);
}

inline ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(report::read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  } catch (const IoError& e) {
    throw ValidationError(e.what());
  }
  return from_json(j);
}

// ----------------------------------------------------------- artifacts ----

class ArtifactWriter {
 public:
  ArtifactWriter(fs::path root, std::string hash, std::uint64_t seed)
      : root_(std::move(root)), hash_(std::move(hash)), seed_(seed) {}

  const fs::path& root() const { return root_; }
  std::string stamp() const { return "repsim config_hash=" + hash_ + " seed=" + std::to_string(seed_); }

  void csv(const std::string& rel, const std::string& body) { text(rel, "# " + stamp() + "\n" + body); }

  void json_file(const std::string& rel, json j) {
    j["config_hash"] = hash_;
    j["seed"] = seed_;
    text(rel, j.dump(2) + "\n");
  }

  void binary(const std::string& rel, const std::vector<unsigned char>& bytes) {
    fs::create_directories((root_ / rel).parent_path());
    actfile::detail::write_all((root_ / rel).string(), bytes);
    outputs_.insert(rel);
  }

  void text(const std::string& rel, const std::string& body) {
    report::write_text(root_ / rel, body);
    outputs_.insert(rel);
  }

  void grid(const std::string& stem, const SimilarityGrid& g, bool with_heatmap) {
    csv(stem + ".csv", grid_to_csv(g));
    json_file(stem + ".json", grid_to_json(g));
    if (with_heatmap) {
      binary(stem + ".ppm", heatmap::to_ppm(g.values, 16, stamp()));
      text(stem + ".svg", heatmap::to_svg(g, 32, stamp()));
    }
  }

  const std::set<std::string>& outputs() const { return outputs_; }

 private:
  fs::path root_;
  std::string hash_;
  std::uint64_t seed_;
  std::set<std::string> outputs_;
};

// ------------------------------------------------------------ pipeline ----

struct StageRecord {
  explicit StageRecord(std::string n) : name(std::move(n)) {}
  std::string name;
  bool ok = true;
  std::string error;
};

struct RunResult {
  std::vector<StageRecord> stages;
  std::string config_hash;
  fs::path output_dir;
  json summary;  // headline numbers per experiment kind

  bool any_failed() const {
    return std::any_of(stages.begin(), stages.end(), [](const StageRecord& s) { return !s.ok; });
  }
  int exit_code() const { return any_failed() ? 3 : 0; }
};

struct Workspace {
  ExperimentConfig cfg;
  datasets::Split data;
  std::vector<nets::FeedforwardNet> nets;
  std::vector<double> test_accuracy;
};

inline std::uint64_t instance_seed(const ExperimentConfig& c, int k, int purpose) {
  return derive_seed(c.seed, 100 + static_cast<std::uint64_t>(purpose), static_cast<std::uint64_t>(k));
}

inline std::vector<Eigen::Index> model_widths(const ExperimentConfig& c, const nets::LabeledDataset& d) {
  std::vector<Eigen::Index> w{d.inputs.cols()};
  w.insert(w.end(), c.model.hidden.begin(), c.model.hidden.end());
  w.push_back(d.num_classes);
  return w;
}

inline Workspace prepare(const ExperimentConfig& cfg, ArtifactWriter& out, std::ostream& log) {
  Workspace ws;
  ws.cfg = cfg;
  const auto full = datasets::generate_dataset(cfg.dataset);
  ws.data = datasets::train_test_split(full, cfg.test_fraction, derive_seed(cfg.seed, 2));
  const auto widths = model_widths(cfg, full);
  ws.nets.resize(static_cast<std::size_t>(cfg.model.instances));
  parallel_for(ws.nets.size(), cfg.threads, [&](std::size_t k) {
    if (!cfg.model.checkpoint_dir.empty()) {
      ws.nets[k] = nets::checkpoint::load((fs::path(cfg.model.checkpoint_dir) / ("net" + std::to_string(k) + ".bin")).string());
      if (ws.nets[k].widths() != widths) throw ShapeError("checkpoint net" + std::to_string(k) + " has the wrong architecture");
      return;
    }
    auto net = nets::init_net(widths, nets::Nonlinearity::Relu, instance_seed(cfg, static_cast<int>(k), 0));
    nets::TrainConfig tc = cfg.model.train;
    tc.seed = instance_seed(cfg, static_cast<int>(k), 1);
    nets::train(net, ws.data.train, tc);
    ws.nets[k] = std::move(net);
  });
  std::ostringstream summary;
  summary << "instance,train_accuracy,test_accuracy\n";
  for (std::size_t k = 0; k < ws.nets.size(); ++k) {
    ws.nets[k].frozen = true;
    ws.test_accuracy.push_back(nets::accuracy(ws.nets[k], ws.data.test));
    summary << k << ',' << report::format_double(nets::accuracy(ws.nets[k], ws.data.train)) << ','
            << report::format_double(ws.test_accuracy.back()) << '\n';
    out.binary("models/net" + std::to_string(k) + ".bin", nets::checkpoint::encode(ws.nets[k]));
  }
  out.csv("models/summary.csv", summary.str());
  log << "prepared " << ws.nets.size() << " instances, train " << ws.data.train.size() << " / test "
      << ws.data.test.size() << " samples\n";
  return ws;
}

// Structural index grid between two nets over the held-out split.
inline SimilarityGrid structural_grid(const nets::FeedforwardNet& f, const nets::FeedforwardNet& g,
                                      simindex::Index index, const nets::LabeledDataset& eval, unsigned threads) {
  SimilarityGrid grid;
  grid.index = simindex::index_name(index);
  grid.higher_is_similar = simindex::higher_is_similar(index);
  grid.source_layers = stitching::hidden_layers(f);
  grid.target_layers = stitching::hidden_layers(g);
  const auto rows = static_cast<Eigen::Index>(grid.source_layers.size());
  const auto cols = static_cast<Eigen::Index>(grid.target_layers.size());
  grid.values = Matrix::Constant(rows, cols, std::nan(""));
  std::vector<ActivationSet> fa, ga;
  for (int l : grid.source_layers) fa.push_back(nets::extract(f, eval, l));
  for (int l : grid.target_layers) ga.push_back(nets::extract(g, eval, l));
  std::vector<std::string> errors(static_cast<std::size_t>(rows * cols));
  parallel_for(errors.size(), threads, [&](std::size_t cell) {
    const auto r = static_cast<Eigen::Index>(cell) / cols, c = static_cast<Eigen::Index>(cell) % cols;
    try {
      grid.values(r, c) = simindex::compute(index, fa[static_cast<std::size_t>(r)], ga[static_cast<std::size_t>(c)]);
    } catch (const std::exception& e) {
      errors[cell] = "cell (" + std::to_string(grid.source_layers[static_cast<std::size_t>(r)]) + "," +
                     std::to_string(grid.target_layers[static_cast<std::size_t>(c)]) + "): " + e.what();
    }
  });
  for (auto& e : errors)
    if (!e.empty()) grid.failures.push_back(std::move(e));
  return grid;
}

inline SimilarityGrid method_grid(const Workspace& ws, const std::string& method, std::size_t a, std::size_t b) {
  const auto& cfg = ws.cfg;
  SimilarityGrid g;
  if (method == "dm-func" || method == "tlm") {
    stitching::GridOptions opt;
    opt.dm_samples = cfg.stitching.dm_samples;
    opt.tlm = cfg.stitching.tlm;
    opt.seed = derive_seed(cfg.seed, 300, a, b);
    opt.threads = cfg.threads;
    g = stitching::similarity_grid(ws.nets[a], ws.nets[b], stitching::parse_method(method), ws.data.train,
                                   ws.data.test, opt);
  } else {
    g = structural_grid(ws.nets[a], ws.nets[b], simindex::parse_index(method), ws.data.test, cfg.threads);
    g.seeds = {cfg.seed};
  }
  g.source_id = "net" + std::to_string(a);
  g.target_id = "net" + std::to_string(b);
  return g;
}

// Published full-scale layer identification accuracies (intra RN-18, intra
// ViT-Ti, inter RN-18, inter ViT-Ti), emitted next to the toy table.
inline const std::map<std::string, std::array<double, 4>>& fullscale_identification_reference() {
  static const std::map<std::string, std::array<double, 4>> ref{
      {"pwcca", {1.0, 1.0, 0.125, 0.0833}},   {"opd", {1.0, 1.0, 0.1917, 0.1833}},
      {"lcka", {1.0, 1.0, 0.9611, 0.3481}},   {"tlm", {0.6375, 0.2417, 0.3528, 0.10}},
      {"dm-struct", {1.0, 1.0, 0.925, 0.2519}}, {"dm-func", {1.0, 1.0, 0.6639, 0.1185}}};
  return ref;
}

struct IdentificationTally {
  std::size_t correct = 0, rows = 0, ties = 0, nan_cells = 0;
  void add(const stats::Identification& id) {
    correct += id.correct;
    rows += id.rows;
    ties += id.ties;
    nan_cells += id.nan_cells;
  }
  double accuracy() const { return rows ? static_cast<double>(correct) / static_cast<double>(rows) : std::nan(""); }
};

// Grids for all ordered instance pairs (a, b) and, in sanity mode, the layer
// identification table: intra from a == b, inter from a != b.
inline void run_grids(const Workspace& ws, ArtifactWriter& out, RunResult& res, bool sanity, std::ostream& log) {
  const auto n = ws.nets.size();
  std::ostringstream table;
  table << "index,intra,inter,intra_correct,intra_rows,intra_ties,inter_correct,inter_rows,inter_ties,failed_cells\n";
  json summary = json::object();
  for (const auto& method : ws.cfg.methods) {
    StageRecord stage{"grids:" + method};
    IdentificationTally intra, inter;
    std::size_t failed = 0;
    try {
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          const SimilarityGrid g = method_grid(ws, method, a, b);
          failed += g.failures.size();
          out.grid("grids/" + method + "/net" + std::to_string(a) + "-net" + std::to_string(b), g, a == b);
          const auto id = stats::layer_identification(
              g, a == b ? stats::IdentificationMode::Intra : stats::IdentificationMode::Inter);
          (a == b ? intra : inter).add(id);
        }
      if (failed) {
        stage.ok = false;
        stage.error = std::to_string(failed) + " grid cells failed";
      }
    } catch (const std::exception& e) {
      stage.ok = false;
      stage.error = e.what();
    }
    table << method << ',' << report::format_double(intra.accuracy()) << ','
          << report::format_double(inter.accuracy()) << ',' << intra.correct << ',' << intra.rows << ','
          << intra.ties << ',' << inter.correct << ',' << inter.rows << ',' << inter.ties << ',' << failed << '\n';
    summary[method] = {{"intra", intra.rows ? json(intra.accuracy()) : json(nullptr)},
                       {"inter", inter.rows ? json(inter.accuracy()) : json(nullptr)},
                       {"intra_ties", intra.ties},
                       {"inter_ties", inter.ties}};
    log << method << ": intra " << intra.accuracy() << " inter " << inter.accuracy() << '\n';
    res.stages.push_back(stage);
  }
  if (sanity) {
    out.csv("identification.csv", table.str());
    std::ostringstream ref;
    ref << "index,intra_rn18,intra_vit_ti,inter_rn18,inter_vit_ti\n";
    for (const auto& method : ws.cfg.methods) {
      const auto it = fullscale_identification_reference().find(method);
      if (it == fullscale_identification_reference().end()) continue;
      ref << method;
      for (double v : it->second) ref << ',' << report::format_double(v);
      ref << '\n';
    }
    out.csv("identification_fullscale_reference.csv", ref.str());
  }
  res.summary["identification"] = summary;
}

// Activations translated by ten times their per-channel range.
inline ActivationSet far_shifted(const ActivationSet& acts, double factor = 10.0) {
  const RowVector range = acts.data.colwise().maxCoeff() - acts.data.colwise().minCoeff();
  const RowVector shift = (factor * range.array().max(1.0)).matrix();
  return acts.with_data(acts.data.rowwise() + shift);
}

inline void run_ood(const Workspace& ws, ArtifactWriter& out, RunResult& res, std::ostream& log) {
  const auto& cfg = ws.cfg;
  const auto t = static_cast<std::size_t>(cfg.ood.target_instance);
  const auto s = static_cast<std::size_t>(cfg.ood.source_instance < 0 ? cfg.ood.target_instance : cfg.ood.source_instance);
  const auto& target = ws.nets[t];
  const auto& source = ws.nets[s];
  const auto layers = stitching::hidden_layers(target);
  const Eigen::Index n_ood = cfg.ood.n_ood > 0 ? cfg.ood.n_ood : ws.data.train.size();
  const Matrix ood_inputs = datasets::uniform_noise_like(ws.data.train.inputs, n_ood, cfg.ood.inflate, derive_seed(cfg.seed, 400));

  StageRecord det_stage{"ood:detectors"};
  std::vector<ood::EnergyDetector> detectors(layers.size());
  try {
    parallel_for(layers.size(), cfg.threads, [&](std::size_t k) {
      const int j = layers[k];
      ood::DetectorConfig dc = cfg.ood.detector;
      dc.seed = derive_seed(cfg.seed, 401, static_cast<std::uint64_t>(j));
      dc.source_layer = "net" + std::to_string(t) + ":layer" + std::to_string(j);
      const auto id_acts = nets::extract(target, ws.data.train, j);
      const auto ood_acts = ActivationSet::from_rows(nets::forward_to(target, j, ood_inputs));
      detectors[k] = ood::train_detector(id_acts, ood_acts, dc).detector;
    });
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const std::string stem = "ood/detectors/layer" + std::to_string(layers[k]);
      out.binary(stem + ".bin", nets::checkpoint::encode(detectors[k].net));
      out.json_file(stem + ".bin.json", {{"m_in", detectors[k].m_in},
                                         {"m_out", detectors[k].m_out},
                                         {"lambda", detectors[k].lambda},
                                         {"source_layer", detectors[k].source_layer}});
    }
  } catch (const std::exception& e) {
    det_stage.ok = false;
    det_stage.error = e.what();
  }
  res.stages.push_back(det_stage);
  if (!det_stage.ok) return;

  // In-distribution control: each detector on held-out target activations vs
  // themselves, and vs OOD-input activations.
  std::ostringstream control;
  control << "layer,auroc_self,auroc_noise,auroc_far_shift\n";
  const Matrix ood_test = datasets::uniform_noise_like(ws.data.train.inputs, ws.data.test.size(), cfg.ood.inflate,
                                                       derive_seed(cfg.seed, 402));
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto tgt = nets::extract(target, ws.data.test, layers[k]);
    const auto noise = ActivationSet::from_rows(nets::forward_to(target, layers[k], ood_test));
    control << layers[k] << ',' << report::format_double(ood::separability(detectors[k], tgt, tgt)) << ','
            << report::format_double(ood::separability(detectors[k], tgt, noise)) << ','
            << report::format_double(ood::separability(detectors[k], tgt, far_shifted(tgt))) << '\n';
  }
  out.csv("ood/detector_control.csv", control.str());

  json summary = json::object();
  for (const auto& method : cfg.methods) {
    StageRecord stage{"ood:" + method};
    try {
      SimilarityGrid auroc, rel;
      auroc.index = "ood-auroc:" + method;
      auroc.higher_is_similar = false;
      rel.index = method;
      auroc.source_id = rel.source_id = "net" + std::to_string(s);
      auroc.target_id = rel.target_id = "net" + std::to_string(t);
      auroc.source_layers = rel.source_layers = stitching::hidden_layers(source);
      auroc.target_layers = rel.target_layers = layers;
      const auto rows = static_cast<Eigen::Index>(auroc.source_layers.size());
      const auto cols = static_cast<Eigen::Index>(layers.size());
      auroc.values = rel.values = Matrix::Constant(rows, cols, std::nan(""));
      rel.stitched_accuracy = rel.values;
      rel.target_accuracy = ws.test_accuracy[t];
      auroc.seeds = rel.seeds = {derive_seed(cfg.seed, 410, s, t)};
      std::vector<std::string> errors(static_cast<std::size_t>(rows * cols));
      nets::FeedforwardNet f = source, g = target;
      f.frozen = g.frozen = true;
      parallel_for(errors.size(), cfg.threads, [&](std::size_t cell) {
        const auto r = static_cast<Eigen::Index>(cell) / cols, c = static_cast<Eigen::Index>(cell) % cols;
        const int i = auroc.source_layers[static_cast<std::size_t>(r)], j = layers[static_cast<std::size_t>(c)];
        try {
          const std::uint64_t cell_seed = derive_seed(auroc.seeds[0], static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
          auto map = stitching::fit_direct_on_sample(f, i, g, j, ws.data.train, cfg.stitching.dm_samples, cell_seed).map;
          if (method == "tlm") {
            nets::TrainConfig tc = cfg.stitching.tlm;
            tc.seed = derive_seed(cell_seed, 1);
            map = stitching::train_tlm(f, i, g, j, map, ws.data.train, tc).map;
          }
          const stitching::StitchedModel model{f, i, g, j, map};
          const auto stitched = ActivationSet::from_rows(model.stitched_representation(ws.data.test.inputs));
          const auto tgt = nets::extract(g, ws.data.test, j);
          auroc.values(r, c) = ood::separability(detectors[static_cast<std::size_t>(c)], tgt, stitched);
          const double acc = nets::accuracy_of_logits(nets::forward_from(g, j, stitched.data), ws.data.test.labels);
          rel.stitched_accuracy(r, c) = acc;
          rel.values(r, c) = acc / rel.target_accuracy;
        } catch (const std::exception& e) {
          errors[cell] = "cell (" + std::to_string(i) + "," + std::to_string(j) + "): " + e.what();
        }
      });
      for (auto& e : errors)
        if (!e.empty()) auroc.failures.push_back(std::move(e));
      rel.failures = auroc.failures;
      out.grid("ood/" + method + "/auroc", auroc, true);
      out.grid("ood/" + method + "/relative_accuracy", rel, true);
      summary[method] = {{"mean_auroc", auroc.values.allFinite() ? json(auroc.values.mean()) : json(nullptr)},
                         {"diagonal_auroc", matrix_to_json(auroc.values.diagonal().transpose())}};
      if (!auroc.failures.empty()) {
        stage.ok = false;
        stage.error = std::to_string(auroc.failures.size()) + " cells failed";
      }
      log << "ood " << method << ": mean auroc " << auroc.values.mean() << '\n';
    } catch (const std::exception& e) {
      stage.ok = false;
      stage.error = e.what();
    }
    res.stages.push_back(stage);
  }
  res.summary["ood"] = summary;
}

inline std::string report_csv(const stats::TestReport& r) {
  std::ostringstream s;
  s << "representation,probe_accuracy,functional_gap,dissimilarity\n";
  for (const auto& row : r.rows)
    s << row.id << ',' << report::format_double(row.probe_accuracy) << ','
      << report::format_double(row.functional_gap) << ',' << report::format_double(row.dissimilarity) << '\n';
  return s.str();
}

inline json correlation_json(const stats::RankCorrelation& c) {
  return {{"method", stats::method_name(c.method)}, {"statistic", c.statistic}, {"p_value", c.p_value}, {"n", c.n}};
}

inline json report_json(const stats::TestReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"id", row.id},
                    {"probe_accuracy", row.probe_accuracy},
                    {"functional_gap", row.functional_gap},
                    {"dissimilarity", row.dissimilarity}});
  return {{"test", r.test},
          {"measure", r.measure},
          {"reference", r.reference_id},
          {"reference_accuracy", r.reference_accuracy},
          {"rows", rows},
          {"kendall", correlation_json(r.kendall)},
          {"spearman", correlation_json(r.spearman)},
          {"note", r.note}};
}

inline std::vector<Eigen::Index> default_ranks(Eigen::Index width) {
  std::vector<Eigen::Index> r;
  for (Eigen::Index v : {width, width * 3 / 4, width / 2, width / 4, Eigen::Index{8}, Eigen::Index{4},
                         Eigen::Index{2}, Eigen::Index{1}})
    if (v >= 1 && v <= width && std::find(r.begin(), r.end(), v) == r.end()) r.push_back(v);
  return r;
}

inline stats::TestOptions test_options(const ExperimentConfig& cfg, std::uint64_t salt) {
  stats::TestOptions opt;
  opt.probe = cfg.probe;
  opt.probe.seed = derive_seed(cfg.seed, 500);
  opt.dm_samples = cfg.stitching.dm_samples;
  opt.seed = derive_seed(cfg.seed, 501, salt);
  opt.tolerate_ties = true;
  return opt;
}

inline void run_sensitivity(const Workspace& ws, ArtifactWriter& out, RunResult& res, std::ostream& log) {
  const auto& cfg = ws.cfg;
  const auto& net = ws.nets[static_cast<std::size_t>(cfg.sensitivity.instance)];
  const auto layers = cfg.sensitivity.layers.empty() ? stitching::hidden_layers(net) : cfg.sensitivity.layers;
  struct Task {
    std::string method;
    int layer;
  };
  std::vector<Task> tasks;
  for (const auto& m : cfg.methods)
    for (int l : layers) tasks.push_back({m, l});
  std::vector<std::optional<stats::TestReport>> reports(tasks.size());
  std::vector<std::string> errors(tasks.size());
  parallel_for(tasks.size(), cfg.threads, [&](std::size_t k) {
    try {
      const auto acts = nets::extract(net, ws.data.test, tasks[k].layer);
      const auto ranks = cfg.sensitivity.ranks.empty() ? default_ranks(acts.c) : cfg.sensitivity.ranks;
      reports[k] = stats::sensitivity_test(acts, ws.data.test.labels, ranks, stats::parse_measure(tasks[k].method),
                                           test_options(cfg, static_cast<std::uint64_t>(tasks[k].layer)),
                                           {&net, tasks[k].layer});
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  std::ostringstream summary;
  summary << "measure,layer,kendall_tau,kendall_p,spearman_rho,spearman_p\n";
  json js = json::object();
  for (const auto& m : cfg.methods) {
    StageRecord stage{"sensitivity:" + m};
    double sum_tau = 0.0, sum_rho = 0.0;
    int count = 0;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      if (tasks[k].method != m) continue;
      if (!reports[k]) {
        stage.ok = false;
        stage.error += "layer " + std::to_string(tasks[k].layer) + ": " + errors[k] + "; ";
        continue;
      }
      const auto& r = *reports[k];
      const std::string stem = "sensitivity/" + m + "/layer" + std::to_string(tasks[k].layer);
      out.csv(stem + ".csv", report_csv(r));
      out.json_file(stem + ".json", report_json(r));
      summary << m << ',' << tasks[k].layer << ',' << report::format_double(r.kendall.statistic) << ','
              << report::format_double(r.kendall.p_value) << ',' << report::format_double(r.spearman.statistic) << ','
              << report::format_double(r.spearman.p_value) << '\n';
      if (!r.note.empty()) {
        log << "sensitivity " << m << " layer " << tasks[k].layer << ": " << r.note << '\n';
        continue;
      }
      sum_tau += r.kendall.statistic;
      sum_rho += r.spearman.statistic;
      ++count;
    }
    if (count) {
      summary << m << ",mean," << report::format_double(sum_tau / count) << ",," << report::format_double(sum_rho / count)
              << ",\n";
      js[m] = {{"mean_kendall", sum_tau / count}, {"mean_spearman", sum_rho / count}};
      log << "sensitivity " << m << ": tau " << sum_tau / count << " rho " << sum_rho / count << '\n';
    }
    res.stages.push_back(stage);
  }
  out.csv("sensitivity/summary.csv", summary.str());
  res.summary["sensitivity"] = js;
}

inline void run_specificity(const Workspace& ws, ArtifactWriter& out, RunResult& res, std::ostream& log) {
  const auto& cfg = ws.cfg;
  const auto layers = cfg.specificity.layers.empty() ? stitching::hidden_layers(ws.nets[0]) : cfg.specificity.layers;
  std::vector<std::optional<stats::SpecificityResult>> results(cfg.methods.size());
  std::vector<std::string> errors(cfg.methods.size());
  parallel_for(cfg.methods.size(), cfg.threads, [&](std::size_t k) {
    try {
      results[k] = stats::specificity_test(ws.nets, layers, ws.data.test, stats::parse_measure(cfg.methods[k]),
                                           test_options(cfg, 1000 + k), static_cast<std::size_t>(cfg.specificity.anchor));
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  std::ostringstream summary;
  summary << "measure,anchor,kendall_tau,kendall_p,spearman_rho,spearman_p\n";
  json js = json::object();
  for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
    const auto& m = cfg.methods[k];
    StageRecord stage{"specificity:" + m};
    if (!results[k]) {
      stage.ok = false;
      stage.error = errors[k];
      res.stages.push_back(stage);
      continue;
    }
    for (const auto& r : results[k]->per_anchor) {
      const std::string stem = "specificity/" + m + "/" + r.reference_id.substr(r.reference_id.find(':') + 1);
      out.csv(stem + ".csv", report_csv(r));
      out.json_file(stem + ".json", report_json(r));
      summary << m << ',' << r.reference_id << ',' << report::format_double(r.kendall.statistic) << ','
              << report::format_double(r.kendall.p_value) << ',' << report::format_double(r.spearman.statistic) << ','
              << report::format_double(r.spearman.p_value) << '\n';
    }
    summary << m << ",mean," << report::format_double(results[k]->mean_kendall) << ","
            << "," << report::format_double(results[k]->mean_spearman) << ",\n";
    js[m] = {{"mean_kendall", results[k]->mean_kendall}, {"mean_spearman", results[k]->mean_spearman}};
    log << "specificity " << m << ": tau " << results[k]->mean_kendall << " rho " << results[k]->mean_spearman << '\n';
    res.stages.push_back(stage);
  }
  out.csv("specificity/summary.csv", summary.str());
  res.summary["specificity"] = js;
}

struct StitchRequest {
  int source = 0;
  int source_layer = 1;
  int target = 0;
  int target_layer = 1;
  std::string method = "dm-func";
};

inline std::string manifest_stage_status(const StageRecord& s) { return s.ok ? "ok" : "failed"; }

inline void write_manifest(const ExperimentConfig& cfg, ArtifactWriter& out, const RunResult& res) {
  json manifest;
  manifest["tool"] = kToolVersion;
  manifest["kind"] = cfg.kind;
  manifest["config"] = to_json(cfg);
  manifest["seeds"] = {{"base", cfg.seed}, {"dataset", cfg.dataset.seed}};
  json stages = json::array();
  for (const auto& s : res.stages) {
    json j{{"name", s.name}, {"status", manifest_stage_status(s)}};
    if (!s.ok) j["error"] = s.error;
    stages.push_back(j);
  }
  manifest["stages"] = stages;
  manifest["evaluation_split"] = "held-out test split";
  manifest["summary"] = res.summary;
  manifest["outputs"] = out.outputs();
  out.json_file("manifest.json", manifest);
}

// One stitched model between given instances and layers, scored on the
// held-out split.
inline RunResult run_stitch(ExperimentConfig cfg, const StitchRequest& req, std::ostream& log = std::clog) {
  cfg.kind = "train-models";
  validate(cfg);
  if (req.method != "dm-func" && req.method != "tlm") throw ValidationError("stitch: method must be dm-func or tlm");
  if (req.source < 0 || req.source >= cfg.model.instances || req.target < 0 || req.target >= cfg.model.instances)
    throw ValidationError("stitch: instance out of range");
  const int depth = static_cast<int>(cfg.model.hidden.size()) + 1;
  if (req.source_layer < 1 || req.source_layer >= depth || req.target_layer < 1 || req.target_layer >= depth)
    throw ValidationError("stitch: layers must be hidden layers");
  RunResult res;
  res.config_hash = config_hash(cfg);
  res.output_dir = cfg.output_dir;
  ArtifactWriter out(cfg.output_dir, res.config_hash, cfg.seed);
  StageRecord prep{"train-models"}, stage{"stitch:" + req.method};
  try {
    const Workspace ws = prepare(cfg, out, log);
    const auto& f = ws.nets[static_cast<std::size_t>(req.source)];
    const auto& g = ws.nets[static_cast<std::size_t>(req.target)];
    try {
      const std::uint64_t seed = derive_seed(cfg.seed, 600);
      auto fit = stitching::fit_direct_on_sample(f, req.source_layer, g, req.target_layer, ws.data.train,
                                                 cfg.stitching.dm_samples, seed);
      auto map = fit.map;
      if (req.method == "tlm") {
        nets::TrainConfig tc = cfg.stitching.tlm;
        tc.seed = derive_seed(seed, 1);
        map = stitching::train_tlm(f, req.source_layer, g, req.target_layer, map, ws.data.train, tc).map;
      }
      const auto score = stitching::relative_accuracy({f, req.source_layer, g, req.target_layer, map}, ws.data.test);
      const json j{{"method", req.method},
                   {"source", "net" + std::to_string(req.source)},
                   {"source_layer", req.source_layer},
                   {"target", "net" + std::to_string(req.target)},
                   {"target_layer", req.target_layer},
                   {"stitched_accuracy", score.stitched_accuracy},
                   {"target_accuracy", score.target_accuracy},
                   {"relative_accuracy", score.relative},
                   {"direct_fit_rank", fit.rank},
                   {"direct_fit_rank_deficient", fit.rank_deficient},
                   {"map_seed", seed}};
      out.json_file("stitch/net" + std::to_string(req.source) + "-layer" + std::to_string(req.source_layer) + "_net" +
                        std::to_string(req.target) + "-layer" + std::to_string(req.target_layer) + "_" + req.method +
                        ".json",
                    j);
      res.summary["stitch"] = j;
      log << "stitch " << req.method << ": relative accuracy " << score.relative << '\n';
    } catch (const std::exception& e) {
      stage.ok = false;
      stage.error = e.what();
    }
  } catch (const std::exception& e) {
    prep.ok = false;
    prep.error = e.what();
  }
  res.stages.push_back(prep);
  if (prep.ok) res.stages.push_back(stage);
  write_manifest(cfg, out, res);
  return res;
}

// Validates, prepares data and models, runs the pipeline for cfg.kind and
// writes manifest.json. Throws ValidationError before any compute on bad
// configs; stage failures are recorded and reflected in exit_code().
inline RunResult run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::clog) {
  validate(cfg);
  RunResult res;
  res.config_hash = config_hash(cfg);
  res.output_dir = cfg.output_dir;
  ArtifactWriter out(cfg.output_dir, res.config_hash, cfg.seed);

  std::optional<Workspace> ws;
  StageRecord prep{"train-models"};
  try {
    ws = prepare(cfg, out, log);
  } catch (const std::exception& e) {
    prep.ok = false;
    prep.error = e.what();
  }
  res.stages.push_back(prep);

  if (ws) {
    if (cfg.kind == "similarity-grid") run_grids(*ws, out, res, false, log);
    else if (cfg.kind == "sanity-check") run_grids(*ws, out, res, true, log);
    else if (cfg.kind == "ood-grid") run_ood(*ws, out, res, log);
    else if (cfg.kind == "sensitivity") run_sensitivity(*ws, out, res, log);
    else if (cfg.kind == "specificity") run_specificity(*ws, out, res, log);
  }

  write_manifest(cfg, out, res);
  return res;
}

}  // namespace repsim::experiment
