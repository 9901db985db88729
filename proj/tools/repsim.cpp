// repsim command-line front end.
//
//   repsim [--config F] [--seed S] [--out DIR] [--threads N] <verb> [options]
//
// Exit codes: 0 success, 2 validation failure, 3 partial stage failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "repsim/experiment.hpp"

namespace ex = repsim::experiment;
namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitPartial = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
};

ex::ExperimentConfig resolve(const Globals& g, const std::string& kind, const std::vector<std::string>& methods) {
  ex::ExperimentConfig cfg = g.config.empty() ? ex::ExperimentConfig{} : ex::load_config(g.config);
  if (!kind.empty()) cfg.kind = kind;
  if (g.seed) ex::set_seed(cfg, *g.seed);
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (!methods.empty()) cfg.methods = methods;
  cfg.threads = g.threads;
  return cfg;
}

int report(const ex::RunResult& res) {
  for (const auto& s : res.stages)
    if (!s.ok) std::cerr << "stage " << s.name << " failed: " << s.error << '\n';
  std::cout << "config hash " << res.config_hash << ", outputs in " << res.output_dir.string() << '\n';
  return res.exit_code();
}

int heatmap_verb(const Globals& g, const std::string& grid_path) {
  const std::string text = repsim::report::read_text(grid_path);
  repsim::SimilarityGrid grid = repsim::grid_from_csv(text);
  grid.index = fs::path(grid_path).stem().string();
  const fs::path dir = g.out.empty() ? fs::path(grid_path).parent_path() : fs::path(g.out);
  const fs::path stem = dir / fs::path(grid_path).stem();
  // Carry the provenance line of the source CSV over to the images.
  std::string comment;
  if (text.rfind("# ", 0) == 0) comment = text.substr(2, text.find('\n') - 2);
  fs::create_directories(dir);
  repsim::actfile::detail::write_all(stem.string() + ".ppm", repsim::heatmap::to_ppm(grid.values, 16, comment));
  repsim::report::write_text(stem.string() + ".svg", repsim::heatmap::to_svg(grid, 32, comment));
  std::cout << "wrote " << stem.string() << ".ppm and .svg\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Representational similarity and stitching experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "base seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> methods;
  struct Verb {
    const char* name;
    const char* kind;
    const char* help;
  };
  const std::vector<Verb> verbs{{"train", "train-models", "train (or load) model instances"},
                                {"simgrid", "similarity-grid", "layer similarity grids for all instance pairs"},
                                {"sanity", "sanity-check", "grids plus the layer identification table"},
                                {"ood", "ood-grid", "OOD separability and relative accuracy grids"},
                                {"sensitivity", "sensitivity", "low-rank sensitivity test"},
                                {"specificity", "specificity", "cross-instance specificity test"}};
  std::vector<std::pair<CLI::App*, std::string>> runners;
  for (const auto& v : verbs) {
    auto* sub = app.add_subcommand(v.name, v.help);
    if (std::string(v.name) != "train")
      sub->add_option("--methods", methods, "methods: lcka pwcca opd dm-struct dm-func tlm")->delimiter(',');
    runners.emplace_back(sub, v.kind);
  }

  ex::StitchRequest req;
  auto* stitch = app.add_subcommand("stitch", "fit and score one stitching map");
  stitch->add_option("--source", req.source, "source instance");
  stitch->add_option("--source-layer", req.source_layer, "source hidden layer");
  stitch->add_option("--target", req.target, "target instance");
  stitch->add_option("--target-layer", req.target_layer, "target hidden layer");
  stitch->add_option("--method", req.method, "dm-func or tlm");

  std::string grid_path;
  auto* heat = app.add_subcommand("heatmap", "render a grid CSV as PPM and SVG");
  heat->add_option("--grid", grid_path, "grid CSV")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (heat->parsed()) return heatmap_verb(g, grid_path);
    if (stitch->parsed()) return report(ex::run_stitch(resolve(g, "", {}), req, std::cerr));
    for (const auto& [sub, kind] : runners)
      if (sub->parsed()) return report(ex::run_experiment(resolve(g, kind, methods), std::cerr));
  } catch (const ex::ValidationError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitPartial;
  }
  return kExitValidation;
}
