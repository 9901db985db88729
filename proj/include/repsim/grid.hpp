#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "repsim/errors.hpp"
#include "repsim/numerics.hpp"
#include "repsim/report.hpp"

namespace repsim {

// Pairwise layer scores. Row = source layer, column = target layer.
struct SimilarityGrid {
  std::string index;               // "lcka", "dm-func", "tlm", ...
  bool higher_is_similar = true;   // false for distances
  std::string source_id;
  std::string target_id;
  std::vector<int> source_layers;
  std::vector<int> target_layers;
  Matrix values;                   // NaN marks a failed cell
  Matrix stitched_accuracy;        // functional grids only; empty otherwise
  double target_accuracy = std::nan("");
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> failures;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

inline std::string grid_to_csv(const SimilarityGrid& g, const Matrix& values) {
  std::ostringstream out;
  out << "source\\target";
  for (Eigen::Index c = 0; c < values.cols(); ++c)
    out << ',' << (c < static_cast<Eigen::Index>(g.target_layers.size()) ? g.target_layers[static_cast<std::size_t>(c)] : c);
  out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out << (r < static_cast<Eigen::Index>(g.source_layers.size()) ? g.source_layers[static_cast<std::size_t>(r)] : r);
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << ',' << report::format_double(values(r, c));
    out << '\n';
  }
  return out.str();
}

inline std::string grid_to_csv(const SimilarityGrid& g) { return grid_to_csv(g, g.values); }

// Parses a grid CSV back into values and layer labels.
inline SimilarityGrid grid_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  do {
    if (!std::getline(in, line)) throw IoError("grid csv: empty");
  } while (!line.empty() && line[0] == '#');
  SimilarityGrid g;
  const auto header = report::split(line);
  for (std::size_t k = 1; k < header.size(); ++k) g.target_layers.push_back(std::stoi(header[k]));
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = report::split(line);
    if (cells.size() != header.size()) throw IoError("grid csv: ragged row");
    g.source_layers.push_back(std::stoi(cells[0]));
    std::vector<double> r;
    for (std::size_t k = 1; k < cells.size(); ++k) r.push_back(report::parse_double(cells[k]));
    rows.push_back(std::move(r));
  }
  g.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size() - 1));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      g.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return g;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (std::isfinite(m(r, c))) row.push_back(m(r, c));
      else row.push_back(nullptr);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json grid_to_json(const SimilarityGrid& g) {
  nlohmann::json j;
  j["index"] = g.index;
  j["direction"] = g.higher_is_similar ? "higher-is-similar" : "lower-is-similar";
  j["source"] = g.source_id;
  j["target"] = g.target_id;
  j["source_layers"] = g.source_layers;
  j["target_layers"] = g.target_layers;
  j["values"] = matrix_to_json(g.values);
  if (g.stitched_accuracy.size() > 0) j["stitched_accuracy"] = matrix_to_json(g.stitched_accuracy);
  if (std::isfinite(g.target_accuracy)) j["target_accuracy"] = g.target_accuracy;
  j["seeds"] = g.seeds;
  j["failures"] = g.failures;
  return j;
}

}  // namespace repsim
