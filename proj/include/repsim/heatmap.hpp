#pragma once

// Grid heatmaps as binary PPM (P6) and SVG. Columns (horizontal) are target
// layers, rows (vertical, top to bottom) are source layers.
//
// Color ramp: single hue, linear in t = (v - min) / (max - min) over the
// finite cells: rgb = (255,255,255) + t * ((8,48,107) - (255,255,255)),
// rounded to nearest. A constant grid maps every cell to t = 0. Non-finite
// cells are drawn mid-grey (128,128,128).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "repsim/errors.hpp"
#include "repsim/grid.hpp"
#include "repsim/report.hpp"

namespace repsim::heatmap {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kLow{255, 255, 255};
inline constexpr Rgb kHigh{8, 48, 107};
inline constexpr Rgb kMissing{128, 128, 128};

inline Rgb ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  Rgb c{};
  for (std::size_t k = 0; k < 3; ++k)
    c[k] = static_cast<std::uint8_t>(std::lround(kLow[k] + t * (static_cast<double>(kHigh[k]) - kLow[k])));
  return c;
}

inline std::vector<std::vector<Rgb>> cell_colors(const Matrix& values) {
  double lo = HUGE_VAL, hi = -HUGE_VAL;
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c)
      if (std::isfinite(values(r, c))) {
        lo = std::min(lo, values(r, c));
        hi = std::max(hi, values(r, c));
      }
  std::vector<std::vector<Rgb>> out(static_cast<std::size_t>(values.rows()));
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      if (!std::isfinite(v)) out[static_cast<std::size_t>(r)].push_back(kMissing);
      else out[static_cast<std::size_t>(r)].push_back(ramp(hi > lo ? (v - lo) / (hi - lo) : 0.0));
    }
  return out;
}

inline std::vector<unsigned char> to_ppm(const Matrix& values, int cell_px = 16, const std::string& comment = {}) {
  if (values.rows() < 1 || values.cols() < 1) throw ArgumentError("heatmap: empty grid");
  if (cell_px < 1) throw ArgumentError("heatmap: cell size must be >= 1");
  const auto colors = cell_colors(values);
  const auto w = values.cols() * cell_px, h = values.rows() * cell_px;
  std::ostringstream head;
  head << "P6\n";
  if (!comment.empty()) head << "# " << comment << "\n";
  head << w << ' ' << h << "\n255\n";
  const std::string hs = head.str();
  std::vector<unsigned char> out(hs.begin(), hs.end());
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const Rgb& c = colors[static_cast<std::size_t>(y / cell_px)][static_cast<std::size_t>(x / cell_px)];
      out.insert(out.end(), c.begin(), c.end());
    }
  return out;
}

inline std::string to_svg(const SimilarityGrid& grid, int cell_px = 32, const std::string& comment = {}) {
  const Matrix& values = grid.values;
  if (values.rows() < 1 || values.cols() < 1) throw ArgumentError("heatmap: empty grid");
  const auto colors = cell_colors(values);
  const int margin = cell_px;
  const auto w = values.cols() * cell_px + margin, h = values.rows() * cell_px + margin;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  if (!comment.empty()) s << "<!-- " << comment << " -->\n";
  s << "<title>" << grid.index << " (rows: source layer, columns: target layer)</title>\n";
  auto label = [](const std::vector<int>& v, Eigen::Index k) {
    return k < static_cast<Eigen::Index>(v.size()) ? v[static_cast<std::size_t>(k)] : static_cast<int>(k);
  };
  for (Eigen::Index c = 0; c < values.cols(); ++c)
    s << "<text x=\"" << margin + c * cell_px + cell_px / 2 << "\" y=\"" << margin * 2 / 3
      << "\" font-size=\"10\" text-anchor=\"middle\">" << label(grid.target_layers, c) << "</text>\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    s << "<text x=\"" << margin / 2 << "\" y=\"" << margin + r * cell_px + cell_px / 2
      << "\" font-size=\"10\" text-anchor=\"middle\">" << label(grid.source_layers, r) << "</text>\n";
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const Rgb& col = colors[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      s << "<rect x=\"" << margin + c * cell_px << "\" y=\"" << margin + r * cell_px << "\" width=\"" << cell_px
        << "\" height=\"" << cell_px << "\" fill=\"rgb(" << int(col[0]) << ',' << int(col[1]) << ',' << int(col[2])
        << ")\"><title>" << report::format_double(values(r, c)) << "</title></rect>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace repsim::heatmap
