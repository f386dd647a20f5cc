#pragma once

#include <string>
#include <vector>

#include "hublab/stats.hpp"

namespace hublab {

// SVG line chart: one polyline per series over a shaded CI band, a legend
// entry per distinct series, axes "layer" and `metric`. UsageError when the
// curves are empty or mix experiment ids.
std::string render_plot_svg(const std::vector<LayerCurve>& curves, const std::string& metric = "value");
void emit_plot(const std::vector<LayerCurve>& curves, const std::string& path, const std::string& metric = "value");

struct ReportSummary {
  std::vector<std::string> plots;  // written chart paths
  std::string table_path;
  std::size_t curve_files = 0;
  std::size_t steer_files = 0;
};

// Reads every *.csv in `dir` with a layer-curve or steer-outcome header,
// writes one chart per experiment family and summary.csv.
ReportSummary build_report(const std::string& dir);

}  // namespace hublab
