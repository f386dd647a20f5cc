#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hublab {

struct CurvePoint {
  int layer = 0;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
};

// A per-layer statistic with a 95% bootstrap interval at every layer.
struct LayerCurve {
  std::string experiment;
  std::string series;
  std::vector<CurvePoint> points;

  const CurvePoint& at_layer(int layer) const;
};

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Percentile bootstrap interval of the mean; `resamples` draws of
// values.size() items with replacement.
Interval bootstrap_mean_ci(std::span<const double> values, std::uint64_t seed, int resamples = 1000,
                           double level = 0.95);

// Mean plus bootstrap interval; the seed is derived from `seed` and the
// point's identity so curves never share resampling streams.
CurvePoint summarize(int layer, std::span<const double> values, std::uint64_t seed, const std::string& tag);

double mean_of(std::span<const double> values);

inline constexpr const char* kLayerCurveHeader = "experiment,layer,series,mean,ci_low,ci_high,n";

void write_layer_curves(const std::string& path, const std::vector<LayerCurve>& curves);
std::vector<LayerCurve> read_layer_curves(const std::string& path);

// Splits on commas; no quoting support since no emitted field contains one.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace hublab
