#include "hublab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "hublab/errors.hpp"
#include "hublab/rng.hpp"

namespace hublab {

const CurvePoint& LayerCurve::at_layer(int layer) const {
  for (const auto& p : points) {
    if (p.layer == layer) return p;
  }
  throw UsageError("curve '" + series + "' has no layer " + std::to_string(layer));
}

double mean_of(std::span<const double> values) {
  if (values.empty()) throw UsageError("mean of an empty sample");
  double s = 0.0;
  for (auto v : values) s += v;
  return s / static_cast<double>(values.size());
}

Interval bootstrap_mean_ci(std::span<const double> values, std::uint64_t seed, int resamples, double level) {
  if (values.empty()) throw UsageError("bootstrap of an empty sample");
  if (resamples < 1 || !(level > 0.0 && level < 1.0)) throw UsageError("bootstrap: bad resample count or level");
  auto rng = make_rng(seed, "stats.bootstrap");
  const auto n = values.size();
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[uniform_index(rng, n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - level) / 2.0;
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return means[lo] * (1.0 - frac) + means[hi] * frac;
  };
  return {quantile(alpha), quantile(1.0 - alpha)};
}

CurvePoint summarize(int layer, std::span<const double> values, std::uint64_t seed, const std::string& tag) {
  CurvePoint p;
  p.layer = layer;
  p.n = values.size();
  p.mean = mean_of(values);
  const auto ci = bootstrap_mean_ci(values, stream_seed(seed, tag + "/" + std::to_string(layer)));
  // Guard the invariant ci_low <= mean <= ci_high against rounding.
  p.ci_low = std::min(ci.low, p.mean);
  p.ci_high = std::max(ci.high, p.mean);
  return p;
}

void write_layer_curves(const std::string& path, const std::vector<LayerCurve>& curves) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path);
  os << kLayerCurveHeader << '\n' << std::setprecision(9);
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      os << c.experiment << ',' << p.layer << ',' << c.series << ',' << p.mean << ',' << p.ci_low << ',' << p.ci_high
         << ',' << p.n << '\n';
    }
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<LayerCurve> read_layer_curves(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError("cannot read " + path);
  std::string line;
  if (!std::getline(is, line) || line != kLayerCurveHeader) {
    throw FormatError(path + ": not a layer-curve CSV (header mismatch)");
  }
  std::vector<LayerCurve> curves;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw FormatError(path + ":" + std::to_string(lineno) + ": expected 7 fields");
    const auto key = std::make_pair(f[0], f[2]);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, curves.size()).first;
      curves.push_back({f[0], f[2], {}});
    }
    try {
      curves[it->second].points.push_back({std::stoi(f[1]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                                           static_cast<std::size_t>(std::stoull(f[6]))});
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return curves;
}

}  // namespace hublab
