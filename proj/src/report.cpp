#include "hublab/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "hublab/errors.hpp"
#include "hublab/intervene.hpp"

namespace hublab {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string num(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << x;
  return os.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::string render_plot_svg(const std::vector<LayerCurve>& curves, const std::string& metric) {
  if (curves.empty()) throw UsageError("plot: no curves");
  for (const auto& c : curves) {
    if (c.experiment != curves.front().experiment) {
      throw UsageError("plot: mixed experiment ids '" + curves.front().experiment + "' and '" + c.experiment + "'");
    }
    if (c.points.empty()) throw UsageError("plot: series '" + c.series + "' has no points");
  }
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      xmin = std::min(xmin, static_cast<double>(p.layer));
      xmax = std::max(xmax, static_cast<double>(p.layer));
      ymin = std::min(ymin, p.ci_low);
      ymax = std::max(ymax, p.ci_high);
    }
  }
  if (xmax == xmin) xmin -= 1, xmax += 1;
  if (ymax == ymin) ymin -= 1, ymax += 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  const double W = 640, H = 400, L = 70, R = 170, T = 40, B = 50;
  auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::vector<std::string> labels;
  for (const auto& c : curves) {
    if (std::find(labels.begin(), labels.end(), c.series) == labels.end()) labels.push_back(c.series);
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(W / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << escape(curves.front().experiment) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << num(sy(y) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
       << num(y) << "</text>\n";
  }
  for (int x = static_cast<int>(std::ceil(xmin)); x <= static_cast<int>(std::floor(xmax)); ++x) {
    os << "<text x=\"" << num(sx(x)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << x
       << "</text>\n";
  }
  os << "<text x=\"" << num((L + W - R) / 2) << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"13\">layer</text>\n";
  os << "<text x=\"16\" y=\"" << num((T + H - B) / 2) << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
     << num((T + H - B) / 2) << ")\">" << escape(metric) << "</text>\n";
  for (const auto& c : curves) {
    const auto idx = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), c.series) - labels.begin());
    const char* color = kPalette[idx % std::size(kPalette)];
    auto pts = c.points;
    std::sort(pts.begin(), pts.end(), [](const CurvePoint& a, const CurvePoint& b) { return a.layer < b.layer; });
    if (pts.size() == 1) {
      const auto& p = pts.front();
      os << "<line x1=\"" << num(sx(p.layer)) << "\" y1=\"" << num(sy(p.ci_low)) << "\" x2=\"" << num(sx(p.layer))
         << "\" y2=\"" << num(sy(p.ci_high)) << "\" stroke=\"" << color << "\" stroke-opacity=\"0.4\" stroke-width=\"6\"/>\n";
      os << "<circle cx=\"" << num(sx(p.layer)) << "\" cy=\"" << num(sy(p.mean)) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
      continue;
    }
    os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
    for (const auto& p : pts) os << num(sx(p.layer)) << ',' << num(sy(p.ci_high)) << ' ';
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) os << num(sx(it->layer)) << ',' << num(sy(it->ci_low)) << ' ';
    os << "\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts) os << num(sx(p.layer)) << ',' << num(sy(p.mean)) << ' ';
    os << "\"/>\n";
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = T + 10 + 18.0 * static_cast<double>(i);
    os << "<g class=\"legend\"><rect x=\"" << W - R + 12 << "\" y=\"" << num(y - 8) << "\" width=\"12\" height=\"12\" fill=\""
       << kPalette[i % std::size(kPalette)] << "\"/><text x=\"" << W - R + 30 << "\" y=\"" << num(y + 2)
       << "\" font-size=\"12\">" << escape(labels[i]) << "</text></g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_plot(const std::vector<LayerCurve>& curves, const std::string& path, const std::string& metric) {
  const auto svg = render_plot_svg(curves, metric);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path);
  os << svg;
}

ReportSummary build_report(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw UsageError("report: '" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv" && e.path().filename() != "summary.csv") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  ReportSummary summary;
  std::map<std::string, std::vector<LayerCurve>> families;
  std::vector<std::vector<std::string>> steer_rows;
  for (const auto& f : files) {
    std::ifstream is(f, std::ios::binary);
    std::string header;
    std::getline(is, header);
    if (header == kLayerCurveHeader) {
      for (auto& c : read_layer_curves(f.string())) families[c.experiment].push_back(std::move(c));
      ++summary.curve_files;
    } else if (header == kSteerOutcomeHeader) {
      std::string line;
      while (std::getline(is, line)) {
        if (!line.empty()) steer_rows.push_back(split_csv_line(line));
      }
      ++summary.steer_files;
    }
  }
  std::ofstream table(fs::path(dir) / "summary.csv", std::ios::binary);
  if (!table) throw UsageError("cannot write summary table in " + dir);
  table << "kind,experiment,series,argmax_layer,max_mean,first_layer_mean,last_layer_mean,detail\n"
        << std::setprecision(6);
  for (const auto& [exp, curves] : families) {
    const auto path = (fs::path(dir) / (exp + ".svg")).string();
    emit_plot(curves, path);
    summary.plots.push_back(path);
    for (const auto& c : curves) {
      auto best = std::max_element(c.points.begin(), c.points.end(),
                                   [](const CurvePoint& a, const CurvePoint& b) { return a.mean < b.mean; });
      table << "curve," << exp << ',' << c.series << ',' << best->layer << ',' << best->mean << ','
            << c.points.front().mean << ',' << c.points.back().mean << ",\n";
    }
  }
  for (const auto& r : steer_rows) {
    if (r.size() < 7) continue;
    table << "steer," << r[0] << ',' << r[1] << ",,"  << r[2] << ",,," << "unchanged=" << r[3] << ";other=" << r[4]
          << ";n=" << r[5] << (r[6].empty() ? "" : ";" + r[6]) << '\n';
  }
  summary.table_path = (fs::path(dir) / "summary.csv").string();
  return summary;
}

}  // namespace hublab
