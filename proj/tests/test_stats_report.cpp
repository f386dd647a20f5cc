#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hublab/errors.hpp"
#include "hublab/intervene.hpp"
#include "hublab/report.hpp"
#include "hublab/rng.hpp"
#include "hublab/stats.hpp"

using namespace hublab;
namespace fs = std::filesystem;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

LayerCurve curve(const std::string& exp, const std::string& series, std::vector<double> means) {
  LayerCurve c{exp, series, {}};
  for (std::size_t i = 0; i < means.size(); ++i) {
    c.points.push_back({static_cast<int>(i), means[i], means[i] - 0.1, means[i] + 0.1, 10});
  }
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(BootstrapTest, ConstantSampleHasDegenerateInterval) {
  const std::vector<double> v(50, 2.5);
  const auto ci = bootstrap_mean_ci(v, 1);
  EXPECT_DOUBLE_EQ(ci.low, 2.5);
  EXPECT_DOUBLE_EQ(ci.high, 2.5);
  EXPECT_THROW(bootstrap_mean_ci({}, 1), UsageError);
  EXPECT_THROW(bootstrap_mean_ci(v, 1, 0), UsageError);
}

TEST(BootstrapTest, WidthMatchesNormalApproximation) {
  auto rng = make_rng(3, "test.bootstrap");
  std::vector<double> v(400);
  for (auto& x : v) x = normal01(rng);
  const double m = mean_of(v);
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  const double se = std::sqrt(var / static_cast<double>(v.size())) / std::sqrt(static_cast<double>(v.size()));
  const auto ci = bootstrap_mean_ci(v, 7, 4000);
  EXPECT_NEAR(ci.low, m - 1.96 * se, 0.15 * 1.96 * se);
  EXPECT_NEAR(ci.high, m + 1.96 * se, 0.15 * 1.96 * se);
  const auto again = bootstrap_mean_ci(v, 7, 4000);
  EXPECT_EQ(ci.low, again.low);
  EXPECT_EQ(ci.high, again.high);
}

TEST(SummarizeTest, IntervalBracketsMean) {
  const std::vector<double> v = {0.1, 0.4, 0.35, 0.9, -0.2};
  const auto p = summarize(3, v, 11, "tag");
  EXPECT_EQ(p.layer, 3);
  EXPECT_EQ(p.n, 5u);
  EXPECT_DOUBLE_EQ(p.mean, 0.31);
  EXPECT_LE(p.ci_low, p.mean);
  EXPECT_GE(p.ci_high, p.mean);
  const auto q = summarize(4, v, 11, "tag");
  EXPECT_FALSE(p.ci_low == q.ci_low && p.ci_high == q.ci_high);
}

TEST(LayerCurveCsvTest, RoundTripsAndRejectsMalformedFiles) {
  const auto dir = fresh_dir("hublab_test_curves");
  const auto path = (dir / "c.csv").string();
  const std::vector<LayerCurve> curves = {curve("exp", "s1", {0.5, 0.25, -1.0}), curve("exp", "s2", {2.0})};
  write_layer_curves(path, curves);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, kLayerCurveHeader);
  const auto back = read_layer_curves(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].series, "s1");
  ASSERT_EQ(back[0].points.size(), 3u);
  EXPECT_DOUBLE_EQ(back[0].at_layer(2).mean, -1.0);
  EXPECT_DOUBLE_EQ(back[0].at_layer(1).ci_high, 0.35);
  EXPECT_EQ(back[1].points[0].n, 10u);
  EXPECT_THROW(back[1].at_layer(5), UsageError);

  std::ofstream(dir / "bad_header.csv") << "a,b\n";
  EXPECT_THROW(read_layer_curves((dir / "bad_header.csv").string()), FormatError);
  std::ofstream(dir / "bad_row.csv") << kLayerCurveHeader << "\nexp,0,s,1,0,2,3\nexp,1,s,x,0,2,3\n";
  try {
    read_layer_curves((dir / "bad_row.csv").string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(CsvSplitTest, KeepsEmptyFields) {
  EXPECT_EQ(split_csv_line("a,,b,"), (std::vector<std::string>{"a", "", "b", ""}));
  EXPECT_EQ(split_csv_line("x"), (std::vector<std::string>{"x"}));
}

TEST(PlotTest, SinglePointSeriesRendersMarker) {
  const auto svg = render_plot_svg({curve("e", "only", {0.3})});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_EQ(count_of(svg, "<circle"), 1u);
  EXPECT_NE(svg.find(">layer</text>"), std::string::npos);
}

TEST(PlotTest, OutputIsDeterministicWithOneLegendEntryPerSeries) {
  const std::vector<LayerCurve> curves = {curve("e", "a", {0.1, 0.2, 0.4}), curve("e", "b", {0.3, 0.1, 0.0}),
                                          curve("e", "a", {0.0, 0.5, 0.6})};
  const auto x = render_plot_svg(curves, "cosine");
  EXPECT_EQ(x, render_plot_svg(curves, "cosine"));
  EXPECT_EQ(count_of(x, "class=\"legend\""), 2u);
  EXPECT_NE(x.find(">cosine</text>"), std::string::npos);
  EXPECT_THROW(render_plot_svg({}), UsageError);
  EXPECT_THROW(render_plot_svg({curve("e", "a", {0.1}), curve("f", "a", {0.1})}), UsageError);
}

TEST(ReportTest, AggregatesCurveAndSteeringFiles) {
  const auto dir = fresh_dir("hublab_test_report");
  write_layer_curves((dir / "one.csv").string(), {curve("sim", "delta", {0.0, 0.3, 0.1})});
  write_layer_curves((dir / "two.csv").string(), {curve("lens", "p_A", {0.2, 0.6}), curve("lens", "p_B", {0.7, 0.3})});
  SteerOutcome s;
  s.experiment = "steer-arith";
  s.setting = "coefficient=1";
  s.outcomes = {Outcome::SteeredCorrect, Outcome::Unchanged};
  write_steer_outcomes((dir / "steer.csv").string(), {s});
  std::ofstream(dir / "notes.csv") << "unrelated,header\n";

  const auto r = build_report(dir.string());
  EXPECT_EQ(r.curve_files, 2u);
  EXPECT_EQ(r.steer_files, 1u);
  ASSERT_EQ(r.plots.size(), 2u);
  for (const auto& p : r.plots) EXPECT_TRUE(fs::exists(p));
  std::ifstream in(r.table_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto table = ss.str();
  EXPECT_NE(table.find("curve,sim,delta,1,0.3,0,0.1,"), std::string::npos) << table;
  EXPECT_NE(table.find("steer,steer-arith,coefficient=1,,0.5,"), std::string::npos) << table;
  EXPECT_EQ(count_of(table, "\n"), 5u);

  const auto again = build_report(dir.string());
  std::ifstream in2(again.table_path);
  std::stringstream ss2;
  ss2 << in2.rdbuf();
  EXPECT_EQ(ss2.str(), table);
  EXPECT_THROW(build_report((dir / "missing").string()), UsageError);
  fs::remove_all(dir);
}
