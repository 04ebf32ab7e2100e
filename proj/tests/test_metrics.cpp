#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "lavid/metrics.hpp"

using namespace lavid;
using lavid::testing::TempDir;

namespace {

constexpr auto R = GroundTruth::Real;
constexpr auto A = GroundTruth::Ai;

EnsembleVerdict verdict(const std::string& id, GroundTruth final, int run = 0, int tools = 1, int refusals = 0) {
  EnsembleVerdict v;
  v.sample_id = id;
  v.final = final;
  v.run = run;
  for (int i = 0; i < tools; ++i) {
    Detection d;
    d.sample_id = id;
    d.tool = i == 0 ? Tool::Edge : Tool::Sharpen;
    d.refused = i < refusals;
    d.has_verdict = !d.refused;
    v.per_tool.push_back(d);
    v.tools_used.push_back(d.tool);
  }
  return v;
}

std::map<std::string, SampleTruth> truths() {
  return {{"r1", {R, "cam"}}, {"r2", {R, "cam"}}, {"r3", {R, "web"}}, {"r4", {R, "web"}},
          {"a1", {A, "gen"}}, {"a2", {A, "gen"}}, {"a3", {A, "gen"}}, {"a4", {A, "gen"}}};
}

std::vector<EnsembleVerdict> run_verdicts(int run = 0) {
  // real: 3 of 4 right, ai: 2 of 4 right
  return {verdict("r1", R, run), verdict("r2", R, run), verdict("r3", R, run), verdict("r4", A, run),
          verdict("a1", A, run), verdict("a2", A, run), verdict("a3", R, run), verdict("a4", R, run)};
}

}  // namespace

TEST(EvaluateTest, OverallMetricsMatchHandCounts) {
  const auto reports = evaluate(run_verdicts(), truths());
  ASSERT_EQ(reports.size(), 4u);
  const auto& all = reports.back();
  EXPECT_EQ(all.dataset, "overall");
  EXPECT_EQ(all.n_real, 4);
  EXPECT_EQ(all.n_ai, 4);
  EXPECT_DOUBLE_EQ(all.accuracy, 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(all.precision, 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(all.recall, 3.0 / 4.0);
  EXPECT_NEAR(all.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(all.confusion[0][0], 3);
  EXPECT_EQ(all.confusion[0][1], 1);
  EXPECT_EQ(all.confusion[1][0], 2);
  EXPECT_EQ(all.confusion[1][1], 2);
}

TEST(EvaluateTest, PerSourceReportsAreSortedAndPartitionTheVerdicts) {
  const auto reports = evaluate(run_verdicts(), truths());
  EXPECT_EQ(reports[0].dataset, "cam");
  EXPECT_EQ(reports[1].dataset, "gen");
  EXPECT_EQ(reports[2].dataset, "web");
  std::int64_t total = 0;
  for (std::size_t i = 0; i + 1 < reports.size(); ++i) total += reports[i].n_verdicts;
  EXPECT_EQ(total, reports.back().n_verdicts);
  // a single-class source has no true positives or no positives at all
  EXPECT_DOUBLE_EQ(reports[1].accuracy, 0.5);
  EXPECT_EQ(reports[1].f1, 0.0);
  EXPECT_DOUBLE_EQ(reports[0].accuracy, 1.0);
  EXPECT_DOUBLE_EQ(reports[0].f1, 1.0);
}

TEST(EvaluateTest, RefusalRateAndToolsPerVideo) {
  std::vector<EnsembleVerdict> v{verdict("r1", R, 0, 2, 1), verdict("a1", A, 0, 2, 2), verdict("a2", A, 0, 1, 0)};
  const auto all = evaluate(v, truths()).back();
  EXPECT_DOUBLE_EQ(all.refusal_rate, 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(all.mean_tools_per_video, 5.0 / 3.0);
}

TEST(EvaluateTest, RepeatsAverageRunMetrics) {
  auto v = run_verdicts(0);
  // second run gets everything right
  for (const auto& [id, t] : truths()) v.push_back(verdict(id, t.label, 1));
  const auto all = evaluate(v, truths()).back();
  EXPECT_EQ(all.runs, 2);
  EXPECT_EQ(all.n_real, 4);
  EXPECT_EQ(all.n_verdicts, 16);
  EXPECT_DOUBLE_EQ(all.accuracy, (5.0 / 8.0 + 1.0) / 2);
  EXPECT_NEAR(all.f1, (2.0 / 3.0 + 1.0) / 2, 1e-15);
  EXPECT_EQ(all.confusion[0][0] + all.confusion[0][1] + all.confusion[1][0] + all.confusion[1][1], 16);
}

TEST(EvaluateTest, UnknownSampleIsMissingTruth) {
  try {
    evaluate({verdict("zz", R)}, truths());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingTruth);
  }
}

TEST(EvaluateTest, MetricsStayInRange) {
  std::mt19937_64 rng(3);
  const auto t = truths();
  for (int it = 0; it < 200; ++it) {
    std::vector<EnsembleVerdict> v;
    for (const auto& [id, truth] : t) {
      if (rng() % 4 == 0) continue;
      v.push_back(verdict(id, rng() % 2 ? R : A, static_cast<int>(rng() % 2), 1 + static_cast<int>(rng() % 2),
                          static_cast<int>(rng() % 2)));
    }
    if (v.empty()) continue;
    for (const auto& r : evaluate(v, t)) {
      for (double x : {r.accuracy, r.precision, r.recall, r.f1, r.refusal_rate}) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
      }
      EXPECT_LE(r.f1, std::max(r.precision, r.recall) + 1e-12);
    }
  }
}

TEST(RenderTest, CellFormat) {
  EXPECT_EQ(format_cell(0.93, 0.9346), "93.00/93.46");
  EXPECT_EQ(format_cell(1.0, 0.0), "100.00/0.00");
  EXPECT_EQ(percent(0.12345), "12.35");
}

TEST(RenderTest, CsvAndJsonRoundTrip) {
  auto v = run_verdicts(0);
  for (const auto& [id, t] : truths()) v.push_back(verdict(id, t.label, 1, 2, 1));
  const auto reports = evaluate(v, truths());
  const auto csv = render_csv(reports);
  EXPECT_TRUE(csv.starts_with(std::string(kCsvHeader) + "\n"));
  EXPECT_EQ(parse_csv(csv), reports);
  for (const auto& r : reports) EXPECT_EQ(eval_report_from_json(to_json(r)), r);
  EXPECT_THROW(parse_csv("bad header\n"), Error);
}

TEST(RenderTest, WritesThreeFiles) {
  TempDir dir;
  const auto reports = evaluate(run_verdicts(), truths());
  render_report(reports, dir.path() / "out");
  const auto txt = lavid::testing::read_file(dir / "out/eval_report.txt");
  EXPECT_NE(txt.find("62.50/66.67"), std::string::npos);
  EXPECT_EQ(parse_csv(lavid::testing::read_file(dir / "out/eval_report.csv")), reports);
  const auto j = nlohmann::json::parse(lavid::testing::read_file(dir / "out/eval_report.json"));
  EXPECT_EQ(j.at("reports").size(), reports.size());
}

TEST(TruthsTest, FromManifest) {
  VideoSample s;
  s.id = "x";
  s.label = A;
  s.source = "sora";
  const auto t = truths_from_manifest({s});
  EXPECT_EQ(t.at("x").label, A);
  EXPECT_EQ(t.at("x").source, "sora");
}
