#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "lavid/selection.hpp"

using namespace lavid;
using lavid::testing::MockHarness;
using lavid::testing::TempDir;

namespace {

constexpr auto R = GroundTruth::Real;
constexpr auto A = GroundTruth::Ai;

PredictionRecord rec(GroundTruth truth, GroundTruth pred, double conf = 1.0) { return {"", truth, pred, conf}; }

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::Io;
}

}  // namespace

TEST(WeightedF1Test, UnitConfidenceExample) {
  // 3 TP, 2 FP, 2 FN for the real class
  std::vector<PredictionRecord> r{rec(R, R), rec(R, R), rec(R, R), rec(A, R), rec(A, R), rec(R, A), rec(R, A)};
  const auto pr = weighted_f1(r);
  EXPECT_DOUBLE_EQ(pr.precision, 0.6);
  EXPECT_DOUBLE_EQ(pr.recall, 0.6);
  EXPECT_DOUBLE_EQ(pr.f1, 0.6);
  const auto s = score_tool(r, 7, 0.5);
  EXPECT_EQ(s.s_tool, 0.65);
  EXPECT_EQ(s.s_mp, 0.7);
}

TEST(WeightedF1Test, ConfidenceWeightsTheSums) {
  // tp = 0.5, fn = 1.0, fp = 0.25; true negatives do not count
  std::vector<PredictionRecord> r{rec(R, R, 0.5), rec(R, A, 1.0), rec(A, R, 0.25), rec(A, A, 0.9)};
  const auto pr = weighted_f1(r);
  EXPECT_NEAR(pr.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(pr.recall, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(pr.f1, 4.0 / 9.0, 1e-15);
}

TEST(WeightedF1Test, DegenerateCases) {
  EXPECT_EQ(code_of([] { weighted_f1({}); }), ErrorCode::EmptyRecords);
  std::vector<PredictionRecord> none{rec(A, A), rec(A, A)};
  EXPECT_EQ(weighted_f1(none).f1, 0.0);
  std::vector<PredictionRecord> zero{rec(R, R, 0.0), rec(A, R, 0.0)};
  EXPECT_EQ(weighted_f1(zero).f1, 0.0);
  std::vector<PredictionRecord> perfect{rec(R, R, 0.3), rec(A, A, 0.2)};
  EXPECT_EQ(weighted_f1(perfect).f1, 1.0);
}

TEST(WeightedF1Test, MacroAveragesBothClasses) {
  std::vector<PredictionRecord> r{rec(R, R), rec(R, A), rec(A, A), rec(A, A)};
  const double real = weighted_f1(r, R).f1, ai = weighted_f1(r, A).f1;
  EXPECT_NEAR(real, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(ai, 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(f1_score(r, F1Mode::Macro), (real + ai) / 2);
  EXPECT_EQ(parse_f1_mode("macro"), F1Mode::Macro);
  EXPECT_THROW(parse_f1_mode("micro"), Error);
}

TEST(WeightedF1Test, BoundedAndScaleInvariant) {
  std::mt19937_64 rng(5);
  for (int it = 0; it < 300; ++it) {
    std::vector<PredictionRecord> r;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      r.push_back(rec(rng() % 2 ? R : A, rng() % 2 ? R : A, static_cast<double>(rng() % 1000) / 999.0));
    }
    const double f = weighted_f1(r).f1;
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    auto scaled = r;
    for (auto& x : scaled) x.confidence *= 0.37;
    EXPECT_NEAR(weighted_f1(scaled).f1, f, 1e-12);
  }
}

TEST(ScoreTest, AlphaEndpointsAndValidation) {
  std::vector<PredictionRecord> r{rec(R, R), rec(A, R)};
  const double f1 = weighted_f1(r).f1;
  EXPECT_DOUBLE_EQ(score_tool(r, 3, 1.0).s_tool, f1);
  EXPECT_DOUBLE_EQ(score_tool(r, 3, 0.0).s_tool, 0.3);
  EXPECT_EQ(score_tool(r, 14, 0.5).s_mp_raw, 10.0);
  EXPECT_EQ(code_of([&] { score_tool(r, 3, 1.5); }), ErrorCode::InvalidRequest);
}

TEST(ScoreTest, ThresholdKeepsTiesInOrder) {
  std::vector<ToolScore> scores{{Tool::Edge, 0, 0, 0, 0.65, 0.5},
                                {Tool::Depth, 0, 0, 0, 0.64, 0.5},
                                {Tool::Sharpen, 0, 0, 0, 0.9, 0.5}};
  EXPECT_EQ(threshold_tools(scores, 0.65), (std::vector<Tool>{Tool::Edge, Tool::Sharpen}));
  EXPECT_TRUE(threshold_tools(scores, 0.95).empty());
}

TEST(ScoreTest, RefusalsCountAsWrongWithZeroWeight) {
  Detection d;
  d.sample_id = "x";
  d.refused = true;
  const auto r = to_record(d, R);
  EXPECT_EQ(r.predicted, A);
  EXPECT_EQ(r.confidence, 0.0);
  Detection ok;
  ok.has_verdict = true;
  ok.is_ai_generated = true;
  ok.confidence = 0.8;
  EXPECT_EQ(to_record(ok, R).predicted, A);
  EXPECT_EQ(to_record(ok, R).confidence, 0.8);
}

TEST(ToolkitProposalTest, DefaultReplyNamesEveryCandidate) {
  EXPECT_EQ(extract_toolkit(MockLvlm::default_preparation_response()), candidate_tools());
}

TEST(ToolkitProposalTest, OnlyHeadersCount) {
  const std::string reply =
      "Here are some tools:\n\n"
      "1. **Optical Flow Analysis**: tracks motion. Could be combined with depth cues.\n"
      "### Edge Detection\n"
      "Edges reveal blending.\n"
      "- **Noise residuals** - reveal denoising traces\n"
      "* Frequency analysis\n"
      "Sharpening is also common.\n";
  EXPECT_EQ(extract_toolkit(reply), (std::vector<Tool>{Tool::Denoise, Tool::OpticalFlow, Tool::Edge}));
  EXPECT_TRUE(extract_toolkit("Nothing useful.").empty());
}

TEST(ToolkitProposalTest, ProposalUsesThePreparationPrompt) {
  MockBehavior b;
  b.preparation_response = "1. Depth estimation\n2. Facial landmarks\n";
  MockHarness h(b, {});
  EXPECT_EQ(propose_toolkit(h.client), (std::vector<Tool>{Tool::Landmark, Tool::Depth}));
  ASSERT_EQ(h.recorder->sent().size(), 1u);
  EXPECT_EQ(h.recorder->sent()[0].user_text, render_preparation_prompt());
}

TEST(SmpTest, ParsesOrFallsBackToZero) {
  MockBehavior b;
  b.smp_scores = {{"edge", 8}};
  b.smp_text = {{"depth", "I'm sorry, I cannot rate that."}, {"sharpen", "hard to say"}};
  MockHarness h(b, {});
  EXPECT_EQ(score_smp(h.client, Tool::Edge, "history"), 8.0);
  EXPECT_EQ(score_smp(h.client, Tool::Depth, "history"), 0.0);
  EXPECT_EQ(score_smp(h.client, Tool::Sharpen, "history"), 0.0);
  EXPECT_EQ(h.recorder->sent()[0].user_text, render_smp_prompt(Tool::Edge, "history"));
}

// ---------------------------------------------------------------------------

namespace {

MockBehavior selection_behavior() {
  MockBehavior b;
  b.seed = 42;
  MockRule edge;
  edge.tool = "edge";
  edge.p_correct = 0.95;
  MockRule sat;
  sat.tool = "saturation";
  sat.p_correct = 0.3;
  b.rules = {edge, sat};
  b.fallback.p_correct = 0.6;
  return b;
}

std::vector<VideoSample> reference_set(const TempDir& dir, int per_class = 10) {
  lavid::testing::FixtureOptions o;
  o.n_real = o.n_ai = per_class;
  o.frames = 6;
  o.width = o.height = 16;
  return read_manifest(lavid::testing::write_fixture(dir.path(), o));
}

}  // namespace

TEST(SelectToolkitTest, KeepsToolsThatBeatTheBaseline) {
  TempDir dir;
  const auto ref = reference_set(dir);
  MockHarness h(selection_behavior(), ref);
  const auto report = select_toolkit(h.ctx, {Tool::Saturation, Tool::Edge}, ref);
  EXPECT_TRUE(report.complete);
  EXPECT_EQ(report.baseline.tool, Tool::Rgb);
  ASSERT_EQ(report.scores.size(), 2u);
  EXPECT_GT(report.scores[1].f1_weighted, report.baseline.f1_weighted);
  EXPECT_LT(report.scores[0].f1_weighted, report.baseline.f1_weighted);
  EXPECT_EQ(report.selected, (std::vector<Tool>{Tool::Edge}));
  // every detection used the selection schema
  for (const auto& r : h.recorder->sent()) {
    if (r.annotation("purpose") != "detect") continue;
    ASSERT_TRUE(r.response_schema);
    EXPECT_EQ(*r.response_schema, selection_schema(parse_tool(r.annotation("tool"))));
  }
  EXPECT_EQ(h.recorder->count("detect"), 3u * ref.size());
  EXPECT_EQ(h.recorder->count("smp"), 3u);
}

TEST(SelectToolkitTest, ResultIsIndependentOfJobs) {
  TempDir dir;
  const auto ref = reference_set(dir);
  MockHarness a(selection_behavior(), ref), b(selection_behavior(), ref);
  SelectionOptions serial, parallel;
  parallel.jobs = 4;
  EXPECT_EQ(to_json(select_toolkit(a.ctx, {Tool::Saturation, Tool::Edge}, ref, serial)),
            to_json(select_toolkit(b.ctx, {Tool::Saturation, Tool::Edge}, ref, parallel)));
}

TEST(SelectToolkitTest, SkipsUnavailableAdapters) {
  TempDir dir;
  const auto ref = reference_set(dir, 4);
  MockHarness h(selection_behavior(), ref);
  const auto report = select_toolkit(h.ctx, {Tool::Depth, Tool::Edge}, ref);
  ASSERT_EQ(report.skipped.size(), 1u);
  EXPECT_EQ(report.skipped[0].first, Tool::Depth);
  EXPECT_EQ(report.scores.size(), 1u);
}

TEST(SelectToolkitTest, NeedsBothClasses) {
  TempDir dir;
  auto ref = reference_set(dir, 3);
  ref.erase(std::remove_if(ref.begin(), ref.end(), [](const auto& s) { return s.label == A; }), ref.end());
  MockHarness h(selection_behavior(), ref);
  EXPECT_EQ(code_of([&] { select_toolkit(h.ctx, {Tool::Edge}, ref); }), ErrorCode::InsufficientData);
}

TEST(SelectToolkitTest, ResumesFromCheckpoint) {
  TempDir dir;
  const auto ref = reference_set(dir, 5);
  SelectionOptions o;
  o.checkpoint_path = dir / "sel.json";
  MockHarness first(selection_behavior(), ref);
  const auto full = select_toolkit(first.ctx, {Tool::Saturation, Tool::Edge}, ref, o);

  // drop the last tool from the checkpoint, as if the run had stopped there
  auto j = nlohmann::json::parse(lavid::testing::read_file(o.checkpoint_path));
  j["scores"].erase(1);
  std::ofstream(o.checkpoint_path) << j.dump();

  MockHarness second(selection_behavior(), ref);
  const auto resumed = select_toolkit(second.ctx, {Tool::Saturation, Tool::Edge}, ref, o);
  EXPECT_EQ(to_json(resumed), to_json(full));
  for (const auto& r : second.recorder->sent()) EXPECT_EQ(r.annotation("tool"), "edge");
}

TEST(SelectionReportTest, JsonRoundTrip) {
  SelectionReport r;
  r.alpha = 0.3;
  r.baseline = {Tool::Rgb, 0.5, 6, 0.6, 0.57, 0.3};
  r.scores = {{Tool::Edge, 0.9, 8, 0.8, 0.83, 0.3}};
  r.selected = {Tool::Edge};
  r.skipped = {{Tool::Depth, "no adapter"}};
  const auto back = selection_report_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));
  EXPECT_EQ(back.skipped[0].second, "no adapter");
}
