#include <gtest/gtest.h>

#include "lavid/prompting.hpp"

using namespace lavid;

TEST(PromptTextTest, SystemAndBaselinePrompts) {
  EXPECT_EQ(kSystemPrompt, "You are an AI video analyzer. Determine if the video is AI-generated or not?");
  EXPECT_EQ(baseline_text(BaselinePrompt::P1), "Do you think this video is generated by AI or not?");
  EXPECT_EQ(baseline_text(BaselinePrompt::P2), "Tell me if there are synthetic artifacts in the video or not?");
  EXPECT_EQ(baseline_text(BaselinePrompt::P3), "Do you think this video was created with the help of AI?");
  EXPECT_EQ(render_baseline_prompt(BaselinePrompt::P1),
            "These 8 images are consecutive frames of a video. Do you think this video is generated by AI or "
            "not?. Must return with 1) Yes or No only; 2) if Yes, explain the reason.");
}

TEST(PromptTextTest, BaselineParsing) {
  EXPECT_EQ(parse_baseline_prompt("P2"), BaselinePrompt::P2);
  EXPECT_EQ(to_string(BaselinePrompt::P3), "p3");
  EXPECT_THROW(parse_baseline_prompt("p4"), Error);
  EXPECT_EQ(parse_detection_mode("non_structured"), DetectionMode::NonStructured);
  EXPECT_THROW(parse_detection_mode("loose"), Error);
}

TEST(PromptTextTest, SmpPrompt) {
  EXPECT_EQ(render_smp_prompt(Tool::Rgb, "v1: Yes (truth: ai)"),
            "You are given an AI-generated video detection task. Assess the additional feature: RGB that could "
            "support your determination.\n"
            "Analysis History: v1: Yes (truth: ai)\n\n"
            "Evaluate your own analysis considering these factors:\n"
            "* Alignment with knowledge base\n"
            "* Interpretability and transparency\n"
            "* Robustness across scenarios\n"
            "Scoring: Provide a score from 0 to 10 based on your self-assessment. Higher score indicates an "
            "effective feature.");
  EXPECT_NE(render_smp_prompt(Tool::OpticalFlow, "").find("feature: optical_flow that"), std::string::npos);
}

TEST(PromptTextTest, PreparationPrompt) {
  EXPECT_EQ(render_preparation_prompt().substr(0, 60), "This is an AI-generated video detection task based on large ");
  EXPECT_NE(render_preparation_prompt().find("These tools will used to facilitate"), std::string::npos);
  EXPECT_TRUE(render_preparation_prompt().ends_with("Please summarize the tool list for me."));
}

TEST(DetectionPromptTest, RgbNonStructuredIsTheBaseline) {
  const auto p = render_detection_prompt(Tool::Rgb, DetectionMode::NonStructured, nullptr, 8, 0, BaselinePrompt::P2);
  EXPECT_EQ(p.system_text, kSystemPrompt);
  EXPECT_EQ(p.user_text, render_baseline_prompt(BaselinePrompt::P2));
  EXPECT_FALSE(p.schema);
}

TEST(DetectionPromptTest, ToolPromptDescribesTheEvidence) {
  const auto p = render_detection_prompt(Tool::Edge, DetectionMode::NonStructured, nullptr);
  EXPECT_TRUE(p.user_text.starts_with("These 8 images are consecutive frames of a video. The following 8 images "
                                      "are the Edge (edge) results extracted from those frames. "));
  EXPECT_NE(p.user_text.find(std::string(tool_info(Tool::Edge).description)), std::string::npos);
  EXPECT_TRUE(p.user_text.ends_with("Must return with 1) Yes or No only; 2) if Yes, explain the reason."));
  const auto flow = render_detection_prompt(Tool::OpticalFlow, DetectionMode::NonStructured, nullptr, 8, 7);
  EXPECT_NE(flow.user_text.find("The following 7 images are the Optical Flow (optical_flow) results extracted "
                                "from consecutive pairs of those frames."),
            std::string::npos);
}

TEST(DetectionPromptTest, StructuredCarriesTheTemplateSchema) {
  const auto tpl = initial_template(Tool::Sharpen);
  const auto p = render_detection_prompt(Tool::Sharpen, DetectionMode::Structured, &tpl);
  ASSERT_TRUE(p.schema);
  EXPECT_EQ(*p.schema, tpl.schema());
  EXPECT_TRUE(p.user_text.ends_with("Analyze the raw frames and the sharpen images and fill in every field of the "
                                    "structured response."));
  EXPECT_THROW(render_detection_prompt(Tool::Sharpen, DetectionMode::Structured, nullptr), Error);
}

TEST(TemplateTest, InitialSchemas) {
  EXPECT_EQ(initial_schema(Tool::Rgb).names(),
            (std::vector<std::string>{"is_ai_generated", "raw_frame_analysis", "explanation"}));
  EXPECT_EQ(initial_schema(Tool::OpticalFlow).names(),
            (std::vector<std::string>{"is_ai_generated", "raw_frame_analysis", "optical_flow_analysis", "explanation"}));
  EXPECT_EQ(selection_schema(Tool::Edge).names().back(), "confidence_0_to_1");
  for (const auto& info : kToolRegistry) {
    EXPECT_TRUE(schema_structurally_valid(initial_schema(info.id)));
    EXPECT_TRUE(schema_structurally_valid(selection_schema(info.id)));
  }
}

TEST(TemplateTest, ConstructionValidatesStructure) {
  EXPECT_THROW(PromptTemplate(StructuredSchema{{{"explanation", FieldKind::Str}}}, 0, TemplateProvenance::Initial),
               Error);
  StructuredSchema six{{{"is_ai_generated", FieldKind::Bool}}};
  for (int i = 0; i < 5; ++i) six.fields.push_back({"f" + std::to_string(i), FieldKind::Str});
  EXPECT_THROW(PromptTemplate(six, 0, TemplateProvenance::Initial), Error);
  StructuredSchema two_bools{{{"is_ai_generated", FieldKind::Bool}, {"other", FieldKind::Bool}}};
  EXPECT_FALSE(schema_structurally_valid(two_bools));
  StructuredSchema dup{{{"is_ai_generated", FieldKind::Bool}, {"a", FieldKind::Str}, {"a", FieldKind::Str}}};
  EXPECT_FALSE(schema_structurally_valid(dup));
}

TEST(SchemaTextTest, RenderAndParseRoundTrip) {
  const auto s = initial_schema(Tool::Depth);
  const auto text = render_schema_class(s);
  EXPECT_EQ(text,
            "class Structured_Response(BaseModel):\n"
            "    is_ai_generated: bool\n"
            "    raw_frame_analysis: str\n"
            "    depth_analysis: str\n"
            "    explanation: str\n");
  EXPECT_EQ(parse_schema_class(text), s);
  EXPECT_EQ(parse_schema_class("```python\nclass X(BaseModel):\n  a_b: str  # note\n  ok: bool\n  c: int\n```").names(),
            (std::vector<std::string>{"a_b", "ok"}));
  EXPECT_TRUE(parse_schema_class("nothing").fields.empty());
}

TEST(SchemaTextTest, JsonSchemaShape) {
  const auto j = to_json_schema(initial_schema(Tool::Rgb));
  EXPECT_EQ(j.at("type"), "json_schema");
  EXPECT_EQ(j.at("json_schema").at("strict"), true);
  const auto& schema = j.at("json_schema").at("schema");
  EXPECT_EQ(schema.at("properties").at("is_ai_generated").at("type"), "boolean");
  EXPECT_EQ(schema.at("properties").at("explanation").at("type"), "string");
  EXPECT_EQ(schema.at("required").size(), 3u);
  EXPECT_EQ(schema.at("additionalProperties"), false);
  EXPECT_EQ(schema_from_json(to_json(initial_schema(Tool::Edge))), initial_schema(Tool::Edge));
}

TEST(YesNoTest, LeadingTokenDecides) {
  EXPECT_EQ(parse_yes_no("Yes. The motion is odd.").verdict, true);
  EXPECT_EQ(parse_yes_no("no").verdict, false);
  EXPECT_EQ(parse_yes_no("1) No\n2) n/a").verdict, false);
  EXPECT_EQ(parse_yes_no("**Yes**, because").verdict, true);
  EXPECT_EQ(parse_yes_no("Answer: yes").verdict, true);
  const auto miss = parse_yes_no("The video seems real, no issues.");
  EXPECT_FALSE(miss.verdict);
  EXPECT_FALSE(miss.refused);
  const auto refusal = parse_yes_no("I'm sorry, I cannot determine this.");
  EXPECT_FALSE(refusal.verdict);
  EXPECT_TRUE(refusal.refused);
}

TEST(SmpScoreTest, FindsTheScore) {
  EXPECT_EQ(parse_smp_score("Score: 7"), 7.0);
  EXPECT_EQ(parse_smp_score("I would rate this 8/10."), 8.0);
  EXPECT_EQ(parse_smp_score("On a scale of 0 to 10, I give it 6.5 out of 10"), 6.5);
  EXPECT_EQ(parse_smp_score("Score (0-10): 9"), 9.0);
  EXPECT_EQ(parse_smp_score("Evaluated 25 videos; score 4"), 4.0);
  EXPECT_EQ(parse_smp_score("Score: 42"), 10.0);
  EXPECT_EQ(parse_smp_score("no number here"), std::nullopt);
}
