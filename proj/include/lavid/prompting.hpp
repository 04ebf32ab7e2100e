#pragma once

#include <cmath>
#include <optional>
#include <regex>
#include <string>
#include <string_view>

#include "lavid/ektools.hpp"
#include "lavid/error.hpp"
#include "lavid/refusal.hpp"
#include "lavid/schema.hpp"

namespace lavid {

inline constexpr std::string_view kSystemPrompt =
    "You are an AI video analyzer. Determine if the video is AI-generated or not?";

enum class BaselinePrompt { P1, P2, P3 };

constexpr std::string_view baseline_text(BaselinePrompt p) {
  switch (p) {
    case BaselinePrompt::P1: return "Do you think this video is generated by AI or not?";
    case BaselinePrompt::P2: return "Tell me if there are synthetic artifacts in the video or not?";
    case BaselinePrompt::P3: return "Do you think this video was created with the help of AI?";
  }
  return "";
}

inline BaselinePrompt parse_baseline_prompt(std::string_view s) {
  const auto l = to_lower_ascii(s);
  if (l == "p1") return BaselinePrompt::P1;
  if (l == "p2") return BaselinePrompt::P2;
  if (l == "p3") return BaselinePrompt::P3;
  throw Error(ErrorCode::ConfigError, "baseline_prompt must be p1, p2 or p3");
}

constexpr std::string_view to_string(BaselinePrompt p) {
  return p == BaselinePrompt::P1 ? "p1" : p == BaselinePrompt::P2 ? "p2" : "p3";
}

enum class DetectionMode { NonStructured, Structured };

constexpr std::string_view to_string(DetectionMode m) {
  return m == DetectionMode::Structured ? "structured" : "non_structured";
}

inline DetectionMode parse_detection_mode(std::string_view s) {
  if (s == "structured") return DetectionMode::Structured;
  if (s == "non_structured") return DetectionMode::NonStructured;
  throw Error(ErrorCode::ConfigError, "mode must be structured or non_structured");
}

// ---------------------------------------------------------------------------

enum class TemplateProvenance { Initial, Rewritten };

/// A structured response schema plus its position in an adaptation run. The
/// schema is structurally valid by construction.
class PromptTemplate {
 public:
  PromptTemplate(StructuredSchema schema, int version, TemplateProvenance provenance)
      : schema_(std::move(schema)), version_(version), provenance_(provenance) {
    const auto problems = schema_structure_problems(schema_);
    if (!problems.empty()) throw Error(ErrorCode::InvalidRequest, "invalid template: " + problems.front());
  }

  const StructuredSchema& schema() const noexcept { return schema_; }
  int version() const noexcept { return version_; }
  TemplateProvenance provenance() const noexcept { return provenance_; }

  bool operator==(const PromptTemplate&) const = default;

 private:
  StructuredSchema schema_;
  int version_ = 0;
  TemplateProvenance provenance_ = TemplateProvenance::Initial;
};

/// {is_ai_generated, raw_frame_analysis, <tool>_analysis, explanation}; the
/// tool field is omitted for rgb.
inline StructuredSchema initial_schema(Tool tool) {
  StructuredSchema s;
  s.fields.push_back({std::string(kVerdictField), FieldKind::Bool});
  s.fields.push_back({"raw_frame_analysis", FieldKind::Str});
  if (tool != Tool::Rgb) s.fields.push_back({std::string(tool_name(tool)) + "_analysis", FieldKind::Str});
  s.fields.push_back({"explanation", FieldKind::Str});
  return s;
}

inline PromptTemplate initial_template(Tool tool) {
  return PromptTemplate(initial_schema(tool), 0, TemplateProvenance::Initial);
}

inline constexpr std::string_view kConfidenceField = "confidence_0_to_1";

/// Schema used while scoring tools: the initial fields plus a confidence
/// string the model fills with a number in [0, 1].
inline StructuredSchema selection_schema(Tool tool) {
  auto s = initial_schema(tool);
  s.fields.push_back({std::string(kConfidenceField), FieldKind::Str});
  return s;
}

// ---------------------------------------------------------------------------

struct RenderedPrompt {
  std::string system_text;
  std::string user_text;
  std::optional<StructuredSchema> schema;
};

inline std::string render_baseline_prompt(BaselinePrompt p, std::size_t raw_frames = 8) {
  return "These " + std::to_string(raw_frames) + " images are consecutive frames of a video. " +
         std::string(baseline_text(p)) + ". Must return with 1) Yes or No only; 2) if Yes, explain the reason.";
}

/// Builds the detection message. Raw frames always come first; for tools
/// other than rgb the EK images follow and are introduced with the tool's
/// description.
inline RenderedPrompt render_detection_prompt(Tool tool, DetectionMode mode, const PromptTemplate* tpl,
                                              std::size_t raw_frames = 8, std::size_t ek_frames = 8,
                                              BaselinePrompt baseline = BaselinePrompt::P1) {
  if (mode == DetectionMode::Structured && tpl == nullptr) {
    throw Error(ErrorCode::InvalidRequest, "structured detection needs a template");
  }
  RenderedPrompt out;
  out.system_text = std::string(kSystemPrompt);
  if (tool == Tool::Rgb && mode == DetectionMode::NonStructured) {
    out.user_text = render_baseline_prompt(baseline, raw_frames);
    return out;
  }
  std::string text = "These " + std::to_string(raw_frames) + " images are consecutive frames of a video.";
  if (tool != Tool::Rgb) {
    const auto& info = tool_info(tool);
    text += " The following " + std::to_string(ek_frames) + " images are the " + std::string(info.display) + " (" +
            std::string(info.name) + ") results extracted from " +
            (tool == Tool::OpticalFlow ? "consecutive pairs of those frames" : "those frames") + ". " +
            std::string(info.description);
  }
  if (mode == DetectionMode::NonStructured) {
    text += " " + std::string(baseline_text(baseline)) +
            ". Must return with 1) Yes or No only; 2) if Yes, explain the reason.";
  } else {
    text += " Analyze the raw frames" + std::string(tool != Tool::Rgb ? " and the " + std::string(tool_name(tool)) + " images" : "") +
            " and fill in every field of the structured response.";
    out.schema = tpl->schema();
  }
  out.user_text = std::move(text);
  return out;
}

/// Self-assessment prompt; rgb is rendered as "RGB".
inline std::string render_smp_prompt(Tool tool, std::string_view fewshot_results) {
  const std::string name = tool == Tool::Rgb ? "RGB" : std::string(tool_name(tool));
  return "You are given an AI-generated video detection task. Assess the additional feature: " + name +
         " that could support your determination.\n"
         "Analysis History: " +
         std::string(fewshot_results) +
         "\n\n"
         "Evaluate your own analysis considering these factors:\n"
         "* Alignment with knowledge base\n"
         "* Interpretability and transparency\n"
         "* Robustness across scenarios\n"
         "Scoring: Provide a score from 0 to 10 based on your self-assessment. Higher score indicates an "
         "effective feature.";
}

inline constexpr std::string_view kPreparationPrompt =
    "This is an AI-generated video detection task based on large vision-language models (LVLMs). Besides "
    "using raw frames from the video, are there any external tools that could help extract additional video "
    "information? These tools will used to facilitate LVLMs-based detection. Specifically, I'm looking for "
    "methods or tools that can generate features from the video like optical flow and sharpening. Please "
    "summarize the tool list for me.";

inline std::string render_preparation_prompt() { return std::string(kPreparationPrompt); }

// ---------------------------------------------------------------------------
// Parsing

struct YesNo {
  std::optional<bool> verdict;  // true = AI-generated
  bool refused = false;
};

/// Leading yes/no token decides; otherwise a refusal phrase marks a refusal
/// and anything else is a parse miss (no verdict, not refused).
inline YesNo parse_yes_no(std::string_view raw_text, const RefusalClassifier& refusal = RefusalClassifier()) {
  if (auto v = leading_verdict_token(raw_text)) return {v, false};
  return {std::nullopt, refusal.matches(raw_text)};
}

/// First number in [0, 10]; "0 to 10" scale echoes and "/10", "out of 10"
/// denominators are ignored. An out-of-range number is clamped. nullopt means
/// no score was found.
inline std::optional<double> parse_smp_score(std::string_view raw_text) {
  static const std::regex scale_echo(R"(\b0\s*(?:to|-|–)\s*10\b)", std::regex::icase);
  static const std::regex denominator(R"((?:/|\bout of)\s*10(?:\.0+)?\b)", std::regex::icase);
  static const std::regex number(R"((\d+(?:\.\d+)?))");
  std::string text = std::regex_replace(std::string(raw_text), scale_echo, " ");
  text = std::regex_replace(text, denominator, " ");
  std::optional<double> first;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it) {
    const double v = std::stod((*it)[1].str());
    if (v >= 0.0 && v <= 10.0) return v;
    if (!first) first = v;
  }
  if (first) return std::clamp(*first, 0.0, 10.0);
  return std::nullopt;
}

}  // namespace lavid
