#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/dataset.hpp"
#include "lavid/ektools.hpp"
#include "lavid/log.hpp"
#include "lavid/lvlm.hpp"
#include "lavid/prompting.hpp"

namespace lavid {

/// PNG-encoded raw window and EK frames for one (sample, tool).
struct Evidence {
  std::vector<std::vector<std::uint8_t>> raw;
  std::vector<std::vector<std::uint8_t>> ek;  // empty for rgb
};

/// Memoises windowing, tool application and PNG encoding, which are pure
/// functions of (sample, tool, window). Thread-safe.
class EvidenceCache {
 public:
  EvidenceCache(std::size_t window, const AdapterSet* adapters) : window_(window), adapters_(adapters) {}

  std::shared_ptr<const Evidence> get(const VideoSample& sample, Tool tool) {
    const auto key = sample.id + "\n" + std::string(tool_name(tool));
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const auto frames = raw_frames(sample);
    auto ev = std::make_shared<Evidence>();
    for (const auto& f : *frames) ev->raw.push_back(encode_png(f));
    if (tool != Tool::Rgb) {
      const auto art = apply_tool(tool, *frames, adapters_);
      for (const auto& f : art.frames) ev->ek.push_back(encode_png(f));
    }
    std::lock_guard lock(mu_);
    return cache_.emplace(key, std::move(ev)).first->second;
  }

  std::size_t window() const noexcept { return window_; }

 private:
  std::shared_ptr<const FrameSequence> raw_frames(const VideoSample& sample) {
    {
      std::lock_guard lock(mu_);
      if (auto it = frames_.find(sample.id); it != frames_.end()) return it->second;
    }
    auto seq = std::make_shared<const FrameSequence>(select_window(sample, window_));
    std::lock_guard lock(mu_);
    return frames_.emplace(sample.id, std::move(seq)).first->second;
  }

  std::size_t window_;
  const AdapterSet* adapters_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Evidence>> cache_;
  std::map<std::string, std::shared_ptr<const FrameSequence>> frames_;
};

/// Everything a detection call needs besides the sample and tool.
struct DetectionContext {
  Client& client;
  EvidenceCache& evidence;
  std::string model_id;
  BaselinePrompt baseline = BaselinePrompt::P1;
};

struct Detection {
  std::string sample_id;
  Tool tool = Tool::Rgb;
  bool is_ai_generated = false;
  bool has_verdict = false;  // false for refusals and parse misses
  double confidence = 1.0;
  std::map<std::string, std::string> field_analyses;
  bool refused = false;
  std::string raw_text;
};

inline double parse_confidence(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == 0 || !std::isfinite(v)) return 1.0;
    return std::clamp(v, 0.0, 1.0);
  } catch (const std::exception&) {
    return 1.0;
  }
}

/// One model verdict for one tool: window -> EK artifact -> prompt -> parse.
/// Refusals are captured in the Detection, not thrown. Structured output the
/// client cannot parse is recorded as a parse miss.
inline Detection detect_with_tool(DetectionContext& ctx, const VideoSample& sample, Tool tool,
                                  const PromptTemplate* tpl, DetectionMode mode) {
  const auto ev = ctx.evidence.get(sample, tool);
  auto prompt = render_detection_prompt(tool, mode, tpl, ev->raw.size(), ev->ek.size(), ctx.baseline);

  LvlmRequest req;
  req.system_text = std::move(prompt.system_text);
  req.user_text = std::move(prompt.user_text);
  req.response_schema = std::move(prompt.schema);
  req.model_id = ctx.model_id;
  req.images = ev->raw;
  req.images.insert(req.images.end(), ev->ek.begin(), ev->ek.end());
  req.annotations = {{"purpose", "detect"},
                     {"tool", std::string(tool_name(tool))},
                     {"sample_id", sample.id},
                     {"mode", std::string(to_string(mode))}};

  Detection d;
  d.sample_id = sample.id;
  d.tool = tool;
  LvlmResponse resp;
  try {
    resp = ctx.client.complete(req);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SchemaViolation) throw;
    log_warn("unparseable structured reply for " + sample.id + "/" + std::string(tool_name(tool)));
    d.raw_text = e.message();
    d.confidence = 0.0;
    return d;
  }
  d.raw_text = resp.raw_text;
  d.refused = resp.refused;
  if (resp.refused) {
    d.confidence = 0.0;
    return d;
  }
  if (resp.parsed_fields) {
    for (const auto& [name, value] : *resp.parsed_fields) {
      if (std::holds_alternative<std::string>(value)) d.field_analyses[name] = std::get<std::string>(value);
    }
    d.is_ai_generated = resp.bool_field(std::string(kVerdictField)).value_or(false);
    d.has_verdict = true;
    if (auto c = resp.str_field(std::string(kConfidenceField))) d.confidence = parse_confidence(*c);
  } else {
    const auto yn = parse_yes_no(resp.raw_text, ctx.client.refusal());
    d.refused = yn.refused;
    if (yn.verdict) {
      d.is_ai_generated = *yn.verdict;
      d.has_verdict = true;
    } else {
      d.confidence = 0.0;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------

struct EnsembleVerdict {
  std::string sample_id;
  GroundTruth final = GroundTruth::Real;
  std::vector<Detection> per_tool;
  std::vector<Tool> tools_used;
  double confidence = 0.0;
  bool all_refused = false;  // no tool produced a usable verdict
  bool degraded = false;     // at least one tool was unavailable
  int run = 0;
};

/// OR rule: Ai iff any usable per-tool verdict says AI-generated. Confidence
/// is the max over the detections supporting the final label. With no usable
/// verdict the result is Real with confidence 0 and all_refused set.
inline EnsembleVerdict ensemble(std::string sample_id, std::vector<Detection> detections) {
  EnsembleVerdict v;
  v.sample_id = std::move(sample_id);
  bool any_usable = false, any_ai = false;
  for (const auto& d : detections) {
    v.tools_used.push_back(d.tool);
    if (d.refused || !d.has_verdict) continue;
    any_usable = true;
    any_ai = any_ai || d.is_ai_generated;
  }
  if (!any_usable) {
    v.final = GroundTruth::Real;
    v.confidence = 0.0;
    v.all_refused = true;
  } else {
    v.final = any_ai ? GroundTruth::Ai : GroundTruth::Real;
    for (const auto& d : detections) {
      if (d.refused || !d.has_verdict) continue;
      if (!any_ai || d.is_ai_generated) v.confidence = std::max(v.confidence, d.confidence);
    }
  }
  v.per_tool = std::move(detections);
  return v;
}

inline std::string render_pick_prompt(const std::vector<Tool>& toolkit, std::size_t raw_frames) {
  std::string text = "These " + std::to_string(raw_frames) +
                     " images are consecutive frames of a video. Before deciding whether this video is "
                     "AI-generated, choose which of the following analysis tools would be most useful for this "
                     "particular video:\n";
  for (auto t : toolkit) {
    text += "- " + std::string(tool_name(t)) + ": " + std::string(tool_info(t).description) + "\n";
  }
  text += "Reply with the names of the chosen tools only, separated by commas.";
  return text;
}

/// Position of `needle` in `hay` as a whole word (no letter, digit or '_'
/// on either side), or npos.
inline std::size_t find_word(std::string_view hay, std::string_view needle) {
  auto word_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) {
    const bool left = pos == 0 || !word_char(hay[pos - 1]);
    const bool right = pos + needle.size() == hay.size() || !word_char(hay[pos + needle.size()]);
    if (left && right) return pos;
  }
  return std::string_view::npos;
}

/// Tool names mentioned in free text, in mention order, restricted to `allowed`.
inline std::vector<Tool> mentioned_tools(std::string_view text, const std::vector<Tool>& allowed) {
  const auto lower = normalize_for_matching(text);
  std::vector<std::pair<std::size_t, Tool>> hits;
  for (auto t : allowed) {
    for (auto needle : {to_lower_ascii(tool_name(t)), to_lower_ascii(tool_info(t).display)}) {
      if (auto pos = find_word(lower, needle); pos != std::string::npos) {
        hits.emplace_back(pos, t);
        break;
      }
    }
  }
  std::sort(hits.begin(), hits.end());
  std::vector<Tool> out;
  for (const auto& [pos, t] : hits) out.push_back(t);
  return out;
}

/// Lets the model choose a per-video subset of the toolkit from the raw
/// window. Empty or out-of-toolkit answers fall back to the full toolkit.
inline std::vector<Tool> pick_tools_for_video(DetectionContext& ctx, const VideoSample& sample,
                                              const std::vector<Tool>& toolkit) {
  if (toolkit.empty()) throw Error(ErrorCode::InvalidRequest, "empty toolkit");
  const auto ev = ctx.evidence.get(sample, Tool::Rgb);
  LvlmRequest req;
  req.system_text = std::string(kSystemPrompt);
  req.user_text = render_pick_prompt(toolkit, ev->raw.size());
  req.images = ev->raw;
  req.model_id = ctx.model_id;
  std::string names;
  for (auto t : toolkit) names += (names.empty() ? "" : ",") + std::string(tool_name(t));
  req.annotations = {{"purpose", "pick"}, {"sample_id", sample.id}, {"toolkit", names}};
  const auto resp = ctx.client.complete(req);
  auto chosen = resp.refused ? std::vector<Tool>{} : mentioned_tools(resp.raw_text, toolkit);
  if (chosen.empty()) {
    log_warn("tool picking for " + sample.id + " returned no usable tool; using the full toolkit");
    return toolkit;
  }
  // keep toolkit order
  std::vector<Tool> ordered;
  for (auto t : toolkit) {
    if (std::find(chosen.begin(), chosen.end(), t) != chosen.end()) ordered.push_back(t);
  }
  return ordered;
}

/// Runs every chosen tool for one video and OR-ensembles the verdicts.
/// Tools whose adapter is unavailable are skipped and flagged as degraded.
inline EnsembleVerdict detect(DetectionContext& ctx, const VideoSample& sample, const std::vector<Tool>& toolkit,
                              const std::map<Tool, PromptTemplate>& templates, DetectionMode mode,
                              bool video_specific) {
  const auto tools = video_specific ? pick_tools_for_video(ctx, sample, toolkit) : toolkit;
  std::vector<Detection> detections;
  bool degraded = false;
  for (auto t : tools) {
    const PromptTemplate* tpl = nullptr;
    std::optional<PromptTemplate> fallback;
    if (mode == DetectionMode::Structured) {
      if (auto it = templates.find(t); it != templates.end()) {
        tpl = &it->second;
      } else {
        fallback.emplace(initial_template(t));
        tpl = &*fallback;
      }
    }
    try {
      detections.push_back(detect_with_tool(ctx, sample, t, tpl, mode));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AdapterUnavailable) throw;
      log_warn(sample.id + ": skipping " + std::string(tool_name(t)) + ": " + e.message());
      degraded = true;
    }
  }
  auto verdict = ensemble(sample.id, std::move(detections));
  verdict.tools_used = tools;
  if (degraded) {
    verdict.tools_used.clear();
    for (const auto& d : verdict.per_tool) verdict.tools_used.push_back(d.tool);
  }
  verdict.degraded = degraded;
  return verdict;
}

// ---------------------------------------------------------------------------
// Serialisation

inline nlohmann::json to_json(const Detection& d) {
  nlohmann::json j{{"sample_id", d.sample_id},
                   {"tool", tool_name(d.tool)},
                   {"is_ai_generated", d.is_ai_generated},
                   {"has_verdict", d.has_verdict},
                   {"confidence", d.confidence},
                   {"refused", d.refused},
                   {"field_analyses", d.field_analyses},
                   {"raw_text", d.raw_text}};
  return j;
}

inline Detection detection_from_json(const nlohmann::json& j) {
  Detection d;
  d.sample_id = j.at("sample_id").get<std::string>();
  d.tool = parse_tool(j.at("tool").get<std::string>());
  d.is_ai_generated = j.at("is_ai_generated").get<bool>();
  d.has_verdict = j.at("has_verdict").get<bool>();
  d.confidence = j.at("confidence").get<double>();
  d.refused = j.at("refused").get<bool>();
  d.field_analyses = j.at("field_analyses").get<std::map<std::string, std::string>>();
  d.raw_text = j.at("raw_text").get<std::string>();
  return d;
}

inline nlohmann::json to_json(const EnsembleVerdict& v) {
  auto per_tool = nlohmann::json::array();
  for (const auto& d : v.per_tool) per_tool.push_back(to_json(d));
  auto used = nlohmann::json::array();
  for (auto t : v.tools_used) used.push_back(tool_name(t));
  return {{"sample_id", v.sample_id}, {"run", v.run},           {"final", to_string(v.final)},
          {"confidence", v.confidence}, {"tools_used", used},   {"all_refused", v.all_refused},
          {"degraded", v.degraded},    {"per_tool", per_tool}};
}

inline EnsembleVerdict verdict_from_json(const nlohmann::json& j) {
  EnsembleVerdict v;
  v.sample_id = j.at("sample_id").get<std::string>();
  v.run = j.value("run", 0);
  v.final = parse_ground_truth(j.at("final").get<std::string>());
  v.confidence = j.at("confidence").get<double>();
  for (const auto& t : j.at("tools_used")) v.tools_used.push_back(parse_tool(t.get<std::string>()));
  v.all_refused = j.value("all_refused", false);
  v.degraded = j.value("degraded", false);
  for (const auto& d : j.at("per_tool")) v.per_tool.push_back(detection_from_json(d));
  return v;
}

}  // namespace lavid
