#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/dataset.hpp"
#include "lavid/ektools.hpp"
#include "lavid/inference.hpp"
#include "lavid/log.hpp"
#include "lavid/lvlm.hpp"
#include "lavid/parallel.hpp"
#include "lavid/prompting.hpp"

namespace lavid {

struct PredictionRecord {
  std::string sample_id;
  GroundTruth truth = GroundTruth::Real;
  GroundTruth predicted = GroundTruth::Real;
  double confidence = 1.0;
};

struct PrecisionRecall {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// Safe ratio with the 0/0 -> 0 convention used throughout.
constexpr double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

/// Confidence-weighted precision/recall/F1 for one positive class: every
/// record adds its confidence (not 1) to the TP, FP or FN sum it falls in.
inline PrecisionRecall weighted_f1(std::span<const PredictionRecord> records,
                                   GroundTruth positive = GroundTruth::Real) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "weighted_f1 needs at least one record");
  double tp = 0, fp = 0, fn = 0;
  for (const auto& r : records) {
    if (r.predicted == positive && r.truth == positive) tp += r.confidence;
    if (r.predicted == positive && r.truth != positive) fp += r.confidence;
    if (r.predicted != positive && r.truth == positive) fn += r.confidence;
  }
  PrecisionRecall out;
  out.precision = ratio(tp, tp + fp);
  out.recall = ratio(tp, tp + fn);
  out.f1 = ratio(2 * out.precision * out.recall, out.precision + out.recall);
  return out;
}

enum class F1Mode { RealPositive, Macro };

inline F1Mode parse_f1_mode(std::string_view s) {
  if (s == "real_positive") return F1Mode::RealPositive;
  if (s == "macro") return F1Mode::Macro;
  throw Error(ErrorCode::ConfigError, "f1_mode must be real_positive or macro");
}

constexpr std::string_view to_string(F1Mode m) { return m == F1Mode::Macro ? "macro" : "real_positive"; }

inline double f1_score(std::span<const PredictionRecord> records, F1Mode mode) {
  if (mode == F1Mode::RealPositive) return weighted_f1(records, GroundTruth::Real).f1;
  return 0.5 * (weighted_f1(records, GroundTruth::Real).f1 + weighted_f1(records, GroundTruth::Ai).f1);
}

/// A detection as a scored record; refusals and parse misses count as wrong
/// with zero confidence.
inline PredictionRecord to_record(const Detection& d, GroundTruth truth) {
  if (d.refused || !d.has_verdict) return {d.sample_id, truth, opposite(truth), 0.0};
  return {d.sample_id, truth, d.is_ai_generated ? GroundTruth::Ai : GroundTruth::Real, d.confidence};
}

// ---------------------------------------------------------------------------

struct ToolScore {
  Tool tool = Tool::Rgb;
  double f1_weighted = 0;
  double s_mp_raw = 0;
  double s_mp = 0;
  double s_tool = 0;
  double alpha = 0.5;
};

/// S_Tool = alpha * F1_weighted + (1 - alpha) * S_MP, with S_MP = raw / 10.
/// Evaluated over a common denominator of 10 so decimal inputs such as
/// (0.6, 7) give 0.65 exactly.
inline double combine_score(double f1, double s_mp_raw, double alpha) {
  return (alpha * f1 * 10.0 + (1.0 - alpha) * s_mp_raw) / 10.0;
}

inline ToolScore score_tool(std::span<const PredictionRecord> records, double s_mp_raw, double alpha,
                            Tool tool = Tool::Rgb, F1Mode mode = F1Mode::RealPositive) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidRequest, "alpha must lie in [0, 1]");
  ToolScore s;
  s.tool = tool;
  s.alpha = alpha;
  s.f1_weighted = f1_score(records, mode);
  s.s_mp_raw = std::clamp(s_mp_raw, 0.0, 10.0);
  s.s_mp = s.s_mp_raw / 10.0;
  s.s_tool = combine_score(s.f1_weighted, s.s_mp_raw, alpha);
  return s;
}

/// Tools whose score reaches the baseline (ties included), in input order.
inline std::vector<Tool> threshold_tools(const std::vector<ToolScore>& scores, double baseline_score) {
  std::vector<Tool> out;
  for (const auto& s : scores) {
    if (s.s_tool >= baseline_score) out.push_back(s.tool);
  }
  return out;
}

struct SelectionReport {
  double alpha = 0.5;
  ToolScore baseline;
  std::vector<ToolScore> scores;
  std::vector<Tool> selected;
  std::vector<std::pair<Tool, std::string>> skipped;  // tools that could not be evaluated
  bool complete = true;
};

inline nlohmann::json to_json(const ToolScore& s) {
  return {{"tool", tool_name(s.tool)}, {"f1_weighted", s.f1_weighted}, {"s_mp_raw", s.s_mp_raw},
          {"s_mp", s.s_mp},           {"s_tool", s.s_tool},           {"alpha", s.alpha}};
}

inline ToolScore tool_score_from_json(const nlohmann::json& j) {
  ToolScore s;
  s.tool = parse_tool(j.at("tool").get<std::string>());
  s.f1_weighted = j.at("f1_weighted").get<double>();
  s.s_mp_raw = j.at("s_mp_raw").get<double>();
  s.s_mp = j.at("s_mp").get<double>();
  s.s_tool = j.at("s_tool").get<double>();
  s.alpha = j.at("alpha").get<double>();
  return s;
}

inline nlohmann::json to_json(const SelectionReport& r) {
  auto scores = nlohmann::json::array();
  for (const auto& s : r.scores) scores.push_back(to_json(s));
  auto selected = nlohmann::json::array();
  for (auto t : r.selected) selected.push_back(tool_name(t));
  auto skipped = nlohmann::json::array();
  for (const auto& [t, why] : r.skipped) skipped.push_back({{"tool", tool_name(t)}, {"reason", why}});
  return {{"alpha", r.alpha},       {"baseline", to_json(r.baseline)}, {"scores", scores},
          {"selected", selected}, {"skipped", skipped},              {"complete", r.complete}};
}

inline SelectionReport selection_report_from_json(const nlohmann::json& j) {
  SelectionReport r;
  r.alpha = j.at("alpha").get<double>();
  r.baseline = tool_score_from_json(j.at("baseline"));
  for (const auto& s : j.at("scores")) r.scores.push_back(tool_score_from_json(s));
  for (const auto& t : j.at("selected")) r.selected.push_back(parse_tool(t.get<std::string>()));
  for (const auto& s : j.value("skipped", nlohmann::json::array())) {
    r.skipped.emplace_back(parse_tool(s.at("tool").get<std::string>()), s.at("reason").get<std::string>());
  }
  r.complete = j.value("complete", true);
  return r;
}

// ---------------------------------------------------------------------------
// Toolkit proposal

/// Maps a header-ish phrase to registry tools by keyword stems.
inline std::vector<Tool> tools_in_phrase(std::string_view phrase) {
  const auto s = normalize_for_matching(phrase);
  struct Stem {
    std::string_view stem;
    Tool tool;
  };
  static constexpr Stem kStems[] = {
      {"optical flow", Tool::OpticalFlow}, {"optical_flow", Tool::OpticalFlow}, {"sharpen", Tool::Sharpen},
      {"depth", Tool::Depth},              {"saturation", Tool::Saturation},    {"denois", Tool::Denoise},
      {"noise", Tool::Denoise},            {"enhance", Tool::Enhance},          {"segment", Tool::Segmentation},
      {"landmark", Tool::Landmark},        {"keypoint", Tool::Landmark},        {"key point", Tool::Landmark},
      {"edge", Tool::Edge},
  };
  std::vector<Tool> out;
  for (const auto& st : kStems) {
    if (s.find(st.stem) != std::string::npos && std::find(out.begin(), out.end(), st.tool) == out.end()) {
      out.push_back(st.tool);
    }
  }
  return out;
}

/// Header lines of a list-style reply: "1. Name", "### Name", "**Name**",
/// "- **Name**:" and the like. Body prose is ignored.
inline std::vector<std::string> header_lines(std::string_view text) {
  static const std::regex header(R"(^\s*(?:#{1,6}\s*|\d+[.)]\s*|[-*]\s*\*\*|\*\*)(.+)$)");
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!std::regex_match(line, m, header)) continue;
    auto title = m[1].str();
    title.erase(0, title.find_first_not_of("* "));
    // keep the heading part only: up to a colon or the closing bold marker
    for (auto stop : {std::string("**"), std::string(":"), std::string(" - ")}) {
      if (auto pos = title.find(stop); pos != std::string::npos) title = title.substr(0, pos);
    }
    out.push_back(title);
  }
  return out;
}

inline std::vector<Tool> extract_toolkit(std::string_view response) {
  std::vector<Tool> found;
  for (const auto& h : header_lines(response)) {
    for (auto t : tools_in_phrase(h)) {
      if (std::find(found.begin(), found.end(), t) == found.end()) found.push_back(t);
    }
  }
  // registry order
  std::vector<Tool> out;
  for (auto t : candidate_tools()) {
    if (std::find(found.begin(), found.end(), t) != found.end()) out.push_back(t);
  }
  return out;
}

/// Asks the model which feature extractors could help and keeps the ones the
/// registry implements.
inline std::vector<Tool> propose_toolkit(Client& client, const std::string& model_id = {}) {
  LvlmRequest req;
  req.user_text = render_preparation_prompt();
  req.model_id = model_id;
  req.annotations = {{"purpose", "prepare"}};
  const auto resp = client.complete(req);
  auto tools = extract_toolkit(resp.raw_text);
  if (tools.empty()) log_warn("toolkit proposal named no known tool");
  return tools;
}

inline double score_smp(Client& client, Tool tool, std::string_view fewshot_results, const std::string& model_id = {}) {
  LvlmRequest req;
  req.user_text = render_smp_prompt(tool, fewshot_results);
  req.model_id = model_id;
  req.annotations = {{"purpose", "smp"}, {"tool", std::string(tool_name(tool))}};
  const auto resp = client.complete(req);
  if (resp.refused) return 0.0;
  return parse_smp_score(resp.raw_text).value_or(0.0);
}

/// Outcome counts passed to the self-assessment prompt as analysis history.
inline std::string fewshot_summary(Tool tool, std::span<const PredictionRecord> records,
                                   std::span<const Detection> detections) {
  int correct = 0, wrong = 0, refused = 0, real_ok = 0, real_n = 0, ai_ok = 0, ai_n = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const bool usable = !detections[i].refused && detections[i].has_verdict;
    if (!usable) {
      ++refused;
    } else if (r.predicted == r.truth) {
      ++correct;
    } else {
      ++wrong;
    }
    const bool ok = usable && r.predicted == r.truth;
    if (r.truth == GroundTruth::Real) {
      ++real_n;
      real_ok += ok;
    } else {
      ++ai_n;
      ai_ok += ok;
    }
  }
  std::ostringstream os;
  os << "With " << (tool == Tool::Rgb ? "RGB" : std::string(tool_name(tool))) << " on " << records.size()
     << " reference videos: " << correct << " correct, " << wrong << " incorrect, " << refused
     << " without a verdict (real videos " << real_ok << "/" << real_n << " correct, AI-generated videos "
     << ai_ok << "/" << ai_n << " correct).";
  return os.str();
}

struct SelectionOptions {
  double alpha = 0.5;
  F1Mode f1_mode = F1Mode::RealPositive;
  int jobs = 1;
  /// Progress file rewritten after every scored tool; read back to resume.
  std::filesystem::path checkpoint_path;
};

namespace detail {
inline void write_json_atomically(const std::filesystem::path& path, const nlohmann::json& j) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp);
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}
}  // namespace detail

/// Scores rgb and every candidate on the reference set and keeps the
/// candidates whose S_Tool reaches the rgb baseline.
inline SelectionReport select_toolkit(DetectionContext& ctx, const std::vector<Tool>& candidates,
                                      const std::vector<VideoSample>& reference, const SelectionOptions& opts = {}) {
  if (candidates.empty()) throw Error(ErrorCode::InvalidRequest, "no candidate tools");
  const bool has_real = std::any_of(reference.begin(), reference.end(), [](const auto& s) { return s.label == GroundTruth::Real; });
  const bool has_ai = std::any_of(reference.begin(), reference.end(), [](const auto& s) { return s.label == GroundTruth::Ai; });
  if (!has_real || !has_ai) throw Error(ErrorCode::InsufficientData, "reference set must contain both classes");

  // records ordered by sample id so the reduction is independent of scheduling
  std::vector<const VideoSample*> samples;
  for (const auto& s : reference) samples.push_back(&s);
  std::sort(samples.begin(), samples.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  SelectionReport report;
  report.alpha = opts.alpha;
  report.complete = false;
  bool have_baseline = false;
  if (!opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path)) {
    std::ifstream in(opts.checkpoint_path);
    const auto j = nlohmann::json::parse(in);
    if (j.at("alpha").get<double>() == opts.alpha && j.contains("baseline")) {
      report = selection_report_from_json(j);
      report.selected.clear();
      report.complete = false;
      have_baseline = true;
      log_info("resuming tool selection from " + opts.checkpoint_path.string());
    }
  }
  auto done = [&](Tool t) {
    return std::any_of(report.scores.begin(), report.scores.end(), [t](const auto& s) { return s.tool == t; }) ||
           std::any_of(report.skipped.begin(), report.skipped.end(), [t](const auto& s) { return s.first == t; });
  };
  auto checkpoint = [&] {
    if (!opts.checkpoint_path.empty()) detail::write_json_atomically(opts.checkpoint_path, to_json(report));
  };

  auto evaluate = [&](Tool tool) {
    const auto tpl = PromptTemplate(selection_schema(tool), 0, TemplateProvenance::Initial);
    std::vector<Detection> detections(samples.size());
    parallel_for(samples.size(), opts.jobs, [&](std::size_t i) {
      detections[i] = detect_with_tool(ctx, *samples[i], tool, &tpl, DetectionMode::Structured);
    });
    std::vector<PredictionRecord> records;
    for (std::size_t i = 0; i < samples.size(); ++i) records.push_back(to_record(detections[i], samples[i]->label));
    const double smp = score_smp(ctx.client, tool, fewshot_summary(tool, records, detections), ctx.model_id);
    return score_tool(records, smp, opts.alpha, tool, opts.f1_mode);
  };

  if (!have_baseline) {
    report.baseline = evaluate(Tool::Rgb);
    checkpoint();
  }
  for (auto tool : candidates) {
    if (tool == Tool::Rgb || done(tool)) continue;
    try {
      report.scores.push_back(evaluate(tool));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AdapterUnavailable) throw;
      log_warn("skipping " + std::string(tool_name(tool)) + ": " + e.message());
      report.skipped.emplace_back(tool, e.message());
    }
    checkpoint();
  }
  report.selected = threshold_tools(report.scores, report.baseline.s_tool);
  report.complete = true;
  return report;
}

}  // namespace lavid
