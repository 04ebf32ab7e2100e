#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/dataset.hpp"
#include "lavid/ektools.hpp"
#include "lavid/hash.hpp"
#include "lavid/lvlm.hpp"
#include "lavid/prompting.hpp"

namespace lavid {

/// One row of mock behaviour. Unset patterns match anything; the first
/// matching rule in MockBehavior::rules wins, falling back to `fallback`.
struct MockRule {
  std::optional<std::string> tool;         // tool name
  std::optional<GroundTruth> truth;        // sample label
  std::optional<std::string> field;        // template must contain this field
  double p_correct = 1.0;
  double confidence_min = 1.0;
  double confidence_max = 1.0;
  double refusal_unstructured = 0.0;
  double refusal_structured = 0.0;
};

struct MockBehavior {
  std::uint64_t seed = 0;
  std::vector<MockRule> rules;
  MockRule fallback;
  std::map<std::string, GroundTruth> truths;  // sample id -> label

  bool native_schema = true;
  /// In non-native mode the mock checks that the schema text reached the
  /// user message and answers with fenced JSON, like a chat model would.

  std::map<std::string, double> smp_scores;     // tool name ("rgb" included) -> score
  std::map<std::string, std::string> smp_text;  // tool name -> verbatim reply (overrides score)
  double default_smp_score = 5.0;

  std::string preparation_response;  // empty -> a reply naming every registry tool

  /// tool name (or "*") -> replies cycled per rewrite call for that tool.
  std::map<std::string, std::vector<std::string>> rewrite_script;
  /// Field names the generator draws from when no script applies.
  std::vector<std::string> rewrite_field_pool;

  /// sample id (or "*") -> verbatim reply to the per-video tool picking prompt.
  std::map<std::string, std::string> pick_response;
};

inline MockRule mock_rule_from_json(const nlohmann::json& j) {
  MockRule r;
  if (j.contains("tool")) r.tool = j.at("tool").get<std::string>();
  if (j.contains("truth")) r.truth = parse_ground_truth(j.at("truth").get<std::string>());
  if (j.contains("field")) r.field = j.at("field").get<std::string>();
  r.p_correct = j.value("p_correct", 1.0);
  r.confidence_min = j.value("confidence_min", 1.0);
  r.confidence_max = j.value("confidence_max", r.confidence_min);
  r.refusal_unstructured = j.value("refusal_unstructured", 0.0);
  r.refusal_structured = j.value("refusal_structured", 0.0);
  return r;
}

/// Behaviour file format (all keys optional):
///   {"seed": 1, "native_schema": true, "fallback": {rule}, "rules": [{rule}...],
///    "smp_scores": {"edge": 8}, "smp_text": {...}, "default_smp_score": 5,
///    "preparation_response": "...", "rewrite_script": {"edge": ["class ..."]},
///    "rewrite_field_pool": [...], "pick_response": {"*": "edge"}}
/// where a rule is {"tool", "truth", "field", "p_correct", "confidence_min",
/// "confidence_max", "refusal_unstructured", "refusal_structured"}.
inline MockBehavior mock_behavior_from_json(const nlohmann::json& j) {
  MockBehavior b;
  try {
    b.seed = j.value("seed", std::uint64_t{0});
    b.native_schema = j.value("native_schema", true);
    if (j.contains("fallback")) b.fallback = mock_rule_from_json(j.at("fallback"));
    for (const auto& r : j.value("rules", nlohmann::json::array())) b.rules.push_back(mock_rule_from_json(r));
    b.smp_scores = j.value("smp_scores", std::map<std::string, double>{});
    b.smp_text = j.value("smp_text", std::map<std::string, std::string>{});
    b.default_smp_score = j.value("default_smp_score", 5.0);
    b.preparation_response = j.value("preparation_response", std::string());
    b.rewrite_script = j.value("rewrite_script", std::map<std::string, std::vector<std::string>>{});
    b.rewrite_field_pool = j.value("rewrite_field_pool", std::vector<std::string>{});
    b.pick_response = j.value("pick_response", std::map<std::string, std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidBehavior, e.what());
  }
  return b;
}

/// Deterministic test double. Every draw is a hash of (seed, request key,
/// occurrence count of that key), so responses do not depend on call order
/// across different keys and the mock is safe to call concurrently.
class MockLvlm final : public Provider {
 public:
  explicit MockLvlm(MockBehavior behavior) : b_(std::move(behavior)) {}

  ProviderReply send(const LvlmRequest& request, bool native_schema) override {
    const auto purpose = request.annotation("purpose");
    if (purpose == "detect") return detect(request, native_schema);
    if (purpose == "smp") return smp(request);
    if (purpose == "prepare") return {preparation_text(), false, usage(request)};
    if (purpose == "rewrite") return rewrite(request);
    if (purpose == "pick") return pick(request);
    return {"OK", false, usage(request)};
  }

  bool supports_native_schema() const override { return b_.native_schema; }
  std::string name() const override { return "mock"; }

  const MockBehavior& behavior() const noexcept { return b_; }

  /// The rule that governs a (tool, truth, template fields) combination.
  const MockRule& rule_for(const std::string& tool, GroundTruth truth, const std::vector<std::string>& fields) const {
    for (const auto& r : b_.rules) {
      if (r.tool && *r.tool != tool) continue;
      if (r.truth && *r.truth != truth) continue;
      if (r.field && std::find(fields.begin(), fields.end(), *r.field) == fields.end()) continue;
      return r;
    }
    return b_.fallback;
  }

  static std::string default_preparation_response() {
    std::string out =
        "Several external tools can extract complementary evidence from video frames:\n\n";
    int i = 1;
    for (const auto& info : kToolRegistry) {
      if (info.id == Tool::Rgb) continue;
      out += std::to_string(i++) + ". " + std::string(info.display) + "\n" + std::string(info.description) + "\n\n";
    }
    return out;
  }

 private:
  static TokenUsage usage(const LvlmRequest& r) {
    return {static_cast<std::int64_t>(r.system_text.size() + r.user_text.size()) / 4 +
                static_cast<std::int64_t>(r.images.size()) * 85,
            32};
  }

  std::uint64_t occurrence(const std::string& key) {
    std::lock_guard lock(mu_);
    return counters_[key]++;
  }

  double draw(const std::string& key, std::uint64_t n, std::string_view salt) const {
    return unit_interval(fnv1a(salt, fnv1a(key) ^ splitmix64(b_.seed)) + n * 0x9e3779b97f4a7c15ull);
  }

  std::string preparation_text() const {
    return b_.preparation_response.empty() ? default_preparation_response() : b_.preparation_response;
  }

  ProviderReply detect(const LvlmRequest& request, bool native_schema) {
    const auto tool = request.annotation("tool");
    const auto sample = request.annotation("sample_id");
    const auto truth_it = b_.truths.find(sample);
    if (truth_it == b_.truths.end()) {
      throw Error(ErrorCode::InvalidRequest, "mock has no ground truth for sample '" + sample + "'");
    }
    const GroundTruth truth = truth_it->second;
    const bool structured = request.response_schema.has_value();
    const auto fields = structured ? request.response_schema->names() : std::vector<std::string>{};

    std::string key = "detect|" + tool + "|" + sample + "|" + (structured ? "s" : "n");
    for (const auto& f : fields) key += "|" + f;
    const auto n = occurrence(key);
    const auto& rule = rule_for(tool, truth, fields);

    if (draw(key, n, "refuse") < (structured ? rule.refusal_structured : rule.refusal_unstructured)) {
      static constexpr std::string_view kRefusals[] = {
          "I'm sorry, but I can't determine whether this video is AI-generated.",
          "I'm unable to help with identifying whether this content is synthetic.",
          "I cannot assist with that request.",
      };
      const auto idx = static_cast<std::size_t>(draw(key, n, "phrase") * 3) % 3;
      return {std::string(kRefusals[idx]), structured && native_schema, usage(request)};
    }

    const bool correct = draw(key, n, "correct") < rule.p_correct;
    const GroundTruth predicted = correct ? truth : opposite(truth);
    const bool says_ai = predicted == GroundTruth::Ai;
    const double conf = rule.confidence_min + (rule.confidence_max - rule.confidence_min) * draw(key, n, "confidence");

    if (!structured) {
      std::string text = says_ai ? "Yes. The " + tool + " evidence shows inconsistencies typical of generated video."
                                 : "No.";
      return {text, false, usage(request)};
    }
    if (!native_schema && request.user_text.find(render_schema_class(*request.response_schema)) == std::string::npos) {
      return {"The video looks mostly natural to me.", false, usage(request)};
    }
    nlohmann::json obj = nlohmann::json::object();
    for (const auto& f : request.response_schema->fields) {
      if (f.kind == FieldKind::Bool) {
        obj[f.name] = says_ai;
      } else if (f.name == kConfidenceField) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%.2f", std::round(conf * 100.0) / 100.0);
        obj[f.name] = buf;
      } else {
        obj[f.name] = f.name + ": " + (says_ai ? "irregularities observed" : "consistent with real footage");
      }
    }
    if (native_schema) return {obj.dump(), false, usage(request)};
    return {"Here is my analysis.\n```json\n" + obj.dump(2) + "\n```", false, usage(request)};
  }

  ProviderReply smp(const LvlmRequest& request) {
    const auto tool = request.annotation("tool");
    if (const auto it = b_.smp_text.find(tool); it != b_.smp_text.end()) return {it->second, false, usage(request)};
    double score = b_.default_smp_score;
    if (const auto it = b_.smp_scores.find(tool); it != b_.smp_scores.end()) score = it->second;
    char buf[64];
    std::snprintf(buf, sizeof buf, "Score: %g", score);
    return {buf, false, usage(request)};
  }

  ProviderReply rewrite(const LvlmRequest& request) {
    const auto tool = request.annotation("tool");
    const std::string key = "rewrite|" + tool;
    const auto n = occurrence(key);
    auto script = b_.rewrite_script.find(tool);
    if (script == b_.rewrite_script.end()) script = b_.rewrite_script.find("*");
    if (script != b_.rewrite_script.end() && !script->second.empty()) {
      return {script->second[n % script->second.size()], false, usage(request)};
    }

    // Generator: swap one analysis field of the current template for a pool
    // field it does not contain yet (or append while below the cap).
    auto current = split_list(request.annotation("current_fields"));
    std::vector<std::string> fresh;
    for (const auto& f : b_.rewrite_field_pool) {
      if (std::find(current.begin(), current.end(), f) == current.end()) fresh.push_back(f);
    }
    if (fresh.empty()) fresh.push_back("holistic_" + tool + "_review_" + std::to_string(n));
    const auto pick = fresh[static_cast<std::size_t>(draw(key, n, "field") * static_cast<double>(fresh.size()))];
    std::vector<std::size_t> replaceable;
    for (std::size_t i = 0; i < current.size(); ++i) {
      if (current[i] != kVerdictField) replaceable.push_back(i);
    }
    if (current.size() < kMaxSchemaFields || replaceable.empty()) {
      current.push_back(pick);
    } else {
      const auto slot = replaceable[static_cast<std::size_t>(draw(key, n, "slot") * static_cast<double>(replaceable.size()))];
      current[slot] = pick;
    }
    std::string text = "```python\nclass NewAnalysisResult(BaseModel):\n";
    text += "    is_ai_generated: bool\n";
    for (const auto& f : current) {
      if (f != kVerdictField) text += "    " + f + ": str\n";
    }
    text += "```";
    return {text, false, usage(request)};
  }

  ProviderReply pick(const LvlmRequest& request) {
    const auto sample = request.annotation("sample_id");
    auto it = b_.pick_response.find(sample);
    if (it == b_.pick_response.end()) it = b_.pick_response.find("*");
    if (it != b_.pick_response.end()) return {it->second, false, usage(request)};
    return {request.annotation("toolkit"), false, usage(request)};
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  MockBehavior b_;
  std::mutex mu_;
  std::map<std::string, std::uint64_t> counters_;
};

/// Validates a behaviour and builds the mock.
inline std::shared_ptr<MockLvlm> mock_configure(MockBehavior behavior) {
  auto check = [](const MockRule& r) {
    for (double p : {r.p_correct, r.confidence_min, r.confidence_max, r.refusal_unstructured, r.refusal_structured}) {
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidBehavior, "probability outside [0, 1]");
    }
    if (r.confidence_min > r.confidence_max) throw Error(ErrorCode::InvalidBehavior, "confidence_min > confidence_max");
  };
  check(behavior.fallback);
  for (const auto& r : behavior.rules) check(r);
  for (const auto& [tool, score] : behavior.smp_scores) {
    if (!(score >= 0.0 && score <= 10.0)) throw Error(ErrorCode::InvalidBehavior, "smp score outside [0, 10]");
  }
  return std::make_shared<MockLvlm>(std::move(behavior));
}

}  // namespace lavid
