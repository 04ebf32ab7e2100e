#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/dataset.hpp"
#include "lavid/inference.hpp"
#include "lavid/log.hpp"
#include "lavid/lvlm.hpp"
#include "lavid/parallel.hpp"
#include "lavid/prompting.hpp"
#include "lavid/schema.hpp"
#include "lavid/selection.hpp"

namespace lavid {

struct RewriteConstraints {
  std::size_t max_fields = 5;
  std::string required_bool_field = std::string(kVerdictField);
  std::size_t max_changed_fields = 2;
  std::size_t min_changed_fields = 1;
  std::vector<std::string> prohibited_names = {"frame_rate", "resolution", "format", "duration"};
};

enum class Violation {
  MissingVerdict,
  NonStrField,
  TooManyFields,
  ProhibitedName,
  TooFewChanges,
  TooManyChanges,
  RepeatsPrevious,
  MalformedName,
};

constexpr std::string_view to_string(Violation v) {
  switch (v) {
    case Violation::MissingVerdict: return "missing_verdict";
    case Violation::NonStrField: return "non_str_field";
    case Violation::TooManyFields: return "too_many_fields";
    case Violation::ProhibitedName: return "prohibited_name";
    case Violation::TooFewChanges: return "too_few_changes";
    case Violation::TooManyChanges: return "too_many_changes";
    case Violation::RepeatsPrevious: return "repeats_previous";
    case Violation::MalformedName: return "malformed_name";
  }
  return "unknown";
}

struct ValidationResult {
  std::vector<Violation> violations;
  std::vector<std::string> details;

  bool valid() const { return violations.empty(); }
  bool has(Violation v) const { return std::find(violations.begin(), violations.end(), v) != violations.end(); }
  void add(Violation v, std::string detail) {
    if (!has(v)) violations.push_back(v);
    details.push_back(std::move(detail));
  }
};

/// ceil(|A symmetric-difference B| / 2) over field names: a rename counts once.
inline std::size_t changed_fields(const StructuredSchema& a, const StructuredSchema& b) {
  const auto na = a.names();
  const auto nb = b.names();
  const std::set<std::string> sa(na.begin(), na.end());
  const std::set<std::string> sb(nb.begin(), nb.end());
  std::size_t diff = 0;
  for (const auto& n : sa) diff += !sb.contains(n);
  for (const auto& n : sb) diff += !sa.contains(n);
  return (diff + 1) / 2;
}

/// Checks a proposed schema against the rewrite rules. `previous` is the
/// history with the schema it is derived from last. When that schema is the
/// seed template, the upper bound on changed fields is not applied.
inline ValidationResult validate_template(const StructuredSchema& schema, const std::vector<StructuredSchema>& previous,
                                          const RewriteConstraints& c = {}, bool base_is_seed = false) {
  ValidationResult r;
  bool verdict = false;
  std::set<std::string> seen;
  for (const auto& f : schema.fields) {
    if (!is_identifier(f.name) || !seen.insert(f.name).second) {
      r.add(Violation::MalformedName, "field name '" + f.name + "' is not a unique identifier");
    }
    if (f.name == c.required_bool_field) {
      if (f.kind == FieldKind::Bool) {
        verdict = true;
      } else {
        r.add(Violation::MissingVerdict, c.required_bool_field + " must be bool");
      }
    } else if (f.kind != FieldKind::Str) {
      r.add(Violation::NonStrField, "field '" + f.name + "' must be str");
    }
    const auto lower = to_lower_ascii(f.name);
    for (const auto& stem : c.prohibited_names) {
      if (!stem.empty() && lower.find(to_lower_ascii(stem)) != std::string::npos) {
        r.add(Violation::ProhibitedName, "field '" + f.name + "' contains prohibited '" + stem + "'");
      }
    }
  }
  if (!verdict && !r.has(Violation::MissingVerdict)) {
    r.add(Violation::MissingVerdict, "missing field '" + c.required_bool_field + ": bool'");
  }
  if (schema.fields.size() > c.max_fields) {
    r.add(Violation::TooManyFields,
          std::to_string(schema.fields.size()) + " fields exceed the maximum of " + std::to_string(c.max_fields));
  }
  if (!previous.empty()) {
    const auto changed = changed_fields(schema, previous.back());
    if (changed < c.min_changed_fields) {
      r.add(Violation::TooFewChanges, std::to_string(changed) + " changed fields, at least " +
                                          std::to_string(c.min_changed_fields) + " required");
    }
    if (!base_is_seed && changed > c.max_changed_fields) {
      r.add(Violation::TooManyChanges, std::to_string(changed) + " changed fields, at most " +
                                           std::to_string(c.max_changed_fields) + " allowed");
    }
    for (const auto& p : previous) {
      if (changed_fields(schema, p) == 0) {
        r.add(Violation::RepeatsPrevious, "same field names as an earlier template");
        break;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

struct HistoryEntry {
  StructuredSchema schema;
  double f1 = 0;
  int slot = 0;
  int attempt = 0;  // 0 = incumbent evaluation at the start of the slot
  bool accepted = false;
  std::string timestamp;
};

struct AdaptationConfig {
  std::size_t batch_size_per_class = 25;
  double f1_threshold = 0.8;
  int rewrite_budget = 20;
  int attempts_per_slot = 5;
  bool cumulative = true;
  F1Mode f1_mode = F1Mode::RealPositive;
  int jobs = 1;
  RewriteConstraints constraints;
  /// Timestamp source for ledger lines; when empty a logical counter is used.
  std::function<std::string()> clock;
};

struct AdaptationState {
  Tool tool = Tool::Rgb;
  PromptTemplate current_template = initial_template(Tool::Rgb);
  double current_f1 = 0;
  std::vector<HistoryEntry> history;
  int slot_index = 0;  // completed slots
  int slot_count = 0;
  int total_rewrites = 0;
  std::size_t batch_size_per_class = 25;
  double f1_threshold = 0.8;
  int rewrite_budget = 20;
  int attempts_per_slot = 5;
};

inline std::string render_history(const std::vector<HistoryEntry>& history) {
  std::ostringstream os;
  for (const auto& h : history) {
    os << "\n- fields: [";
    for (std::size_t i = 0; i < h.schema.fields.size(); ++i) {
      const auto& f = h.schema.fields[i];
      os << (i ? ", " : "") << f.name << ": " << (f.kind == FieldKind::Bool ? "bool" : "str");
    }
    char f1[32];
    std::snprintf(f1, sizeof f1, "%.2f%%", h.f1 * 100.0);
    os << "], F1: " << f1;
  }
  return os.str();
}

inline std::string render_rewrite_prompt(Tool tool, const std::vector<HistoryEntry>& history) {
  const std::string t(tool_name(tool));
  return "As a Python developer, your task is to create a new Pydantic class for analyzing video data using the tool " +
         t +
         ".\n\n"
         "Requirements:\n"
         "- The class must include the field 'is_ai_generated: bool'.\n"
         "- You may add any other fields you deem necessary to analyze video data with " +
         t +
         ".\n"
         "- All additional fields must be of type 'str'.\n"
         "- Fields should represent analysis perspectives specific to the capabilities of " +
         t +
         ".\n\n"
         "Analysis Guidelines:\n"
         "- Consider the aspects of videos that " +
         t +
         " excels at analyzing.\n"
         "- Reflect on patterns or anomalies that " +
         t +
         " might reveal.\n"
         "- Emphasize high-level analysis perspectives that leverage the strengths of " +
         t +
         ".\n\n"
         "Constraints:\n"
         "- You may modify only one or two fields from previous class definitions at a time.\n"
         "- Focus on high-level abstractions specific to the purpose of " +
         t +
         ".\n\n"
         "Prohibited Fields:\n"
         "- Technical parameters (e.g., frame_rate, resolution, format, duration).\n"
         "- Algorithm or implementation specifics.\n\n"
         "Additional Notes:\n"
         "- The total number of fields must not exceed five (5).\n"
         "- There must be at least one field that differs from previous class definitions.\n\n"
         "Previous outputs: " +
         render_history(history);
}

/// Distinct schemas from the history with the incumbent last.
inline std::vector<StructuredSchema> validation_history(const AdaptationState& state) {
  std::vector<StructuredSchema> out;
  for (const auto& h : state.history) {
    if (h.schema == state.current_template.schema()) continue;
    if (std::find(out.begin(), out.end(), h.schema) == out.end()) out.push_back(h.schema);
  }
  out.push_back(state.current_template.schema());
  return out;
}

inline constexpr int kRewriteParseRetries = 3;

/// Asks the model for a rewritten schema. Proposals that do not parse or break
/// a rule are re-requested with the violations attached.
inline StructuredSchema propose_rewrite(Client& client, Tool tool, const AdaptationState& state,
                                        const RewriteConstraints& constraints = {}, const std::string& model_id = {}) {
  if (state.total_rewrites >= state.rewrite_budget) {
    throw Error(ErrorCode::BudgetExhausted, "rewrite budget of " + std::to_string(state.rewrite_budget) + " used up");
  }
  const auto previous = validation_history(state);
  const bool base_is_seed = state.current_template.provenance() == TemplateProvenance::Initial;
  const auto current = state.current_template.schema().names();
  std::string joined;
  for (const auto& n : current) joined += (joined.empty() ? "" : ",") + n;

  LvlmRequest req;
  req.user_text = render_rewrite_prompt(tool, state.history);
  req.model_id = model_id;
  req.annotations = {{"purpose", "rewrite"}, {"tool", std::string(tool_name(tool))}, {"current_fields", joined}};

  std::string last_problem;
  for (int attempt = 0; attempt < kRewriteParseRetries; ++attempt) {
    auto r = req;
    if (!last_problem.empty()) r.user_text += "\n\nYour previous proposal was rejected: " + last_problem;
    const auto resp = client.complete(r);
    const auto schema = parse_schema_class(resp.raw_text);
    if (schema.fields.empty()) {
      last_problem = "no 'name: type' field lines found.";
      continue;
    }
    const auto v = validate_template(schema, previous, constraints, base_is_seed);
    if (v.valid()) return schema;
    last_problem.clear();
    for (const auto& d : v.details) last_problem += d + "; ";
  }
  throw Error(ErrorCode::RewriteParseFailed,
              "no acceptable rewrite after " + std::to_string(kRewriteParseRetries) + " tries: " + last_problem);
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const PromptTemplate& t) {
  return {{"schema", to_json(t.schema())},
          {"version", t.version()},
          {"provenance", t.provenance() == TemplateProvenance::Initial ? "initial" : "rewritten"}};
}

inline PromptTemplate template_from_json(const nlohmann::json& j) {
  return PromptTemplate(schema_from_json(j.at("schema")), j.at("version").get<int>(),
                        j.at("provenance").get<std::string>() == "initial" ? TemplateProvenance::Initial
                                                                           : TemplateProvenance::Rewritten);
}

inline nlohmann::json ledger_line(const HistoryEntry& h) {
  return {{"slot", h.slot},
          {"attempt", h.attempt},
          {"fields", to_json(h.schema)},
          {"f1", h.f1},
          {"accepted", h.accepted},
          {"timestamp", h.timestamp}};
}

inline HistoryEntry history_entry_from_json(const nlohmann::json& j) {
  HistoryEntry h;
  h.slot = j.at("slot").get<int>();
  h.attempt = j.at("attempt").get<int>();
  h.schema = schema_from_json(j.at("fields"));
  h.f1 = j.at("f1").get<double>();
  h.accepted = j.at("accepted").get<bool>();
  h.timestamp = j.at("timestamp").get<std::string>();
  return h;
}

inline nlohmann::json to_json(const AdaptationState& s) {
  auto history = nlohmann::json::array();
  for (const auto& h : s.history) history.push_back(ledger_line(h));
  return {{"tool", tool_name(s.tool)},
          {"current_template", to_json(s.current_template)},
          {"current_f1", s.current_f1},
          {"history", history},
          {"slot_index", s.slot_index},
          {"slot_count", s.slot_count},
          {"total_rewrites", s.total_rewrites},
          {"batch_size_per_class", s.batch_size_per_class},
          {"f1_threshold", s.f1_threshold},
          {"rewrite_budget", s.rewrite_budget},
          {"attempts_per_slot", s.attempts_per_slot}};
}

inline AdaptationState adaptation_state_from_json(const nlohmann::json& j) {
  AdaptationState s;
  s.tool = parse_tool(j.at("tool").get<std::string>());
  s.current_template = template_from_json(j.at("current_template"));
  s.current_f1 = j.at("current_f1").get<double>();
  for (const auto& h : j.at("history")) s.history.push_back(history_entry_from_json(h));
  s.slot_index = j.at("slot_index").get<int>();
  s.slot_count = j.at("slot_count").get<int>();
  s.total_rewrites = j.at("total_rewrites").get<int>();
  s.batch_size_per_class = j.at("batch_size_per_class").get<std::size_t>();
  s.f1_threshold = j.at("f1_threshold").get<double>();
  s.rewrite_budget = j.at("rewrite_budget").get<int>();
  s.attempts_per_slot = j.at("attempts_per_slot").get<int>();
  return s;
}

inline void write_ledger(const std::filesystem::path& path, const std::vector<HistoryEntry>& history) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp);
    for (const auto& h : history) out << ledger_line(h).dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

struct AdaptationPaths {
  std::filesystem::path ledger;      // adaptation_<tool>.jsonl
  std::filesystem::path checkpoint;  // state after the last completed slot
  bool resume = false;
};

struct AdaptationResult {
  PromptTemplate best_template;
  AdaptationState state;
};

/// Slot-based template adaptation for one tool. Samples are consumed in
/// order, batch_size_per_class of each class per slot, and never reused.
inline AdaptationResult run_adaptation(DetectionContext& ctx, Tool tool, const std::vector<VideoSample>& adaptation_set,
                                       const AdaptationConfig& cfg = {}, const AdaptationPaths& paths = {}) {
  std::vector<const VideoSample*> real, ai;
  for (const auto& s : adaptation_set) (s.label == GroundTruth::Real ? real : ai).push_back(&s);
  if (cfg.batch_size_per_class == 0) throw Error(ErrorCode::InvalidRequest, "batch_size_per_class must be positive");
  const auto per_class = std::min(real.size(), ai.size());
  if (per_class < cfg.batch_size_per_class) {
    throw Error(ErrorCode::InsufficientData, "adaptation needs " + std::to_string(cfg.batch_size_per_class) +
                                                 " samples per class, have " + std::to_string(real.size()) +
                                                 " real and " + std::to_string(ai.size()) + " ai");
  }
  int slots = static_cast<int>(per_class / cfg.batch_size_per_class);
  if (cfg.attempts_per_slot > 0) slots = std::min(slots, cfg.rewrite_budget / cfg.attempts_per_slot);

  AdaptationState state;
  state.tool = tool;
  state.current_template = initial_template(tool);
  state.slot_count = slots;
  state.batch_size_per_class = cfg.batch_size_per_class;
  state.f1_threshold = cfg.f1_threshold;
  state.rewrite_budget = cfg.rewrite_budget;
  state.attempts_per_slot = cfg.attempts_per_slot;
  if (paths.resume && !paths.checkpoint.empty() && std::filesystem::exists(paths.checkpoint)) {
    std::ifstream in(paths.checkpoint);
    state = adaptation_state_from_json(nlohmann::json::parse(in));
    if (state.tool != tool) throw Error(ErrorCode::InvalidRequest, "checkpoint belongs to another tool");
    state.slot_count = slots;
    log_info("resuming " + std::string(tool_name(tool)) + " adaptation at slot " + std::to_string(state.slot_index + 1));
  }

  std::size_t logical_time = state.history.size();
  auto stamp = [&] { return cfg.clock ? cfg.clock() : std::to_string(++logical_time); };

  std::mutex cache_mu;
  std::map<std::pair<std::string, std::string>, Detection> cache;
  auto key_of = [](const StructuredSchema& s) {
    std::string k;
    for (const auto& f : s.fields) k += f.name + (f.kind == FieldKind::Bool ? ":b," : ":s,");
    return k;
  };
  auto score = [&](const PromptTemplate& tpl, const std::vector<const VideoSample*>& samples) {
    const auto key = key_of(tpl.schema());
    std::vector<Detection> det(samples.size());
    parallel_for(samples.size(), cfg.jobs, [&](std::size_t i) {
      {
        std::lock_guard lock(cache_mu);
        if (auto it = cache.find({key, samples[i]->id}); it != cache.end()) {
          det[i] = it->second;
          return;
        }
      }
      auto d = detect_with_tool(ctx, *samples[i], tool, &tpl, DetectionMode::Structured);
      std::lock_guard lock(cache_mu);
      det[i] = cache.emplace(std::pair{key, samples[i]->id}, std::move(d)).first->second;
    });
    std::vector<PredictionRecord> records;
    for (std::size_t i = 0; i < samples.size(); ++i) records.push_back(to_record(det[i], samples[i]->label));
    return f1_score(records, cfg.f1_mode);
  };
  auto save = [&] {
    if (!paths.ledger.empty()) write_ledger(paths.ledger, state.history);
  };

  const auto name = std::string(tool_name(tool));
  for (int slot = state.slot_index; slot < slots; ++slot) {
    const auto b = cfg.batch_size_per_class;
    std::vector<const VideoSample*> pool;
    const std::size_t from = cfg.cumulative ? 0 : static_cast<std::size_t>(slot) * b;
    const std::size_t to = static_cast<std::size_t>(slot + 1) * b;
    for (std::size_t i = from; i < to; ++i) pool.push_back(real[i]);
    for (std::size_t i = from; i < to; ++i) pool.push_back(ai[i]);

    log_info("slot " + std::to_string(slot + 1) + "/" + std::to_string(slots) + " for " + name);
    state.current_f1 = score(state.current_template, pool);
    state.history.push_back({state.current_template.schema(), state.current_f1, slot + 1, 0, true, stamp()});
    save();

    if (state.current_f1 >= cfg.f1_threshold) {
      log_info("incumbent template performs well on slot " + std::to_string(slot + 1));
    } else {
      for (int attempt = 1; attempt <= cfg.attempts_per_slot && state.total_rewrites < cfg.rewrite_budget; ++attempt) {
        StructuredSchema proposal;
        try {
          proposal = propose_rewrite(ctx.client, tool, state, cfg.constraints, ctx.model_id);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::RewriteParseFailed) throw;
          ++state.total_rewrites;
          log_warn("slot " + std::to_string(slot + 1) + " attempt " + std::to_string(attempt) + ": " + e.message());
          continue;
        }
        ++state.total_rewrites;
        PromptTemplate candidate(proposal, state.current_template.version() + 1, TemplateProvenance::Rewritten);
        const double f1 = score(candidate, pool);
        const bool improved = f1 > state.current_f1;
        state.history.push_back({proposal, f1, slot + 1, attempt, improved, stamp()});
        save();
        if (improved) {
          state.current_template = std::move(candidate);
          state.current_f1 = f1;
          break;
        }
      }
    }
    state.slot_index = slot + 1;
    if (!paths.checkpoint.empty()) detail::write_json_atomically(paths.checkpoint, to_json(state));
  }
  save();
  return {state.current_template, state};
}

}  // namespace lavid
