#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "lavid/adaptation.hpp"
#include "lavid/dataset.hpp"
#include "lavid/ektools.hpp"
#include "lavid/error.hpp"
#include "lavid/prompting.hpp"
#include "lavid/selection.hpp"

namespace lavid {

struct ProviderConfig {
  std::string name = "openai";
  std::string endpoint = "https://api.openai.com/v1";
  std::string model_id = "gpt-4o";
  std::int64_t max_images = 16;
  double requests_per_minute = 0;
  double timeout_s = 120;
  std::int64_t max_retries = 3;
  std::int64_t backoff_ms = 500;
  bool native_schema = true;
  std::string mock_behavior_path;
  std::string api_key;  // environment only, never serialized

  bool operator==(const ProviderConfig&) const = default;
};

struct PipelineConfig {
  double alpha = 0.5;
  double reference_fraction = 0.25;
  std::int64_t window = 8;
  std::int64_t max_frames = 100;
  std::int64_t batch_size_per_class = 25;
  double f1_threshold = 0.8;
  std::int64_t rewrite_budget = 20;
  std::int64_t attempts_per_slot = 5;
  std::int64_t seed = 42;
  DetectionMode mode = DetectionMode::Structured;
  bool video_specific = false;
  std::int64_t repeats = 1;
  std::int64_t jobs = 1;
  BaselinePrompt baseline_prompt = BaselinePrompt::P1;
  F1Mode f1_mode = F1Mode::RealPositive;
  bool cumulative_f1 = true;
  std::vector<std::string> candidates;  // empty = ask the model for a toolkit
  std::vector<std::string> prohibited_names;  // added to the built-in stems
  std::string extract_command = std::string(kDefaultExtractCommand);
  std::string refusal_patterns_path;
  ProviderConfig provider;
  std::map<std::string, AdapterConfig> adapters;

  std::vector<Tool> candidate_list() const {
    if (candidates.empty()) return candidate_tools();
    std::vector<Tool> out;
    for (const auto& c : candidates) {
      const auto t = parse_tool(c);
      if (t == Tool::Rgb) throw Error(ErrorCode::ConfigError, "rgb is the baseline, not a candidate");
      out.push_back(t);
    }
    return out;
  }

  AdaptationConfig adaptation_config() const {
    AdaptationConfig a;
    a.batch_size_per_class = static_cast<std::size_t>(batch_size_per_class);
    a.f1_threshold = f1_threshold;
    a.rewrite_budget = static_cast<int>(rewrite_budget);
    a.attempts_per_slot = static_cast<int>(attempts_per_slot);
    a.cumulative = cumulative_f1;
    a.f1_mode = f1_mode;
    a.jobs = static_cast<int>(jobs);
    for (const auto& p : prohibited_names) a.constraints.prohibited_names.push_back(p);
    return a;
  }
};

// ---------------------------------------------------------------------------
// A TOML subset: [table] and [table.sub] headers, `key = value` lines with
// strings, integers, floats, booleans and flat arrays, and # comments.

using TomlScalar = std::variant<std::string, std::int64_t, double, bool>;
using TomlValue = std::variant<std::string, std::int64_t, double, bool, std::vector<TomlScalar>>;

struct TomlEntry {
  std::string table;
  std::string key;
  TomlValue value;
  int line = 0;
};

namespace toml_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] inline void fail(int line, const std::string& what) {
  throw Error(ErrorCode::ConfigError, "line " + std::to_string(line) + ": " + what);
}

struct Cursor {
  std::string_view s;
  std::size_t i = 0;
  int line = 0;

  void skip_ws() {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  }
  bool done() const { return i >= s.size(); }

  std::string string_literal() {
    const char q = s[i++];
    std::string out;
    while (i < s.size() && s[i] != q) {
      if (q == '"' && s[i] == '\\' && i + 1 < s.size()) {
        const char c = s[++i];
        switch (c) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(line, std::string("unsupported escape \\") + c);
        }
        ++i;
      } else {
        out += s[i++];
      }
    }
    if (i >= s.size()) fail(line, "unterminated string");
    ++i;
    return out;
  }

  TomlScalar scalar() {
    skip_ws();
    if (done()) fail(line, "missing value");
    if (s[i] == '"' || s[i] == '\'') return string_literal();
    const auto start = i;
    while (i < s.size() && s[i] != ',' && s[i] != ']' && s[i] != '#' && s[i] != ' ' && s[i] != '\t') ++i;
    std::string tok(s.substr(start, i - start));
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::erase(tok, '_');
    std::int64_t iv = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
    if (ec == std::errc() && p == tok.data() + tok.size()) return iv;
    double dv = 0;
    auto [p2, ec2] = std::from_chars(tok.data(), tok.data() + tok.size(), dv);
    if (ec2 == std::errc() && p2 == tok.data() + tok.size()) return dv;
    fail(line, "cannot parse value '" + tok + "'");
  }

  TomlValue value() {
    skip_ws();
    if (!done() && s[i] == '[') {
      ++i;
      std::vector<TomlScalar> arr;
      for (;;) {
        skip_ws();
        if (done()) fail(line, "unterminated array");
        if (s[i] == ']') {
          ++i;
          break;
        }
        arr.push_back(scalar());
        skip_ws();
        if (!done() && s[i] == ',') ++i;
      }
      return arr;
    }
    return std::visit([](auto&& v) -> TomlValue { return v; }, scalar());
  }
};

}  // namespace toml_detail

inline std::vector<TomlEntry> parse_toml(std::string_view text) {
  std::vector<TomlEntry> out;
  std::string table;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = toml_detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '[') {
      const auto close = line.find(']');
      if (close == std::string::npos) toml_detail::fail(line_no, "unterminated table header");
      table = toml_detail::trim(std::string_view(line).substr(1, close - 1));
      if (table.empty()) toml_detail::fail(line_no, "empty table name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) toml_detail::fail(line_no, "expected key = value");
    auto key = toml_detail::trim(std::string_view(line).substr(0, eq));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
    toml_detail::Cursor c{line, eq + 1, line_no};
    auto value = c.value();
    c.skip_ws();
    if (!c.done() && c.s[c.i] != '#') toml_detail::fail(line_no, "trailing characters after value");
    for (const auto& e : out) {
      if (e.table == table && e.key == key) toml_detail::fail(line_no, "duplicate key '" + key + "'");
    }
    out.push_back({table, key, std::move(value), line_no});
  }
  return out;
}

namespace config_detail {

inline std::string where(const TomlEntry& e) {
  return "line " + std::to_string(e.line) + ": " + (e.table.empty() ? "" : e.table + ".") + e.key;
}

inline std::string as_string(const TomlEntry& e) {
  if (auto* s = std::get_if<std::string>(&e.value)) return *s;
  throw Error(ErrorCode::ConfigError, where(e) + " must be a string");
}

inline std::int64_t as_int(const TomlEntry& e) {
  if (auto* v = std::get_if<std::int64_t>(&e.value)) return *v;
  throw Error(ErrorCode::ConfigError, where(e) + " must be an integer");
}

inline double as_double(const TomlEntry& e) {
  if (auto* v = std::get_if<double>(&e.value)) return *v;
  if (auto* v = std::get_if<std::int64_t>(&e.value)) return static_cast<double>(*v);
  throw Error(ErrorCode::ConfigError, where(e) + " must be a number");
}

inline bool as_bool(const TomlEntry& e) {
  if (auto* v = std::get_if<bool>(&e.value)) return *v;
  throw Error(ErrorCode::ConfigError, where(e) + " must be true or false");
}

inline std::vector<std::string> as_strings(const TomlEntry& e) {
  const auto* arr = std::get_if<std::vector<TomlScalar>>(&e.value);
  if (!arr) throw Error(ErrorCode::ConfigError, where(e) + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : *arr) {
    const auto* s = std::get_if<std::string>(&v);
    if (!s) throw Error(ErrorCode::ConfigError, where(e) + " must be an array of strings");
    out.push_back(*s);
  }
  return out;
}

template <typename Fn>
auto convert(const TomlEntry& e, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& err) {
    if (err.code() == ErrorCode::ConfigError && err.message().starts_with("line ")) throw;
    throw Error(ErrorCode::ConfigError, where(e) + ": " + err.message());
  }
}

}  // namespace config_detail

inline void validate_config(const PipelineConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::ConfigError, what);
  };
  require(c.alpha >= 0 && c.alpha <= 1, "alpha must lie in [0, 1]");
  require(c.reference_fraction > 0 && c.reference_fraction < 1, "reference_fraction must lie in (0, 1)");
  require(c.window >= 1, "window must be at least 1");
  require(c.max_frames >= c.window, "max_frames must be at least window");
  require(c.batch_size_per_class >= 1, "batch_size_per_class must be at least 1");
  require(c.f1_threshold >= 0 && c.f1_threshold <= 1, "f1_threshold must lie in [0, 1]");
  require(c.rewrite_budget >= 0, "rewrite_budget must not be negative");
  require(c.attempts_per_slot >= 1, "attempts_per_slot must be at least 1");
  require(c.repeats >= 1, "repeats must be at least 1");
  require(c.jobs >= 1, "jobs must be at least 1");
  require(c.provider.name == "openai" || c.provider.name == "mock", "provider.name must be openai or mock");
  require(c.provider.max_images >= 1, "provider.max_images must be at least 1");
  require(c.provider.max_retries >= 0, "provider.max_retries must not be negative");
  require(c.provider.timeout_s > 0, "provider.timeout_s must be positive");
  require(2 * c.window <= c.provider.max_images, "window raw frames plus window tool images exceed provider.max_images");
  (void)c.candidate_list();
}

/// Builds a config from TOML text. Omitted keys keep their defaults; unknown
/// keys and tables are rejected.
inline PipelineConfig parse_config(std::string_view text) {
  using namespace config_detail;
  PipelineConfig c;
  for (const auto& e : parse_toml(text)) {
    convert(e, [&] {
      const auto& k = e.key;
      if (e.table.empty()) {
        if (k == "alpha") c.alpha = as_double(e);
        else if (k == "reference_fraction") c.reference_fraction = as_double(e);
        else if (k == "window") c.window = as_int(e);
        else if (k == "max_frames") c.max_frames = as_int(e);
        else if (k == "batch_size_per_class") c.batch_size_per_class = as_int(e);
        else if (k == "f1_threshold") c.f1_threshold = as_double(e);
        else if (k == "rewrite_budget") c.rewrite_budget = as_int(e);
        else if (k == "attempts_per_slot") c.attempts_per_slot = as_int(e);
        else if (k == "seed") c.seed = as_int(e);
        else if (k == "mode") c.mode = parse_detection_mode(as_string(e));
        else if (k == "video_specific") c.video_specific = as_bool(e);
        else if (k == "repeats") c.repeats = as_int(e);
        else if (k == "jobs") c.jobs = as_int(e);
        else if (k == "baseline_prompt") c.baseline_prompt = parse_baseline_prompt(as_string(e));
        else if (k == "f1_mode") c.f1_mode = parse_f1_mode(as_string(e));
        else if (k == "cumulative_f1") c.cumulative_f1 = as_bool(e);
        else if (k == "candidates") c.candidates = as_strings(e);
        else if (k == "prohibited_names") c.prohibited_names = as_strings(e);
        else if (k == "extract_command") c.extract_command = as_string(e);
        else if (k == "refusal_patterns_path") c.refusal_patterns_path = as_string(e);
        else throw Error(ErrorCode::ConfigError, where(e) + ": unknown key");
      } else if (e.table == "provider") {
        auto& p = c.provider;
        if (k == "name") p.name = as_string(e);
        else if (k == "endpoint") p.endpoint = as_string(e);
        else if (k == "model_id") p.model_id = as_string(e);
        else if (k == "max_images") p.max_images = as_int(e);
        else if (k == "requests_per_minute") p.requests_per_minute = as_double(e);
        else if (k == "timeout_s") p.timeout_s = as_double(e);
        else if (k == "max_retries") p.max_retries = as_int(e);
        else if (k == "backoff_ms") p.backoff_ms = as_int(e);
        else if (k == "native_schema") p.native_schema = as_bool(e);
        else if (k == "mock_behavior_path") p.mock_behavior_path = as_string(e);
        else if (k == "api_key") throw Error(ErrorCode::ConfigError, where(e) + ": set the API key via LAVID_API_KEY");
        else throw Error(ErrorCode::ConfigError, where(e) + ": unknown key");
      } else if (e.table.starts_with("adapters.")) {
        const auto tool = e.table.substr(9);
        (void)parse_tool(tool);
        auto& a = c.adapters[tool];
        if (k == "command") a.command = as_string(e);
        else if (k == "concurrency_safe") a.concurrency_safe = as_bool(e);
        else throw Error(ErrorCode::ConfigError, where(e) + ": unknown key");
      } else {
        throw Error(ErrorCode::ConfigError, "line " + std::to_string(e.line) + ": unknown table [" + e.table + "]");
      }
    });
  }
  for (const auto& [tool, a] : c.adapters) {
    if (a.command.empty()) throw Error(ErrorCode::ConfigError, "adapters." + tool + " needs a command");
  }
  validate_config(c);
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.message());
  }
}

/// Fills credentials from the environment (LAVID_API_KEY).
inline void apply_env(PipelineConfig& c) {
  if (const char* key = std::getenv("LAVID_API_KEY")) c.provider.api_key = key;
}

namespace config_detail {

inline std::string number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

inline std::string toml_quote(std::string_view s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    if (ch == '\n') {
      out += "\\n";
      continue;
    }
    out += ch;
  }
  return out + "\"";
}

inline std::string string_array(const std::vector<std::string>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + toml_quote(v[i]);
  return out + "]";
}

}  // namespace config_detail

/// Serializes every key; parse_config(to_toml(c)) == c apart from the API key.
inline std::string to_toml(const PipelineConfig& c) {
  using namespace config_detail;
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "alpha = " << number(c.alpha) << '\n'
     << "reference_fraction = " << number(c.reference_fraction) << '\n'
     << "window = " << c.window << '\n'
     << "max_frames = " << c.max_frames << '\n'
     << "batch_size_per_class = " << c.batch_size_per_class << '\n'
     << "f1_threshold = " << number(c.f1_threshold) << '\n'
     << "rewrite_budget = " << c.rewrite_budget << '\n'
     << "attempts_per_slot = " << c.attempts_per_slot << '\n'
     << "seed = " << c.seed << '\n'
     << "mode = " << toml_quote(to_string(c.mode)) << '\n'
     << "video_specific = " << b(c.video_specific) << '\n'
     << "repeats = " << c.repeats << '\n'
     << "jobs = " << c.jobs << '\n'
     << "baseline_prompt = " << toml_quote(to_string(c.baseline_prompt)) << '\n'
     << "f1_mode = " << toml_quote(to_string(c.f1_mode)) << '\n'
     << "cumulative_f1 = " << b(c.cumulative_f1) << '\n'
     << "candidates = " << string_array(c.candidates) << '\n'
     << "prohibited_names = " << string_array(c.prohibited_names) << '\n'
     << "extract_command = " << toml_quote(c.extract_command) << '\n'
     << "refusal_patterns_path = " << toml_quote(c.refusal_patterns_path) << '\n'
     << "\n[provider]\n"
     << "name = " << toml_quote(c.provider.name) << '\n'
     << "endpoint = " << toml_quote(c.provider.endpoint) << '\n'
     << "model_id = " << toml_quote(c.provider.model_id) << '\n'
     << "max_images = " << c.provider.max_images << '\n'
     << "requests_per_minute = " << number(c.provider.requests_per_minute) << '\n'
     << "timeout_s = " << number(c.provider.timeout_s) << '\n'
     << "max_retries = " << c.provider.max_retries << '\n'
     << "backoff_ms = " << c.provider.backoff_ms << '\n'
     << "native_schema = " << b(c.provider.native_schema) << '\n'
     << "mock_behavior_path = " << toml_quote(c.provider.mock_behavior_path) << '\n';
  for (const auto& [tool, a] : c.adapters) {
    os << "\n[adapters." << tool << "]\n"
       << "command = " << toml_quote(a.command) << '\n'
       << "concurrency_safe = " << b(a.concurrency_safe) << '\n';
  }
  return os.str();
}

}  // namespace lavid
