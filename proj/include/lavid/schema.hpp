#pragma once

#include <cctype>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace lavid {

enum class FieldKind { Bool, Str };

struct SchemaField {
  std::string name;
  FieldKind kind = FieldKind::Str;
  bool operator==(const SchemaField&) const = default;
};

inline constexpr std::string_view kVerdictField = "is_ai_generated";
inline constexpr std::size_t kMaxSchemaFields = 5;

/// Response structure requested from the model: one boolean verdict plus
/// string analysis fields. Structural validity is checked by
/// schema_structure_problems(); the rewrite rules live in the adaptation module.
struct StructuredSchema {
  std::vector<SchemaField> fields;

  bool has_field(std::string_view name) const {
    for (const auto& f : fields) {
      if (f.name == name) return true;
    }
    return false;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& f : fields) out.push_back(f.name);
    return out;
  }

  bool operator==(const StructuredSchema&) const = default;
};

inline bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

inline std::vector<std::string> schema_structure_problems(const StructuredSchema& schema) {
  std::vector<std::string> problems;
  std::size_t bool_fields = 0;
  bool verdict = false;
  std::set<std::string> seen;
  for (const auto& f : schema.fields) {
    if (!is_identifier(f.name)) problems.push_back("invalid field name '" + f.name + "'");
    if (!seen.insert(f.name).second) problems.push_back("duplicate field '" + f.name + "'");
    if (f.kind == FieldKind::Bool) ++bool_fields;
    if (f.name == kVerdictField && f.kind == FieldKind::Bool) verdict = true;
  }
  if (!verdict || bool_fields != 1) problems.push_back("must contain exactly one bool field named is_ai_generated");
  if (schema.fields.size() > kMaxSchemaFields) {
    problems.push_back("has " + std::to_string(schema.fields.size()) + " fields, maximum is 5");
  }
  return problems;
}

inline bool schema_structurally_valid(const StructuredSchema& schema) {
  return schema_structure_problems(schema).empty();
}

/// Pydantic-style class text, the form models are shown and asked to write.
inline std::string render_schema_class(const StructuredSchema& schema,
                                       std::string_view class_name = "Structured_Response") {
  std::string out = "class " + std::string(class_name) + "(BaseModel):\n";
  for (const auto& f : schema.fields) {
    out += "    " + f.name + ": " + (f.kind == FieldKind::Bool ? "bool" : "str") + "\n";
  }
  return out;
}

/// Extracts `name: bool|str` lines from class-like text. Returns an empty
/// schema when nothing matches.
inline StructuredSchema parse_schema_class(std::string_view text) {
  static const std::regex field_re(R"(^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(bool|str)\b)");
  StructuredSchema schema;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_search(line, m, field_re)) {
      schema.fields.push_back({m[1].str(), m[2].str() == "bool" ? FieldKind::Bool : FieldKind::Str});
    }
  }
  return schema;
}

/// Instruction block appended to the user message when the provider has no
/// native structured-output mode.
inline std::string schema_instructions(const StructuredSchema& schema) {
  return "Respond with a single JSON object and nothing else. It must contain exactly the fields of "
         "this class, with JSON booleans for bool fields and JSON strings for str fields:\n" +
         render_schema_class(schema);
}

/// Strict JSON schema in the chat-completions `response_format` shape.
inline nlohmann::json to_json_schema(const StructuredSchema& schema, std::string_view name = "Structured_Response") {
  nlohmann::json props = nlohmann::json::object();
  nlohmann::json required = nlohmann::json::array();
  for (const auto& f : schema.fields) {
    props[f.name] = {{"type", f.kind == FieldKind::Bool ? "boolean" : "string"}};
    required.push_back(f.name);
  }
  return {{"type", "json_schema"},
          {"json_schema",
           {{"name", name},
            {"strict", true},
            {"schema",
             {{"type", "object"}, {"properties", props}, {"required", required}, {"additionalProperties", false}}}}}};
}

inline nlohmann::json to_json(const StructuredSchema& schema) {
  auto arr = nlohmann::json::array();
  for (const auto& f : schema.fields) arr.push_back({f.name, f.kind == FieldKind::Bool ? "bool" : "str"});
  return arr;
}

inline StructuredSchema schema_from_json(const nlohmann::json& j) {
  StructuredSchema s;
  for (const auto& e : j) {
    s.fields.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>() == "bool" ? FieldKind::Bool : FieldKind::Str});
  }
  return s;
}

}  // namespace lavid
