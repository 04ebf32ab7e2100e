#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "lavid/error.hpp"
#include "lavid/log.hpp"
#include "lavid/refusal.hpp"
#include "lavid/schema.hpp"

namespace lavid {

struct LvlmRequest {
  std::string system_text;
  std::string user_text;
  std::vector<std::vector<std::uint8_t>> images;  // PNG-encoded, in presentation order
  std::optional<StructuredSchema> response_schema;
  double temperature = 0.0;
  std::string model_id;
  /// Routing metadata (purpose, tool, sample id). Never transmitted to a
  /// provider; written to transcripts and read by the mock.
  std::map<std::string, std::string> annotations;

  std::string annotation(const std::string& key) const {
    const auto it = annotations.find(key);
    return it == annotations.end() ? std::string() : it->second;
  }
};

using FieldValue = std::variant<bool, std::string>;
using ParsedFields = std::map<std::string, FieldValue>;

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct LvlmResponse {
  std::string raw_text;
  std::optional<ParsedFields> parsed_fields;
  bool refused = false;
  TokenUsage usage;

  std::optional<bool> bool_field(const std::string& name) const {
    if (!parsed_fields) return std::nullopt;
    const auto it = parsed_fields->find(name);
    if (it == parsed_fields->end() || !std::holds_alternative<bool>(it->second)) return std::nullopt;
    return std::get<bool>(it->second);
  }

  std::optional<std::string> str_field(const std::string& name) const {
    if (!parsed_fields) return std::nullopt;
    const auto it = parsed_fields->find(name);
    if (it == parsed_fields->end() || !std::holds_alternative<std::string>(it->second)) return std::nullopt;
    return std::get<std::string>(it->second);
  }
};

/// What a transport returns before schema parsing and refusal classification.
struct ProviderReply {
  std::string raw_text;
  bool refused = false;  // provider-side refusal signal, when the API has one
  TokenUsage usage;
};

/// A chat-style vision model endpoint. Implementations throw lavid::Error;
/// transient codes (RateLimited, Timeout, ProviderError) are retried by Client.
class Provider {
 public:
  virtual ~Provider() = default;
  /// `native_schema` is true when the request's schema should be passed via the
  /// provider's structured-output mode; false means it was already appended
  /// to the user text.
  virtual ProviderReply send(const LvlmRequest& request, bool native_schema) = 0;
  virtual bool supports_native_schema() const = 0;
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------

/// Pulls the first JSON object out of model text (tolerates code fences and
/// prose around it) and checks it against the schema. Extra keys are dropped.
inline std::optional<ParsedFields> parse_structured_text(std::string_view text, const StructuredSchema& schema) {
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text.substr(open, close - open + 1));
  } catch (const nlohmann::json::parse_error&) {
    return std::nullopt;
  }
  if (!obj.is_object()) return std::nullopt;
  ParsedFields out;
  for (const auto& f : schema.fields) {
    const auto it = obj.find(f.name);
    if (it == obj.end()) return std::nullopt;
    if (f.kind == FieldKind::Bool) {
      if (it->is_boolean()) {
        out[f.name] = it->get<bool>();
      } else if (it->is_string()) {
        const auto s = to_lower_ascii(it->get<std::string>());
        if (s == "true" || s == "yes") {
          out[f.name] = true;
        } else if (s == "false" || s == "no") {
          out[f.name] = false;
        } else {
          return std::nullopt;
        }
      } else {
        return std::nullopt;
      }
    } else {
      if (it->is_string()) {
        out[f.name] = it->get<std::string>();
      } else if (it->is_null() || it->is_object() || it->is_array()) {
        return std::nullopt;
      } else {
        out[f.name] = it->dump();
      }
    }
  }
  return out;
}

inline nlohmann::json to_json(const ParsedFields& fields) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : fields) {
    std::visit([&](const auto& x) { j[k] = x; }, v);
  }
  return j;
}

struct ClientOptions {
  std::size_t max_images = 16;
  int max_retries = 3;
  std::chrono::milliseconds backoff{500};
  double requests_per_minute = 0;  // 0 = unlimited
  std::filesystem::path transcript_path;
  std::vector<std::string> redact;  // secrets scrubbed from transcripts
  RefusalClassifier refusal;
};

struct ClientStats {
  std::int64_t calls = 0;
  std::int64_t refused = 0;
  std::int64_t retries = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

/// Provider-independent request handling: validation, schema fallback,
/// retries with exponential backoff, rate limiting, refusal classification
/// and transcript logging. Shareable across threads.
class Client {
 public:
  explicit Client(std::shared_ptr<Provider> provider, ClientOptions options = {})
      : provider_(std::move(provider)), options_(std::move(options)) {
    if (!options_.transcript_path.empty()) {
      if (options_.transcript_path.has_parent_path()) {
        std::filesystem::create_directories(options_.transcript_path.parent_path());
      }
      transcript_.open(options_.transcript_path, std::ios::app);
      if (!transcript_) throw Error(ErrorCode::Io, "cannot open transcript " + options_.transcript_path.string());
    }
  }

  LvlmResponse complete(const LvlmRequest& request) {
    validate(request);
    const bool native = request.response_schema && provider_->supports_native_schema();
    LvlmRequest effective = request;
    if (request.response_schema && !native) {
      effective.user_text += "\n\n" + schema_instructions(*request.response_schema);
    }

    ProviderReply reply;
    try {
      reply = send_with_retries(effective, native);
    } catch (const Error& e) {
      write_transcript(effective, nullptr, e.what());
      throw;
    }

    LvlmResponse response;
    response.raw_text = std::move(reply.raw_text);
    response.usage = reply.usage;
    if (reply.refused) {
      response.refused = true;
    } else if (request.response_schema) {
      response.parsed_fields = parse_structured_text(response.raw_text, *request.response_schema);
      if (!response.parsed_fields) {
        if (options_.refusal.matches(response.raw_text)) {
          response.refused = true;
        } else {
          write_transcript(effective, &response, "schema violation");
          throw Error(ErrorCode::SchemaViolation, "unparseable structured output: " + response.raw_text.substr(0, 200));
        }
      }
    } else {
      response.refused = options_.refusal.is_refusal(response.raw_text);
    }

    {
      std::lock_guard lock(stats_mu_);
      ++stats_.calls;
      if (response.refused) ++stats_.refused;
      stats_.prompt_tokens += response.usage.prompt_tokens;
      stats_.completion_tokens += response.usage.completion_tokens;
    }
    write_transcript(effective, &response, {});
    return response;
  }

  ClientStats stats() const {
    std::lock_guard lock(stats_mu_);
    return stats_;
  }

  Provider& provider() { return *provider_; }
  const ClientOptions& options() const { return options_; }
  const RefusalClassifier& refusal() const { return options_.refusal; }

 private:
  void validate(const LvlmRequest& r) const {
    if (r.images.size() > options_.max_images) {
      throw Error(ErrorCode::InvalidRequest, std::to_string(r.images.size()) + " images exceed the limit of " +
                                                 std::to_string(options_.max_images));
    }
    if (!(r.temperature >= 0.0 && r.temperature <= 1.0)) {
      throw Error(ErrorCode::InvalidRequest, "temperature must lie in [0, 1]");
    }
    if (r.response_schema) {
      const auto problems = schema_structure_problems(*r.response_schema);
      if (!problems.empty()) throw Error(ErrorCode::InvalidRequest, "invalid response schema: " + problems.front());
    }
  }

  void throttle() {
    if (options_.requests_per_minute <= 0) return;
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(60.0 / options_.requests_per_minute));
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(rate_mu_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_slot_);
      next_slot_ = slot + interval;
    }
    std::this_thread::sleep_until(slot);
  }

  ProviderReply send_with_retries(const LvlmRequest& request, bool native) {
    for (int attempt = 0;; ++attempt) {
      throttle();
      try {
        return provider_->send(request, native);
      } catch (const Error& e) {
        if (!e.transient() || attempt >= options_.max_retries) throw;
        {
          std::lock_guard lock(stats_mu_);
          ++stats_.retries;
        }
        log(LogLevel::Debug, std::string("retrying after ") + e.what());
        std::this_thread::sleep_for(options_.backoff * (1LL << attempt));
      }
    }
  }

  void write_transcript(const LvlmRequest& request, const LvlmResponse* response, const std::string& error) {
    if (!transcript_.is_open()) return;
    nlohmann::json line{{"provider", provider_->name()},
                        {"model_id", request.model_id},
                        {"temperature", request.temperature},
                        {"annotations", request.annotations},
                        {"system_text", request.system_text},
                        {"user_text", request.user_text},
                        {"image_count", request.images.size()}};
    if (request.response_schema) line["schema"] = to_json(*request.response_schema);
    if (response) {
      line["raw_text"] = response->raw_text;
      line["refused"] = response->refused;
      if (response->parsed_fields) line["parsed_fields"] = to_json(*response->parsed_fields);
      line["usage"] = {{"prompt_tokens", response->usage.prompt_tokens},
                       {"completion_tokens", response->usage.completion_tokens}};
    }
    if (!error.empty()) line["error"] = error;
    auto text = line.dump();
    for (const auto& secret : options_.redact) {
      if (secret.empty()) continue;
      for (auto pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos)) {
        text.replace(pos, secret.size(), "[REDACTED]");
      }
    }
    std::lock_guard lock(transcript_mu_);
    transcript_ << text << '\n';
    transcript_.flush();
  }

  std::shared_ptr<Provider> provider_;
  ClientOptions options_;

  mutable std::mutex stats_mu_;
  ClientStats stats_;
  std::mutex rate_mu_;
  std::chrono::steady_clock::time_point next_slot_{};
  std::mutex transcript_mu_;
  std::ofstream transcript_;
};

}  // namespace lavid
