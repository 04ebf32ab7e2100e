#pragma once

// Chat-completions transport. Needs cpp-httplib (built with
// CPPHTTPLIB_OPENSSL_SUPPORT for https endpoints) and OpenSSL.

#include <chrono>
#include <regex>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "lavid/error.hpp"
#include "lavid/lvlm.hpp"
#include "lavid/schema.hpp"

namespace lavid {

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

struct OpenAiOptions {
  std::string endpoint = "https://api.openai.com/v1";
  std::string api_key;
  std::chrono::milliseconds timeout{120000};
  bool native_schema = true;
};

/// Body of a chat-completions request: system message, then one user message
/// with the text followed by the images as PNG data URLs.
inline nlohmann::json chat_request_body(const LvlmRequest& r, bool native_schema) {
  auto content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", r.user_text}});
  for (const auto& img : r.images) {
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + base64_encode(img)}}}});
  }
  auto messages = nlohmann::json::array();
  if (!r.system_text.empty()) messages.push_back({{"role", "system"}, {"content", r.system_text}});
  messages.push_back({{"role", "user"}, {"content", content}});
  nlohmann::json body{{"model", r.model_id}, {"temperature", r.temperature}, {"messages", messages}};
  if (native_schema && r.response_schema) body["response_format"] = to_json_schema(*r.response_schema);
  return body;
}

class OpenAiProvider final : public Provider {
 public:
  explicit OpenAiProvider(OpenAiOptions options) : options_(std::move(options)) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(options_.endpoint, m, url)) {
      throw Error(ErrorCode::ConfigError, "endpoint must be an http(s) URL: " + options_.endpoint);
    }
    host_ = m[1].str();
    path_ = m[2].str();
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
  }

  ProviderReply send(const LvlmRequest& request, bool native_schema) override {
    httplib::Client cli(host_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

    const auto body = chat_request_body(request, native_schema).dump();
    auto res = cli.Post(path_, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout) {
        throw Error(ErrorCode::Timeout, "request to " + host_ + " timed out (" + httplib::to_string(err) + ")");
      }
      throw Error(ErrorCode::ProviderError, "request to " + host_ + " failed: " + httplib::to_string(err));
    }
    const auto status = res->status;
    const auto snippet = res->body.substr(0, 300);
    if (status == 401 || status == 403) throw Error(ErrorCode::AuthError, "HTTP " + std::to_string(status) + ": " + snippet);
    if (status == 429) throw Error(ErrorCode::RateLimited, "HTTP 429: " + snippet);
    if (status == 408) throw Error(ErrorCode::Timeout, "HTTP 408: " + snippet);
    if (status >= 500) throw Error(ErrorCode::ProviderError, "HTTP " + std::to_string(status) + ": " + snippet);
    if (status >= 400) throw Error(ErrorCode::InvalidRequest, "HTTP " + std::to_string(status) + ": " + snippet);

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorCode::ProviderError, "response is not JSON: " + snippet);
    }
    if (!j.contains("choices") || j["choices"].empty()) throw Error(ErrorCode::ProviderError, "response has no choices");
    const auto& msg = j["choices"][0].value("message", nlohmann::json::object());
    ProviderReply reply;
    if (msg.contains("refusal") && msg["refusal"].is_string()) {
      reply.refused = true;
      reply.raw_text = msg["refusal"].get<std::string>();
    } else if (msg.contains("content") && msg["content"].is_string()) {
      reply.raw_text = msg["content"].get<std::string>();
    }
    if (j.contains("usage")) {
      reply.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      reply.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
    return reply;
  }

  bool supports_native_schema() const override { return options_.native_schema; }
  std::string name() const override { return "openai"; }

 private:
  OpenAiOptions options_;
  std::string host_;
  std::string path_;
};

}  // namespace lavid
