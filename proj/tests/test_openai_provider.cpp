#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "lavid/openai_provider.hpp"

using namespace lavid;

namespace {

// Local chat-completions stand-in; each test installs its own handler.
class FakeServer {
 public:
  explicit FakeServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::atomic<int> hits{0};
  std::string last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

OpenAiOptions options_for(const FakeServer& s) {
  OpenAiOptions o;
  o.endpoint = s.endpoint();
  o.api_key = "sk-local";
  o.timeout = std::chrono::milliseconds(2000);
  return o;
}

void reply_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::Io;
}

LvlmRequest sample_request() {
  LvlmRequest r;
  r.system_text = "sys";
  r.user_text = "user";
  r.model_id = "gpt-4o";
  r.images = {{0x89, 'P', 'N', 'G'}, {1, 2, 3}};
  r.response_schema = StructuredSchema{{{"is_ai_generated", FieldKind::Bool}, {"explanation", FieldKind::Str}}};
  r.annotations = {{"purpose", "detect"}, {"sample_id", "secret-id"}};
  return r;
}

}  // namespace

TEST(Base64Test, KnownVectors) {
  EXPECT_EQ(base64_encode({}), "");
  EXPECT_EQ(base64_encode({'f'}), "Zg==");
  EXPECT_EQ(base64_encode({'f', 'o'}), "Zm8=");
  EXPECT_EQ(base64_encode({'f', 'o', 'o'}), "Zm9v");
  EXPECT_EQ(base64_encode({'f', 'o', 'o', 'b', 'a', 'r'}), "Zm9vYmFy");
}

TEST(RequestBodyTest, ShapeAndOrder) {
  const auto body = chat_request_body(sample_request(), true);
  EXPECT_EQ(body.at("model"), "gpt-4o");
  EXPECT_EQ(body.at("temperature"), 0.0);
  const auto& msgs = body.at("messages");
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].at("role"), "system");
  const auto& content = msgs[1].at("content");
  ASSERT_EQ(content.size(), 3u);
  EXPECT_EQ(content[0].at("text"), "user");
  EXPECT_EQ(content[1].at("image_url").at("url"), "data:image/png;base64,iVBORw==");
  EXPECT_EQ(content[2].at("image_url").at("url"), "data:image/png;base64,AQID");
  EXPECT_EQ(body.at("response_format").at("json_schema").at("strict"), true);
  EXPECT_FALSE(chat_request_body(sample_request(), false).contains("response_format"));
  EXPECT_EQ(body.dump().find("secret-id"), std::string::npos);
}

TEST(OpenAiProviderTest, ParsesContentAndUsage) {
  FakeServer server([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"choices", {{{"message", {{"content", "{\"is_ai_generated\": true, \"explanation\": \"x\"}"}}}}}},
                     {"usage", {{"prompt_tokens", 120}, {"completion_tokens", 9}}}});
  });
  OpenAiProvider p(options_for(server));
  const auto reply = p.send(sample_request(), true);
  EXPECT_FALSE(reply.refused);
  EXPECT_EQ(reply.raw_text, "{\"is_ai_generated\": true, \"explanation\": \"x\"}");
  EXPECT_EQ(reply.usage.prompt_tokens, 120);
  EXPECT_EQ(reply.usage.completion_tokens, 9);
  EXPECT_EQ(server.last_auth, "Bearer sk-local");
  EXPECT_TRUE(nlohmann::json::parse(server.last_body).contains("response_format"));
}

TEST(OpenAiProviderTest, RefusalField) {
  FakeServer server([](const httplib::Request&, httplib::Response& res) {
    reply_json(res, {{"choices", {{{"message", {{"content", nullptr}, {"refusal", "I can't help with that."}}}}}}});
  });
  OpenAiProvider p(options_for(server));
  const auto reply = p.send(sample_request(), true);
  EXPECT_TRUE(reply.refused);
  EXPECT_EQ(reply.raw_text, "I can't help with that.");
}

TEST(OpenAiProviderTest, StatusCodesMapToErrors) {
  const std::vector<std::pair<int, ErrorCode>> cases{{401, ErrorCode::AuthError},    {403, ErrorCode::AuthError},
                                                     {429, ErrorCode::RateLimited},  {408, ErrorCode::Timeout},
                                                     {500, ErrorCode::ProviderError}, {503, ErrorCode::ProviderError},
                                                     {400, ErrorCode::InvalidRequest}, {404, ErrorCode::InvalidRequest}};
  for (const auto& [status, code] : cases) {
    FakeServer server([status = status](const httplib::Request&, httplib::Response& res) {
      reply_json(res, {{"error", {{"message", "nope"}}}}, status);
    });
    OpenAiProvider p(options_for(server));
    EXPECT_EQ(code_of([&] { p.send(sample_request(), true); }), code) << status;
  }
}

TEST(OpenAiProviderTest, MalformedBodiesAreProviderErrors) {
  FakeServer server([](const httplib::Request& req, httplib::Response& res) {
    res.status = 200;
    res.set_content(req.body.find("empty") != std::string::npos ? "{\"choices\": []}" : "not json", "application/json");
  });
  OpenAiProvider p(options_for(server));
  EXPECT_EQ(code_of([&] { p.send(sample_request(), true); }), ErrorCode::ProviderError);
  auto r = sample_request();
  r.user_text = "empty";
  EXPECT_EQ(code_of([&] { p.send(r, true); }), ErrorCode::ProviderError);
}

TEST(OpenAiProviderTest, SlowServerTimesOut) {
  FakeServer server([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    reply_json(res, {{"choices", {{{"message", {{"content", "late"}}}}}}});
  });
  auto o = options_for(server);
  o.timeout = std::chrono::milliseconds(200);
  OpenAiProvider p(o);
  EXPECT_EQ(code_of([&] { p.send(sample_request(), true); }), ErrorCode::Timeout);
}

TEST(OpenAiProviderTest, ClientRetriesRateLimits) {
  std::atomic<int> calls{0};
  FakeServer server([&](const httplib::Request&, httplib::Response& res) {
    if (calls++ < 2) {
      reply_json(res, {{"error", "slow down"}}, 429);
    } else {
      reply_json(res, {{"choices", {{{"message", {{"content", "No."}}}}}}});
    }
  });
  ClientOptions co;
  co.backoff = std::chrono::milliseconds(1);
  Client c(std::make_shared<OpenAiProvider>(options_for(server)), co);
  LvlmRequest r;
  r.user_text = "x";
  EXPECT_EQ(c.complete(r).raw_text, "No.");
  EXPECT_EQ(server.hits, 3);
}

TEST(OpenAiProviderTest, RejectsNonHttpEndpoints) {
  OpenAiOptions o;
  o.endpoint = "ftp://example.com";
  EXPECT_EQ(code_of([&] { OpenAiProvider p(o); }), ErrorCode::ConfigError);
}
