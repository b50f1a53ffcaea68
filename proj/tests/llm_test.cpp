/*
 * Copyright 2026 The shapchat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include "shapchat/llm/llm.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>
#include <fmt/format.h>
#include <httplib.h>

#include "shapchat/error.hpp"
#include "shapchat/eval/eval.hpp"
#include "shapchat/prompt/prompt.hpp"

namespace shapchat::llm {
namespace {

using prompt::ChatMessage;
using prompt::Role;

std::vector<ChatMessage> simple_messages() {
  return {ChatMessage::make(Role::kSystem, "You are helpful."),
          ChatMessage::make(Role::kUser, "Hi")};
}

struct Harness {
  explicit Harness(MockOptions options, BackendConfig config = {})
      : mock(std::make_shared<MockBackend>(std::move(options))),
        client(config, mock, [this](std::chrono::milliseconds d) { sleeps.push_back(d); }) {}

  std::shared_ptr<MockBackend> mock;
  std::vector<std::chrono::milliseconds> sleeps;
  LlmClient client;
};

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}

TEST(ChatCompleteTest, FixedReply) {
  Harness h({.mode = MockMode::kFixedReply, .fixed_reply = "OK"});
  const ChatResponse r = h.client.chat_complete(simple_messages());
  EXPECT_EQ(r.content, "OK");
  EXPECT_EQ(r.finish_reason, FinishReason::kStop);
  EXPECT_EQ(r.usage.completion_tokens, 2);
  const auto requests = h.mock->requests();
  ASSERT_EQ(requests.size(), 1u);
  EXPECT_EQ(requests[0].path, "/v1/chat/completions");
  EXPECT_EQ(requests[0].body["model"], "local-model");
  EXPECT_EQ(requests[0].body["temperature"], 0.2);
  EXPECT_EQ(requests[0].body["max_tokens"], 512);
  EXPECT_EQ(requests[0].body["messages"], prompt::to_json(simple_messages()));
}

TEST(ChatCompleteTest, RetriesTransportFailuresWithBackoff) {
  Harness h({.mode = MockMode::kFailAfterN, .fail_after_n = 0},
            {.retries = 2, .backoff_ms = 100});
  EXPECT_EQ(kind_of([&] { h.client.chat_complete(simple_messages()); }),
            ErrorKind::kBackendUnreachable);
  EXPECT_EQ(h.mock->calls(), 3u);
  ASSERT_EQ(h.sleeps.size(), 2u);
  EXPECT_EQ(h.sleeps[0].count(), 100);
  EXPECT_EQ(h.sleeps[1].count(), 200);
}

TEST(ChatCompleteTest, FailAfterNLetsEarlyCallsThrough) {
  Harness h({.mode = MockMode::kFailAfterN, .fixed_reply = "fine", .fail_after_n = 2},
            {.retries = 0});
  EXPECT_EQ(h.client.chat_complete(simple_messages()).content, "fine");
  EXPECT_EQ(h.client.chat_complete(simple_messages()).content, "fine");
  EXPECT_THROW(h.client.chat_complete(simple_messages()), Error);
}

TEST(ChatCompleteTest, ServerErrorsAreRetriedClientErrorsAreNot) {
  Harness five({.mode = MockMode::kFailAfterN, .fail_after_n = 0, .fail_status = 503},
               {.retries = 3});
  EXPECT_EQ(kind_of([&] { five.client.chat_complete(simple_messages()); }),
            ErrorKind::kBackendUnreachable);
  EXPECT_EQ(five.mock->calls(), 4u);

  Harness four({.mode = MockMode::kFailAfterN, .fail_after_n = 0, .fail_status = 400},
               {.retries = 3});
  EXPECT_EQ(kind_of([&] { four.client.chat_complete(simple_messages()); }),
            ErrorKind::kBackendRejected);
  EXPECT_EQ(four.mock->calls(), 1u);
  EXPECT_TRUE(four.sleeps.empty());
}

TEST(ChatCompleteTest, PreconditionsSkipTheNetwork) {
  Harness h({});
  EXPECT_EQ(kind_of([&] { h.client.chat_complete({}); }), ErrorKind::kInvalidArgument);
  const std::vector<ChatMessage> user_first{ChatMessage::make(Role::kUser, "Hi")};
  EXPECT_EQ(kind_of([&] { h.client.chat_complete(user_first); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(h.mock->calls(), 0u);
}

class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(HttpResponse response) : response_(std::move(response)) {}
  HttpResponse post(const std::string&, const std::string&, const BackendConfig&) override {
    return response_;
  }
  HttpResponse get(const std::string&, const BackendConfig&) override { return response_; }

 private:
  HttpResponse response_;
};

TEST(ChatCompleteTest, MalformedResponsesAreProtocolErrors) {
  for (const std::string& body :
       {std::string("<html>bad gateway</html>"), std::string(R"({"choices": []})"),
        std::string(R"({"choices": [{"message": {"content": 5}}]})")}) {
    LlmClient client({}, std::make_shared<ScriptedTransport>(HttpResponse{200, body}));
    try {
      client.chat_complete(simple_messages());
      ADD_FAILURE() << body;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kProtocol) << body;
      EXPECT_NE(std::string(e.what()).find(body.substr(0, 10)), std::string::npos) << e.what();
    }
  }
  LlmClient length({}, std::make_shared<ScriptedTransport>(HttpResponse{
                           200, R"({"choices":[{"message":{"content":"ab"},"finish_reason":"length"}]})"}));
  EXPECT_EQ(length.chat_complete(simple_messages()).finish_reason, FinishReason::kLength);
}

TEST(EchoTopFeatureTest, RepliesWithTheFirstListedFeature) {
  Harness h({.mode = MockMode::kEchoTopFeature});
  const std::string info = std::string(prompt::kInfoPromptHeader) +
                           "\nPredicted soh: 0.8000\nTop 2 features by absolute SHAP value:\n"
                           "- cycle_count = 900.0000 (SHAP -0.1000)\n"
                           "- battery_type = NMC (SHAP +0.0100)\n";
  std::vector<ChatMessage> messages{ChatMessage::make(Role::kSystem, "sys"),
                                    ChatMessage::make(Role::kSystem, info),
                                    ChatMessage::make(Role::kUser, "Why?")};
  EXPECT_EQ(h.client.chat_complete(messages).content,
            "The most influential feature is cycle_count.");
  EXPECT_EQ(top_feature_in(messages), "cycle_count");
  messages.erase(messages.begin() + 1);
  EXPECT_EQ(top_feature_in(messages), std::nullopt);
  EXPECT_EQ(h.client.chat_complete(messages).content, "No instance data is available.");
}

TEST(ScoreTokensTest, CharacterTokensOfTheTarget) {
  Harness h({.token_logprob = -0.5});
  const auto scores = h.client.score_tokens("Question: ", "abcd");
  ASSERT_EQ(scores.size(), 4u);
  for (const auto& s : scores) EXPECT_EQ(s.logprob, -0.5);
  EXPECT_EQ(scores[0].token_text, "a");
  const auto body = h.mock->requests().at(0).body;
  EXPECT_EQ(body["prompt"], "Question: abcd");
  EXPECT_EQ(body["echo"], true);
  EXPECT_EQ(body["max_tokens"], 0);
  EXPECT_EQ(kind_of([&] { h.client.score_tokens("p", ""); }), ErrorKind::kInvalidArgument);
}

TEST(ScoreTokensTest, UniformMockGivesVocabularyPerplexity) {
  for (double v : {2.0, 10.0, 1000.0}) {
    Harness h({.token_logprob = -std::log(v)});
    const auto scores = h.client.score_tokens("prompt ", "target text");
    EXPECT_EQ(scores.size(), 11u);
    EXPECT_NEAR(eval::perplexity(scores), v, 1e-9 * v);
  }
}

TEST(ScoreTokensTest, MissingEndpointIsACapabilityError) {
  Harness h({.token_logprob = std::nullopt});
  try {
    h.client.score_tokens("p", "t");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCapability);
    EXPECT_NE(std::string(e.what()).find("scoring-capable backend"), std::string::npos);
  }
  LlmClient no_logprobs({}, std::make_shared<ScriptedTransport>(HttpResponse{
                                200, R"({"choices":[{"text":"pt"}]})"}));
  EXPECT_EQ(kind_of([&] { no_logprobs.score_tokens("p", "t"); }), ErrorKind::kCapability);
}

TEST(ScoreTokensTest, UnscorableFirstTokenIsSkipped) {
  Harness h({});
  const auto scores = h.client.score_tokens("", "abc");
  ASSERT_EQ(scores.size(), 2u);
  EXPECT_EQ(scores[0].token_text, "b");
  EXPECT_EQ(kind_of([&] { h.client.score_tokens("", "a"); }), ErrorKind::kProtocol);
  LlmClient gap({}, std::make_shared<ScriptedTransport>(HttpResponse{
                        200, R"({"choices":[{"logprobs":{"tokens":["p","t"],)"
                             R"("token_logprobs":[-1,null],"text_offset":[0,1]}}]})"}));
  EXPECT_EQ(kind_of([&] { gap.score_tokens("p", "t"); }), ErrorKind::kProtocol);
}

TEST(ConfigTest, ValidationEnvAndJson) {
  EXPECT_THROW(validate({.base_url = ""}), Error);
  EXPECT_THROW(validate({.timeout_ms = 0}), Error);
  EXPECT_THROW(validate({.temperature = -1}), Error);
  ::setenv("LLM_BASE_URL", "http://example:9000", 1);
  ::setenv("LLM_MODEL", "llama", 1);
  ::setenv("LLM_API_KEY", "secret", 1);
  const BackendConfig env = apply_env({});
  ::unsetenv("LLM_BASE_URL");
  ::unsetenv("LLM_MODEL");
  ::unsetenv("LLM_API_KEY");
  EXPECT_EQ(env.base_url, "http://example:9000");
  EXPECT_EQ(env.model_name, "llama");
  EXPECT_EQ(env.api_key, "secret");
  const BackendConfig j = backend_config_from_json(
      nlohmann::json::parse(R"({"model_name": "m", "retries": 0, "temperature": 0})"));
  EXPECT_EQ(j.model_name, "m");
  EXPECT_EQ(j.retries, 0);
  EXPECT_EQ(j.temperature, 0.0);
  EXPECT_THROW(backend_config_from_json(nlohmann::json::parse(R"({"model": "m"})")), Error);
  EXPECT_THROW(backend_config_from_json(nlohmann::json::parse(R"({"retries": "x"})")), Error);
  EXPECT_THROW(HttpTransport("https://example"), Error);
  EXPECT_THROW(HttpTransport("http://"), Error);
}

// Serves a MockBackend over real HTTP under a path prefix.
class HttpTransportTest : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post(R"(/prefix(/v1/.*))", [this](const httplib::Request& req, httplib::Response& res) {
      auth_ = req.get_header_value("Authorization");
      const HttpResponse r = mock_.handle(req.matches[1].str(), req.body);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    });
    server_.Get("/prefix/v1/models", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"object":"list","data":[]})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  BackendConfig config() const {
    return {.base_url = fmt::format("http://127.0.0.1:{}/prefix/", port_),
            .timeout_ms = 5000,
            .retries = 0,
            .api_key = "k1"};
  }

  MockBackend mock_{{.mode = MockMode::kFixedReply, .fixed_reply = "over http"}};
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::string auth_;
};

TEST_F(HttpTransportTest, ChatScoreAndPing) {
  const BackendConfig c = config();
  LlmClient client(c, std::make_shared<HttpTransport>(c.base_url));
  EXPECT_EQ(client.chat_complete(simple_messages()).content, "over http");
  EXPECT_EQ(auth_, "Bearer k1");
  EXPECT_EQ(client.score_tokens("ab", "cd").size(), 2u);
  EXPECT_TRUE(client.ping());
}

TEST_F(HttpTransportTest, UnreachableBackend) {
  BackendConfig c = config();
  c.base_url = "http://127.0.0.1:1";
  c.retries = 1;
  c.backoff_ms = 0;
  LlmClient client(c, std::make_shared<HttpTransport>(c.base_url));
  EXPECT_EQ(kind_of([&] { client.chat_complete(simple_messages()); }),
            ErrorKind::kBackendUnreachable);
  EXPECT_FALSE(client.ping());
}

}  // namespace
}  // namespace shapchat::llm
