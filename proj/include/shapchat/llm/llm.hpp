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

#ifndef SHAPCHAT_LLM_LLM_HPP_
#define SHAPCHAT_LLM_LLM_HPP_

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapchat/eval/eval.hpp"
#include "shapchat/prompt/prompt.hpp"

namespace shapchat::llm {

struct BackendConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string model_name = "local-model";
  double temperature = 0.2;
  int max_tokens = 512;
  int timeout_ms = 60000;
  // Extra attempts after the first on transport failures and 5xx.
  int retries = 2;
  // Delay before retry i is backoff_ms * 2^i.
  int backoff_ms = 250;
  // Sent as a bearer token when non-empty.
  std::string api_key = {};
};

// Throws kInvalidArgument when a field is out of range.
void validate(const BackendConfig& config);

// Overrides base_url, model_name and api_key from LLM_BASE_URL, LLM_MODEL and
// LLM_API_KEY when those are set.
BackendConfig apply_env(BackendConfig config);

// Reads any subset of the fields from a JSON object; unknown keys are rejected.
BackendConfig backend_config_from_json(const nlohmann::json& json,
                                       BackendConfig config = {});

struct HttpResponse {
  int status = 0;
  std::string body;
};

// One HTTP exchange. Implementations throw Error(kBackendUnreachable) when no
// response arrives; any HTTP status is returned as a response.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const BackendConfig& config) = 0;
  virtual HttpResponse get(const std::string& path, const BackendConfig& config) = 0;
};

// Plain-HTTP transport for base URLs of the form http://host[:port][/prefix].
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(const std::string& base_url);

  HttpResponse post(const std::string& path, const std::string& body,
                    const BackendConfig& config) override;
  HttpResponse get(const std::string& path, const BackendConfig& config) override;

 private:
  std::string host_port_;
  std::string prefix_;
};

enum class MockMode { kEchoTopFeature, kFixedReply, kFailAfterN };

struct MockOptions {
  MockMode mode = MockMode::kFixedReply;
  std::string fixed_reply = "OK";
  // kFailAfterN: calls after the first n fail.
  int fail_after_n = 0;
  // Status for failing calls; 0 means a transport failure.
  int fail_status = 0;
  // Logprob of every character token on /v1/completions; nullopt makes the
  // endpoint answer 404.
  std::optional<double> token_logprob = -0.5;
};

struct RecordedRequest {
  std::string path;
  nlohmann::json body;
};

// Deterministic in-process backend speaking the same wire format as a real
// server. Requests are recorded and may arrive from several threads.
class MockBackend : public Transport {
 public:
  explicit MockBackend(MockOptions options = {});

  HttpResponse post(const std::string& path, const std::string& body,
                    const BackendConfig& config) override;
  HttpResponse get(const std::string& path, const BackendConfig& config) override;

  // Answers a request as a server would, without failure injection.
  HttpResponse handle(const std::string& path, const std::string& body) const;

  std::vector<RecordedRequest> requests() const;
  std::size_t calls() const;

 private:
  MockOptions options_;
  mutable std::mutex mutex_;
  std::vector<RecordedRequest> requests_;
  std::size_t calls_ = 0;
};

// The first feature name listed in the most recent info-prompt message, or
// nullopt when there is none.
std::optional<std::string> top_feature_in(std::span<const prompt::ChatMessage> messages);

enum class FinishReason { kStop, kLength, kError };

std::string_view to_string(FinishReason reason);

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ChatResponse {
  std::string content;
  FinishReason finish_reason = FinishReason::kStop;
  Usage usage;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

class LlmClient {
 public:
  LlmClient(BackendConfig config, std::shared_ptr<Transport> transport,
            Sleeper sleeper = {});

  const BackendConfig& config() const { return config_; }

  // One chat completion. The messages are sent exactly as given.
  ChatResponse chat_complete(std::span<const prompt::ChatMessage> messages);

  // Per-token scores of target when it follows prompt, from an echoed
  // completion with logprobs. Tokens overlapping the target are kept; a
  // first token without a logprob (nothing precedes it) is skipped.
  std::vector<eval::TokenScore> score_tokens(const std::string& prompt,
                                             const std::string& target);

  // True when the backend answers GET /v1/models with 2xx.
  bool ping();

 private:
  HttpResponse send(const std::string& path, const nlohmann::json& body);

  BackendConfig config_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
};

// Excerpt of a payload for error messages.
std::string excerpt(std::string_view text, std::size_t max_chars = 200);

}  // namespace shapchat::llm

#endif  // SHAPCHAT_LLM_LLM_HPP_
