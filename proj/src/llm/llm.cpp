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

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <utility>

#include <fmt/format.h>
#include <httplib.h>

#include "shapchat/error.hpp"

namespace shapchat::llm {

using nlohmann::json;

std::string excerpt(std::string_view text, std::size_t max_chars) {
  if (text.size() <= max_chars) return std::string(text);
  return std::string(text.substr(0, max_chars)) + "...";
}

void validate(const BackendConfig& config) {
  if (config.base_url.empty()) fail(ErrorKind::kInvalidArgument, "base_url must not be empty");
  if (config.model_name.empty()) {
    fail(ErrorKind::kInvalidArgument, "model_name must not be empty");
  }
  if (!(config.temperature >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "temperature must be >= 0");
  }
  if (config.max_tokens < 1) fail(ErrorKind::kInvalidArgument, "max_tokens must be >= 1");
  if (config.timeout_ms < 1) fail(ErrorKind::kInvalidArgument, "timeout_ms must be > 0");
  if (config.retries < 0) fail(ErrorKind::kInvalidArgument, "retries must be >= 0");
  if (config.backoff_ms < 0) fail(ErrorKind::kInvalidArgument, "backoff_ms must be >= 0");
}

BackendConfig apply_env(BackendConfig config) {
  if (const char* v = std::getenv("LLM_BASE_URL"); v && *v) config.base_url = v;
  if (const char* v = std::getenv("LLM_MODEL"); v && *v) config.model_name = v;
  if (const char* v = std::getenv("LLM_API_KEY"); v && *v) config.api_key = v;
  return config;
}

BackendConfig backend_config_from_json(const json& j, BackendConfig config) {
  if (!j.is_object()) fail(ErrorKind::kFormat, "backend config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "base_url") {
        config.base_url = value.get<std::string>();
      } else if (key == "model_name") {
        config.model_name = value.get<std::string>();
      } else if (key == "temperature") {
        config.temperature = value.get<double>();
      } else if (key == "max_tokens") {
        config.max_tokens = value.get<int>();
      } else if (key == "timeout_ms") {
        config.timeout_ms = value.get<int>();
      } else if (key == "retries") {
        config.retries = value.get<int>();
      } else if (key == "backoff_ms") {
        config.backoff_ms = value.get<int>();
      } else if (key == "api_key") {
        config.api_key = value.get<std::string>();
      } else {
        fail(ErrorKind::kFormat, fmt::format("unknown backend config key '{}'", key));
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("backend config: {}", e.what()));
  }
  validate(config);
  return config;
}

HttpTransport::HttpTransport(const std::string& base_url) {
  constexpr std::string_view kScheme = "http://";
  if (base_url.rfind(kScheme, 0) != 0) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("base_url '{}' must start with http:// (TLS is not supported)",
                     base_url));
  }
  const std::string rest = base_url.substr(kScheme.size());
  const std::size_t slash = rest.find('/');
  host_port_ = std::string(kScheme) + rest.substr(0, slash);
  if (slash != std::string::npos) prefix_ = rest.substr(slash);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  if (host_port_.size() == kScheme.size()) {
    fail(ErrorKind::kInvalidArgument, fmt::format("base_url '{}' has no host", base_url));
  }
}

namespace {

void configure(httplib::Client& client, const BackendConfig& config) {
  const auto timeout = std::chrono::milliseconds(config.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  if (!config.api_key.empty()) client.set_bearer_token_auth(config.api_key);
}

HttpResponse convert(const httplib::Result& result, const std::string& url) {
  if (!result) {
    fail(ErrorKind::kBackendUnreachable,
         fmt::format("{}: {}", url, httplib::to_string(result.error())));
  }
  return {result->status, result->body};
}

}  // namespace

HttpResponse HttpTransport::post(const std::string& path, const std::string& body,
                                 const BackendConfig& config) {
  httplib::Client client(host_port_);
  configure(client, config);
  return convert(client.Post(prefix_ + path, body, "application/json"),
                 host_port_ + prefix_ + path);
}

HttpResponse HttpTransport::get(const std::string& path, const BackendConfig& config) {
  httplib::Client client(host_port_);
  configure(client, config);
  return convert(client.Get(prefix_ + path), host_port_ + prefix_ + path);
}

std::optional<std::string> top_feature_in(std::span<const prompt::ChatMessage> messages) {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->content.rfind(prompt::kInfoPromptHeader, 0) != 0) continue;
    std::size_t pos = 0;
    while (pos < it->content.size()) {
      const std::size_t end = std::min(it->content.find('\n', pos), it->content.size());
      const std::string_view line(it->content.data() + pos, end - pos);
      if (line.rfind("- ", 0) == 0) {
        const std::size_t eq = line.find(" = ");
        if (eq != std::string_view::npos) return std::string(line.substr(2, eq - 2));
      }
      pos = end + 1;
    }
  }
  return std::nullopt;
}

namespace {

// Splits text into UTF-8 code points; invalid bytes are single tokens.
std::vector<std::string> character_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0) {
      len = 4;
    } else if (c >= 0xE0) {
      len = 3;
    } else if (c >= 0xC0) {
      len = 2;
    }
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

HttpResponse json_response(int status, const json& body) { return {status, body.dump()}; }

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", {{"message", message}, {"code", status}}}});
}

}  // namespace

MockBackend::MockBackend(MockOptions options) : options_(std::move(options)) {}

HttpResponse MockBackend::handle(const std::string& path, const std::string& body) const {
  json request;
  try {
    request = json::parse(body);
  } catch (const json::parse_error&) {
    return error_response(400, "request body is not JSON");
  }
  const std::string model = request.value("model", std::string("mock"));
  if (path == "/v1/chat/completions") {
    std::vector<prompt::ChatMessage> messages;
    try {
      for (const auto& m : request.at("messages")) messages.push_back(prompt::message_from_json(m));
    } catch (const std::exception& e) {
      return error_response(400, e.what());
    }
    if (messages.empty()) return error_response(400, "messages must not be empty");
    std::string content;
    if (options_.mode == MockMode::kEchoTopFeature) {
      const auto top = top_feature_in(messages);
      content = top ? fmt::format("The most influential feature is {}.", *top)
                    : std::string("No instance data is available.");
    } else {
      content = options_.fixed_reply;
    }
    std::size_t prompt_tokens = 0;
    for (const auto& m : messages) prompt_tokens += character_tokens(m.content).size();
    json reply = {
        {"id", "mock-completion"},
        {"object", "chat.completion"},
        {"model", model},
        {"choices",
         json::array({{{"index", 0},
                       {"message", {{"role", "assistant"}, {"content", content}}},
                       {"finish_reason", "stop"}}})},
        {"usage",
         {{"prompt_tokens", prompt_tokens},
          {"completion_tokens", character_tokens(content).size()}}}};
    return json_response(200, reply);
  }
  if (path == "/v1/completions") {
    if (!options_.token_logprob) return error_response(404, "no completions endpoint");
    if (!request.contains("prompt") || !request["prompt"].is_string()) {
      return error_response(400, "prompt must be a string");
    }
    const std::string text = request["prompt"].get<std::string>();
    json tokens = json::array(), logprobs = json::array(), offsets = json::array();
    std::size_t offset = 0;
    for (const std::string& t : character_tokens(text)) {
      tokens.push_back(t);
      // The first token has no context, as with real servers.
      logprobs.push_back(offset == 0 ? json(nullptr) : json(*options_.token_logprob));
      offsets.push_back(offset);
      offset += t.size();
    }
    json reply = {
        {"id", "mock-completion"},
        {"object", "text_completion"},
        {"model", model},
        {"choices",
         json::array({{{"index", 0},
                       {"text", text},
                       {"logprobs",
                        {{"tokens", tokens},
                         {"token_logprobs", logprobs},
                         {"text_offset", offsets}}},
                       {"finish_reason", "length"}}})}};
    return json_response(200, reply);
  }
  return error_response(404, fmt::format("unknown path {}", path));
}

HttpResponse MockBackend::post(const std::string& path, const std::string& body,
                               const BackendConfig&) {
  std::size_t call = 0;
  {
    std::lock_guard lock(mutex_);
    json parsed = json::parse(body, nullptr, false);
    requests_.push_back({path, std::move(parsed)});
    call = ++calls_;
  }
  if (options_.mode == MockMode::kFailAfterN &&
      call > static_cast<std::size_t>(std::max(0, options_.fail_after_n))) {
    if (options_.fail_status == 0) {
      fail(ErrorKind::kBackendUnreachable, "mock backend: connection refused");
    }
    return error_response(options_.fail_status, "mock backend failure");
  }
  return handle(path, body);
}

HttpResponse MockBackend::get(const std::string& path, const BackendConfig& config) {
  if (path == "/v1/models") {
    return json_response(
        200, {{"object", "list"}, {"data", json::array({{{"id", config.model_name}}})}});
  }
  return error_response(404, fmt::format("unknown path {}", path));
}

std::vector<RecordedRequest> MockBackend::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

std::size_t MockBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::string_view to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::kStop:
      return "stop";
    case FinishReason::kLength:
      return "length";
    case FinishReason::kError:
      return "error";
  }
  return "error";
}

LlmClient::LlmClient(BackendConfig config, std::shared_ptr<Transport> transport,
                     Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  validate(config_);
  if (!transport_) fail(ErrorKind::kInvalidArgument, "LLM client needs a transport");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

HttpResponse LlmClient::send(const std::string& path, const json& body) {
  const std::string payload = body.dump();
  std::string last_error;
  const int attempts = config_.retries + 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      sleeper_(std::chrono::milliseconds(static_cast<std::int64_t>(config_.backoff_ms)
                                         << std::min(attempt - 1, 20)));
    }
    try {
      HttpResponse response = transport_->post(path, payload, config_);
      // 501 means the endpoint does not exist; retrying will not help.
      if (response.status >= 500 && response.status != 501) {
        last_error = fmt::format("HTTP {}: {}", response.status, excerpt(response.body));
        continue;
      }
      return response;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kBackendUnreachable) throw;
      last_error = e.what();
    }
  }
  fail(ErrorKind::kBackendUnreachable,
       fmt::format("backend at {} failed after {} attempt(s): {}", config_.base_url,
                   attempts, last_error));
}

namespace {

json parse_body(const HttpResponse& response) {
  try {
    return json::parse(response.body);
  } catch (const json::parse_error&) {
    fail(ErrorKind::kProtocol,
         fmt::format("backend response is not JSON: {}", excerpt(response.body)));
  }
}

void reject_client_error(const HttpResponse& response) {
  if (response.status < 200 || response.status >= 300) {
    fail(ErrorKind::kBackendRejected,
         fmt::format("backend rejected the request (HTTP {}): {}", response.status,
                     excerpt(response.body)));
  }
}

}  // namespace

ChatResponse LlmClient::chat_complete(std::span<const prompt::ChatMessage> messages) {
  if (messages.empty()) fail(ErrorKind::kInvalidArgument, "chat needs at least one message");
  if (messages.front().role != prompt::Role::kSystem) {
    fail(ErrorKind::kInvalidArgument, "the first chat message must have the system role");
  }
  json body = {{"model", config_.model_name},
               {"messages", prompt::to_json(messages)},
               {"temperature", config_.temperature},
               {"max_tokens", config_.max_tokens}};
  const HttpResponse response = send("/v1/chat/completions", body);
  reject_client_error(response);
  const json j = parse_body(response);
  ChatResponse out;
  try {
    const json& choice = j.at("choices").at(0);
    const json& reason = choice.contains("finish_reason") ? choice["finish_reason"] : json();
    const std::string r = reason.is_string() ? reason.get<std::string>() : "stop";
    out.finish_reason = r == "length"                  ? FinishReason::kLength
                        : (r == "stop" || r == "eos") ? FinishReason::kStop
                                                      : FinishReason::kError;
    const json& content = choice.at("message").at("content");
    if (content.is_string()) {
      out.content = content.get<std::string>();
    } else if (out.finish_reason != FinishReason::kError) {
      fail(ErrorKind::kProtocol, "message content is not a string");
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      out.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
      out.usage.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kProtocol, fmt::format("unexpected chat response ({}): {}", e.what(),
                                           excerpt(response.body)));
  } catch (const Error& e) {
    fail(e.kind(), fmt::format("{}: {}", e.what(), excerpt(response.body)));
  }
  return out;
}

std::vector<eval::TokenScore> LlmClient::score_tokens(const std::string& prompt,
                                                      const std::string& target) {
  if (target.empty()) fail(ErrorKind::kInvalidArgument, "scoring target must not be empty");
  json body = {{"model", config_.model_name},
               {"prompt", prompt + target},
               {"max_tokens", 0},
               {"echo", true},
               {"logprobs", true}};
  const HttpResponse response = send("/v1/completions", body);
  constexpr std::string_view kHint =
      "use a scoring-capable backend that returns echoed token logprobs on "
      "/v1/completions";
  if (response.status == 404 || response.status == 405 || response.status == 501) {
    fail(ErrorKind::kCapability,
         fmt::format("backend has no completions endpoint (HTTP {}); {}", response.status,
                     kHint));
  }
  reject_client_error(response);
  const json j = parse_body(response);
  std::vector<eval::TokenScore> out;
  try {
    const json& choice = j.at("choices").at(0);
    if (!choice.contains("logprobs") || !choice["logprobs"].is_object()) {
      fail(ErrorKind::kCapability, fmt::format("backend returned no logprobs; {}", kHint));
    }
    const json& lp = choice["logprobs"];
    const auto& tokens = lp.at("tokens");
    const auto& values = lp.at("token_logprobs");
    const auto& offsets = lp.at("text_offset");
    if (tokens.size() != values.size() || tokens.size() != offsets.size()) {
      fail(ErrorKind::kProtocol, "logprob arrays have different lengths");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const std::string text = tokens[i].get<std::string>();
      const auto start = offsets[i].get<std::size_t>();
      if (start + text.size() <= prompt.size()) continue;
      if (start >= prompt.size() + target.size()) break;
      if (!values[i].is_number()) {
        // The first token of the text has no context to be scored against.
        if (i == 0 && values[i].is_null()) continue;
        fail(ErrorKind::kProtocol, fmt::format("no logprob for target token {}", i));
      }
      out.push_back({text, values[i].get<double>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kProtocol, fmt::format("unexpected completions response ({}): {}",
                                           e.what(), excerpt(response.body)));
  }
  if (out.empty()) {
    fail(ErrorKind::kProtocol,
         fmt::format("backend returned no tokens for the target: {}", excerpt(response.body)));
  }
  return out;
}

bool LlmClient::ping() {
  try {
    const HttpResponse response = transport_->get("/v1/models", config_);
    return response.status >= 200 && response.status < 300;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace shapchat::llm
