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

#ifndef SHAPCHAT_SERVICE_SERVICE_HPP_
#define SHAPCHAT_SERVICE_SERVICE_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapchat/error.hpp"
#include "shapchat/llm/llm.hpp"
#include "shapchat/model/tree_ensemble.hpp"
#include "shapchat/prompt/prompt.hpp"
#include "shapchat/shap/shap.hpp"

namespace httplib {
class Server;
}

namespace shapchat::service {

enum class Mode { kDomain, kInferential };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view text);

struct UploadResult {
  double prediction = 0.0;
  shap::Explanation explanation;
  shap::WaterfallData waterfall;
};

struct CachedInstance {
  model::DataRow row;
  shap::Explanation explanation;
  prompt::InfoPrompt info;
  shap::WaterfallData waterfall;
};

struct Session {
  std::string id;
  Mode mode = Mode::kDomain;
  std::string created_at;
  // Alternating user / assistant turns, starting with a user turn.
  std::vector<prompt::ChatMessage> history;
  std::optional<CachedInstance> cached;
};

struct ServiceOptions {
  std::size_t k = 20;
  std::size_t max_prompt_chars = 32000;
  std::size_t waterfall_max_display = 10;
  shap::ExplainOptions explain{
      .method = shap::ShapMethod::kKernel, .exact = {}, .kernel = {}};
  std::string data_description =
      "Usage and condition data of a single rechargeable battery.";
  prompt::SystemPromptConfig system = prompt::battery_prompt_config();
  // When set, every change is written to this JSON snapshot and sessions
  // are restored from it on construction.
  std::optional<std::filesystem::path> store_path;
};

// Session lifecycle and question answering. All methods may be called from
// several threads; operations on one session are serialized and at most one
// question per session is in flight.
class ChatService {
 public:
  ChatService(model::TreeEnsemble model, shap::BackgroundSet background,
              std::shared_ptr<llm::LlmClient> client, ServiceOptions options = {});
  ~ChatService();

  std::string create_session(Mode mode);
  // Explains the row, caches the info prompt, clears the history and
  // switches the session to inferential mode.
  UploadResult upload_instance(const std::string& id, const model::DataRow& row);
  UploadResult upload_instance(const std::string& id, const nlohmann::json& row);
  std::string ask(const std::string& id, const std::string& question);

  // Throws kNoContent before an upload.
  shap::WaterfallData get_explanation(const std::string& id) const;
  std::vector<prompt::ChatMessage> get_history(const std::string& id) const;
  Session get_session(const std::string& id) const;

  const model::TreeEnsemble& model() const { return model_; }
  bool backend_ok() const;

 private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& id) const;
  void persist() const;
  void restore();

  model::TreeEnsemble model_;
  shap::BackgroundSet background_;
  std::shared_ptr<llm::LlmClient> client_;
  ServiceOptions options_;
  std::string system_prompt_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  mutable std::mutex persist_mutex_;
};

nlohmann::json to_json(const UploadResult& result);

// HTTP status used for an error kind.
int http_status(ErrorKind kind);

// Registers the JSON API on server:
//   POST /api/sessions                  {mode} -> {session_id, prompt_version}
//   POST /api/sessions/{id}/instance    row -> UploadResult
//   POST /api/sessions/{id}/messages    {question} -> {answer}
//   GET  /api/sessions/{id}/explanation -> WaterfallData (204 before upload)
//   GET  /api/sessions/{id}/history     -> {session_id, mode, has_instance, messages}
//   GET  /healthz                       -> {status, model_loaded, backend_ok}
// Errors are answered as {"error": {"kind", "message"}}.
void mount_routes(httplib::Server& server, ChatService& service);

struct ServeConfig {
  std::filesystem::path model_path;
  std::filesystem::path background_path;
  std::string host = "127.0.0.1";
  int port = 8000;
  llm::BackendConfig backend;
  std::optional<std::filesystem::path> store_path;
  std::size_t k = 20;
  std::size_t max_prompt_chars = 32000;
  std::size_t background_rows = 100;
  std::uint64_t seed = 0;
};

// Reads a JSON config file: {"model", "background", "host", "port",
// "backend": {...}, "store", "k", "max_prompt_chars", "background_rows",
// "seed"}. Relative paths are resolved against the file's directory.
ServeConfig serve_config_from_json(const nlohmann::json& json,
                                   const std::filesystem::path& base_dir = {});
// SHAPCHAT_MODEL, SHAPCHAT_BACKGROUND, SHAPCHAT_PORT and the LLM_* variables.
ServeConfig apply_env(ServeConfig config);

}  // namespace shapchat::service

#endif  // SHAPCHAT_SERVICE_SERVICE_HPP_
