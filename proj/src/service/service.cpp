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


#include "shapchat/service/service.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>
#include <utility>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <httplib.h>

#include "shapchat/model/data_table.hpp"

namespace shapchat::service {

namespace fs = std::filesystem;
using nlohmann::json;
using prompt::ChatMessage;
using prompt::Role;

std::string_view to_string(Mode mode) {
  return mode == Mode::kDomain ? "domain" : "inferential";
}

Mode mode_from_string(std::string_view text) {
  if (text == "domain") return Mode::kDomain;
  if (text == "inferential") return Mode::kInferential;
  fail(ErrorKind::kInvalidArgument,
       fmt::format("unknown mode '{}' (expected domain or inferential)", text));
}

struct ChatService::Entry {
  std::mutex mutex;
  Session session;
  bool busy = false;
};

namespace {

std::string new_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 engine{std::random_device{}()};
  std::lock_guard lock(mutex);
  return fmt::format("{:016x}{:016x}", engine(), engine());
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now));
}

std::size_t prompt_chars(const std::vector<ChatMessage>& messages) {
  std::size_t n = 0;
  for (const ChatMessage& m : messages) n += m.content.size();
  return n;
}

}  // namespace

ChatService::ChatService(model::TreeEnsemble model, shap::BackgroundSet background,
                         std::shared_ptr<llm::LlmClient> client, ServiceOptions options)
    : model_(std::move(model)),
      background_(std::move(background)),
      client_(std::move(client)),
      options_(std::move(options)),
      system_prompt_(prompt::build_system_prompt(options_.system)) {
  if (!client_) fail(ErrorKind::kInvalidArgument, "chat service needs an LLM client");
  if (background_.encoded().front().size() != model_.schema().size()) {
    fail(ErrorKind::kSchemaMismatch, "background set does not match the model schema");
  }
  if (options_.k < 1) fail(ErrorKind::kInvalidArgument, "k must be at least 1");
  if (options_.store_path && fs::exists(*options_.store_path)) restore();
}

ChatService::~ChatService() = default;

std::shared_ptr<ChatService::Entry> ChatService::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorKind::kNotFound, fmt::format("no session '{}'", id));
  return it->second;
}

std::string ChatService::create_session(Mode mode) {
  auto entry = std::make_shared<Entry>();
  entry->session.mode = mode;
  entry->session.created_at = utc_now();
  std::string id;
  {
    std::lock_guard lock(mutex_);
    do {
      id = new_session_id();
    } while (sessions_.contains(id));
    entry->session.id = id;
    sessions_.emplace(id, std::move(entry));
  }
  persist();
  return id;
}

UploadResult ChatService::upload_instance(const std::string& id, const model::DataRow& row) {
  const auto entry = find(id);
  const model::FeatureSchema& schema = model_.schema();
  model::encode_row(schema, row);
  UploadResult result;
  {
    std::lock_guard lock(entry->mutex);
    if (entry->busy) {
      fail(ErrorKind::kConflict, "a question is in flight for this session");
    }
    CachedInstance cached;
    cached.row = row;
    cached.explanation = shap::explain(model_, row, background_, options_.explain);
    cached.info = prompt::build_info_prompt(cached.explanation, schema,
                                            options_.data_description, options_.k);
    cached.waterfall =
        shap::waterfall_data(cached.explanation, schema, options_.waterfall_max_display);
    result = {cached.explanation.prediction, cached.explanation, cached.waterfall};
    Session& s = entry->session;
    s.cached = std::move(cached);
    s.history.clear();
    s.mode = Mode::kInferential;
  }
  persist();
  return result;
}

UploadResult ChatService::upload_instance(const std::string& id, const json& row) {
  find(id);
  return upload_instance(id, model::row_from_json(model_.schema(), row));
}

std::string ChatService::ask(const std::string& id, const std::string& question) {
  if (question.find_first_not_of(" \t\r\n") == std::string::npos) {
    fail(ErrorKind::kInvalidArgument, "question must not be empty");
  }
  const auto entry = find(id);
  std::vector<ChatMessage> messages;
  {
    std::lock_guard lock(entry->mutex);
    if (entry->busy) fail(ErrorKind::kConflict, "a question is already in flight");
    const Session& s = entry->session;
    if (s.mode == Mode::kInferential && !s.cached) {
      fail(ErrorKind::kPrecondition, "upload data first");
    }
    messages = prompt::assemble_messages(system_prompt_, s.cached ? &s.cached->info : nullptr,
                                         s.history, question);
    const std::size_t chars = prompt_chars(messages);
    if (chars > options_.max_prompt_chars) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("prompt has {} characters, above the limit of {}", chars,
                       options_.max_prompt_chars));
    }
    entry->busy = true;
  }
  struct Release {
    Entry& entry;
    ~Release() {
      std::lock_guard lock(entry.mutex);
      entry.busy = false;
    }
  } release{*entry};

  const llm::ChatResponse response = client_->chat_complete(messages);
  if (response.content.empty()) {
    fail(ErrorKind::kProtocol,
         fmt::format("backend returned an empty answer (finish reason {})",
                     llm::to_string(response.finish_reason)));
  }
  {
    std::lock_guard lock(entry->mutex);
    entry->session.history.push_back(messages.back());
    entry->session.history.push_back(ChatMessage::make(Role::kAssistant, response.content));
  }
  persist();
  return response.content;
}

shap::WaterfallData ChatService::get_explanation(const std::string& id) const {
  const auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  if (!entry->session.cached) fail(ErrorKind::kNoContent, "no data uploaded yet");
  return entry->session.cached->waterfall;
}

std::vector<ChatMessage> ChatService::get_history(const std::string& id) const {
  const auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  return entry->session.history;
}

Session ChatService::get_session(const std::string& id) const {
  const auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  return entry->session;
}

bool ChatService::backend_ok() const { return client_->ping(); }

void ChatService::persist() const {
  if (!options_.store_path) return;
  std::lock_guard persist_lock(persist_mutex_);
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [_, e] : sessions_) entries.push_back(e);
  }
  json sessions = json::array();
  for (const auto& e : entries) {
    std::lock_guard lock(e->mutex);
    const Session& s = e->session;
    json item = {{"id", s.id},
                 {"mode", std::string(to_string(s.mode))},
                 {"created_at", s.created_at},
                 {"history", prompt::to_json(s.history)}};
    if (s.cached) {
      item["cached"] = {{"row", model::row_to_json(model_.schema(), s.cached->row)},
                        {"explanation", shap::to_json(s.cached->explanation)}};
    }
    sessions.push_back(std::move(item));
  }
  const json doc = {{"format_version", 1}, {"sessions", std::move(sessions)}};
  const fs::path& path = *options_.store_path;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << doc.dump() << '\n';
    if (!out) fail(ErrorKind::kIo, fmt::format("cannot write {}", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, fmt::format("cannot replace {}: {}", path.string(), ec.message()));
}

void ChatService::restore() {
  const fs::path& path = *options_.store_path;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, fmt::format("cannot read {}", path.string()));
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const model::FeatureSchema& schema = model_.schema();
  try {
    const json doc = json::parse(text);
    if (doc.at("format_version").get<int>() != 1) {
      fail(ErrorKind::kFormat, "unsupported session store version");
    }
    for (const json& item : doc.at("sessions")) {
      auto entry = std::make_shared<Entry>();
      Session& s = entry->session;
      s.id = item.at("id").get<std::string>();
      s.mode = mode_from_string(item.at("mode").get<std::string>());
      s.created_at = item.at("created_at").get<std::string>();
      for (const json& m : item.at("history")) s.history.push_back(prompt::message_from_json(m));
      if (item.contains("cached")) {
        CachedInstance cached;
        cached.row = model::row_from_json(schema, item["cached"].at("row"));
        cached.explanation = shap::explanation_from_json(schema, item["cached"].at("explanation"));
        cached.info = prompt::build_info_prompt(cached.explanation, schema,
                                                options_.data_description, options_.k);
        cached.waterfall = shap::waterfall_data(cached.explanation, schema,
                                                options_.waterfall_max_display);
        s.cached = std::move(cached);
      }
      sessions_.emplace(s.id, std::move(entry));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("{}: {}", path.string(), e.what()));
  } catch (const Error& e) {
    fail(e.kind(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

json to_json(const UploadResult& result) {
  return {{"prediction", result.prediction},
          {"explanation", shap::to_json(result.explanation)},
          {"waterfall", shap::to_json(result.waterfall)},
          {"prompt_version", std::string(prompt::kPromptVersion)}};
}

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kFormat:
      return 400;
    case ErrorKind::kSchemaMismatch:
      return 422;
    case ErrorKind::kPrecondition:
    case ErrorKind::kConflict:
      return 409;
    case ErrorKind::kNotFound:
      return 404;
    case ErrorKind::kNoContent:
      return 204;
    case ErrorKind::kBackendUnreachable:
    case ErrorKind::kBackendRejected:
    case ErrorKind::kProtocol:
      return 502;
    case ErrorKind::kCapability:
      return 501;
    case ErrorKind::kIo:
      return 500;
  }
  return 500;
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorKind kind, const std::string& message) {
  const int status = http_status(kind);
  if (status == 204) {
    res.status = 204;
    return;
  }
  send_json(res, status,
            {{"error", {{"kind", std::string(to_string(kind))}, {"message", message}}}});
}

json parse_request(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, fmt::format("request body is not JSON: {}", e.what()));
  }
}

std::string string_field(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body[key].is_string()) {
    fail(ErrorKind::kInvalidArgument, fmt::format("request needs a string field '{}'", key));
  }
  return body[key].get<std::string>();
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, e.kind(), e.what());
    } catch (const json::exception& e) {
      send_error(res, ErrorKind::kFormat, e.what());
    } catch (const std::exception& e) {
      send_error(res, ErrorKind::kIo, e.what());
    }
  };
}

}  // namespace

void mount_routes(httplib::Server& server, ChatService& service) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Post("/api/sessions", guarded([&service](const httplib::Request& req,
                                                  httplib::Response& res) {
    const json body = parse_request(req);
    const Mode mode = mode_from_string(string_field(body, "mode"));
    const std::string id = service.create_session(mode);
    send_json(res, 201,
              {{"session_id", id},
               {"mode", std::string(to_string(mode))},
               {"prompt_version", std::string(prompt::kPromptVersion)}});
  }));
  server.Post(R"(/api/sessions/([^/]+)/instance)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const UploadResult result =
                    service.upload_instance(req.matches[1].str(), parse_request(req));
                send_json(res, 200, to_json(result));
              }));
  server.Post(R"(/api/sessions/([^/]+)/messages)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_request(req);
                const std::string answer =
                    service.ask(req.matches[1].str(), string_field(body, "question"));
                send_json(res, 200, {{"answer", answer}});
              }));
  server.Get(R"(/api/sessions/([^/]+)/explanation)",
             guarded([&service](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, shap::to_json(service.get_explanation(req.matches[1].str())));
             }));
  server.Get(R"(/api/sessions/([^/]+)/history)",
             guarded([&service](const httplib::Request& req, httplib::Response& res) {
               const Session s = service.get_session(req.matches[1].str());
               send_json(res, 200,
                         {{"session_id", s.id},
                          {"mode", std::string(to_string(s.mode))},
                          {"has_instance", s.cached.has_value()},
                          {"messages", prompt::to_json(s.history)}});
             }));
  server.Get("/healthz", guarded([&service](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200,
                         {{"status", "ok"},
                          {"model_loaded", true},
                          {"backend_ok", service.backend_ok()},
                          {"prompt_version", std::string(prompt::kPromptVersion)}});
             }));
}

ServeConfig serve_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) fail(ErrorKind::kFormat, "serve config must be a JSON object");
  ServeConfig config;
  const auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "model") {
        config.model_path = resolve(value.get<std::string>());
      } else if (key == "background") {
        config.background_path = resolve(value.get<std::string>());
      } else if (key == "host") {
        config.host = value.get<std::string>();
      } else if (key == "port") {
        config.port = value.get<int>();
      } else if (key == "backend") {
        config.backend = llm::backend_config_from_json(value, config.backend);
      } else if (key == "store") {
        config.store_path = resolve(value.get<std::string>());
      } else if (key == "k") {
        config.k = value.get<std::size_t>();
      } else if (key == "max_prompt_chars") {
        config.max_prompt_chars = value.get<std::size_t>();
      } else if (key == "background_rows") {
        config.background_rows = value.get<std::size_t>();
      } else if (key == "seed") {
        config.seed = value.get<std::uint64_t>();
      } else {
        fail(ErrorKind::kFormat, fmt::format("unknown serve config key '{}'", key));
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("serve config: {}", e.what()));
  }
  if (config.port < 0 || config.port > 65535) {
    fail(ErrorKind::kInvalidArgument, fmt::format("port {} is out of range", config.port));
  }
  return config;
}

ServeConfig apply_env(ServeConfig config) {
  if (const char* v = std::getenv("SHAPCHAT_MODEL"); v && *v) config.model_path = v;
  if (const char* v = std::getenv("SHAPCHAT_BACKGROUND"); v && *v) config.background_path = v;
  if (const char* v = std::getenv("SHAPCHAT_PORT"); v && *v) {
    try {
      config.port = std::stoi(v);
    } catch (const std::exception&) {
      fail(ErrorKind::kInvalidArgument, fmt::format("SHAPCHAT_PORT '{}' is not a number", v));
    }
  }
  config.backend = llm::apply_env(config.backend);
  return config;
}

}  // namespace shapchat::service
