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
#include "shapchat/prompt/prompt.hpp"

#include <utility>

#include <fmt/format.h>

#include "shapchat/error.hpp"

namespace shapchat::prompt {

using nlohmann::json;
using nlohmann::ordered_json;

SystemPromptConfig battery_prompt_config() {
  return {
      "battery State of Health",
      {
          "General questions about rechargeable batteries and how their State "
          "of Health develops.",
          "Questions about SHAP values and how to read feature attributions.",
          "Questions about why the model predicted a particular State of "
          "Health for battery data the user uploaded.",
      },
      {
          "Answer clearly and concisely.",
          "When explaining a prediction, refer to the supplied feature values "
          "and SHAP values.",
          "If the supplied information does not answer the question, say so.",
      },
  };
}

std::string build_system_prompt(const SystemPromptConfig& config) {
  if (config.domain_name.empty()) {
    fail(ErrorKind::kInvalidArgument, "system prompt needs a domain name");
  }
  std::string out = fmt::format(
      "You are an assistant that helps users understand a machine learning "
      "model in the domain of {}. You answer domain questions and explain "
      "individual model predictions using the SHAP values supplied with the "
      "conversation.\n",
      config.domain_name);
  if (!config.expected_question_kinds.empty()) {
    out += "\nExpected questions:\n";
    for (const auto& kind : config.expected_question_kinds) {
      out += fmt::format("- {}\n", kind);
    }
  }
  if (!config.style_rules.empty()) {
    out += "\nAnswer style:\n";
    for (const auto& rule : config.style_rules) out += fmt::format("- {}\n", rule);
  }
  return out;
}

std::vector<FeatureLine> select_top_features(
    const shap::Explanation& explanation, const model::FeatureSchema& schema,
    std::size_t k) {
  if (k < 1) fail(ErrorKind::kInvalidArgument, "k must be at least 1");
  const auto& phi = explanation.shap_values;
  if (phi.size() != schema.size() ||
      explanation.feature_values.values.size() != schema.size()) {
    fail(ErrorKind::kSchemaMismatch, "explanation does not match the schema");
  }
  const auto order = shap::order_by_magnitude(phi);
  std::vector<FeatureLine> out;
  for (std::size_t r = 0; r < order.size() && r < k; ++r) {
    const std::size_t i = order[r];
    out.push_back({schema.feature(i).name, explanation.feature_values.values[i],
                   phi[i]});
  }
  return out;
}

std::string format_shap(double value) { return fmt::format("{:+.4f}", value); }

std::string format_prediction(double value) {
  return fmt::format("{:.4f}", value);
}

InfoPrompt build_info_prompt(const shap::Explanation& explanation,
                             const model::FeatureSchema& schema,
                             std::string description, std::size_t k) {
  InfoPrompt info;
  info.data_description = std::move(description);
  info.prediction = explanation.prediction;
  info.base_value = explanation.base_value;
  info.feature_lines = select_top_features(explanation, schema, k);

  std::string& text = info.rendered;
  text = std::string(kInfoPromptHeader) + "\n";
  if (!info.data_description.empty()) {
    text += fmt::format("Data description: {}\n", info.data_description);
  }
  text += fmt::format("Predicted {}: {}\n", schema.target_name(),
                      format_prediction(info.prediction));
  text += fmt::format("Base value (average prediction): {}\n",
                      format_prediction(info.base_value));
  text += fmt::format("Top {} features by absolute SHAP value:\n",
                      info.feature_lines.size());
  for (const FeatureLine& line : info.feature_lines) {
    text += fmt::format("- {} = {} (SHAP {})\n", line.name,
                        model::format_feature_value(line.value),
                        format_shap(line.shap));
  }
  return info;
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem:
      return "system";
    case Role::kUser:
      return "user";
    case Role::kAssistant:
      return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view text) {
  if (text == "system") return Role::kSystem;
  if (text == "user") return Role::kUser;
  if (text == "assistant") return Role::kAssistant;
  fail(ErrorKind::kInvalidArgument, fmt::format("unknown role '{}'", text));
}

ChatMessage ChatMessage::make(Role role, std::string content) {
  if (content.empty()) {
    fail(ErrorKind::kInvalidArgument, "message content must not be empty");
  }
  return ChatMessage{role, std::move(content)};
}

std::vector<ChatMessage> assemble_messages(std::string_view system_prompt,
                                           const InfoPrompt* info,
                                           std::span<const ChatMessage> history,
                                           std::string_view question) {
  if (question.empty()) fail(ErrorKind::kInvalidArgument, "question must not be empty");
  std::vector<ChatMessage> out;
  out.reserve(history.size() + 3);
  out.push_back(ChatMessage::make(Role::kSystem, std::string(system_prompt)));
  if (info != nullptr) out.push_back(ChatMessage::make(Role::kSystem, info->rendered));
  out.insert(out.end(), history.begin(), history.end());
  out.push_back(ChatMessage::make(Role::kUser, std::string(question)));
  return out;
}

json to_json(const ChatMessage& message) {
  return {{"role", std::string(to_string(message.role))},
          {"content", message.content}};
}

ChatMessage message_from_json(const json& j) {
  if (!j.is_object() || !j.contains("role") || !j.contains("content") ||
      !j["role"].is_string() || !j["content"].is_string()) {
    fail(ErrorKind::kFormat, "message needs string 'role' and 'content'");
  }
  return ChatMessage::make(role_from_string(j["role"].get<std::string>()),
                           j["content"].get<std::string>());
}

json to_json(std::span<const ChatMessage> messages) {
  json out = json::array();
  for (const auto& m : messages) out.push_back(to_json(m));
  return out;
}

std::string render_alpaca(const AlpacaRecord& record) {
  if (record.instruction.empty()) {
    fail(ErrorKind::kInvalidArgument, "alpaca instruction must not be empty");
  }
  ordered_json j;
  j["instruction"] = record.instruction;
  j["input"] = record.input;
  j["output"] = record.output;
  return j.dump();
}

AlpacaRecord parse_alpaca(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, fmt::format("alpaca record: {}", e.what()));
  }
  if (!j.is_object()) fail(ErrorKind::kFormat, "alpaca record must be a JSON object");
  AlpacaRecord record;
  for (const auto& [key, field] :
       {std::pair<const char*, std::string*>{"instruction", &record.instruction},
        {"input", &record.input},
        {"output", &record.output}}) {
    if (!j.contains(key)) {
      fail(ErrorKind::kFormat, fmt::format("alpaca record is missing key '{}'", key));
    }
    if (!j[key].is_string()) {
      fail(ErrorKind::kFormat, fmt::format("alpaca key '{}' must be a string", key));
    }
    *field = j[key].get<std::string>();
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "instruction" && key != "input" && key != "output") {
      fail(ErrorKind::kFormat, fmt::format("alpaca record has unexpected key '{}'", key));
    }
  }
  if (record.instruction.empty()) {
    fail(ErrorKind::kFormat, "alpaca key 'instruction' must not be empty");
  }
  return record;
}

std::string alpaca_prompt(const AlpacaRecord& record) {
  if (record.input.empty()) {
    return fmt::format(
        "Below is an instruction that describes a task. Write a response that "
        "appropriately completes the request.\n\n### Instruction:\n{}\n\n"
        "### Response:\n",
        record.instruction);
  }
  return fmt::format(
      "Below is an instruction that describes a task, paired with an input "
      "that provides further context. Write a response that appropriately "
      "completes the request.\n\n### Instruction:\n{}\n\n### Input:\n{}\n\n"
      "### Response:\n",
      record.instruction, record.input);
}

}  // namespace shapchat::prompt
