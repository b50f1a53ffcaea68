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
#ifndef SHAPCHAT_PROMPT_PROMPT_HPP_
#define SHAPCHAT_PROMPT_PROMPT_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapchat/model/schema.hpp"
#include "shapchat/shap/shap.hpp"

namespace shapchat::prompt {

// Bumped whenever any template text below changes.
inline constexpr std::string_view kPromptVersion = "shapchat-prompts-v1";

struct SystemPromptConfig {
  std::string domain_name;
  std::vector<std::string> expected_question_kinds;
  std::vector<std::string> style_rules;
};

SystemPromptConfig battery_prompt_config();

// Sections without entries are left out entirely.
std::string build_system_prompt(const SystemPromptConfig& config);

struct FeatureLine {
  std::string name;
  model::FeatureValue value;
  double shap = 0.0;

  friend bool operator==(const FeatureLine&, const FeatureLine&) = default;
};

// min(k, d) entries by |shap| descending, ties to the lower feature index.
std::vector<FeatureLine> select_top_features(
    const shap::Explanation& explanation, const model::FeatureSchema& schema,
    std::size_t k);

struct InfoPrompt {
  std::string data_description;
  double prediction = 0.0;
  double base_value = 0.0;
  std::vector<FeatureLine> feature_lines;
  std::string rendered;
};

// First line of every rendered info prompt.
inline constexpr std::string_view kInfoPromptHeader =
    "Context for the current model prediction:";

InfoPrompt build_info_prompt(const shap::Explanation& explanation,
                             const model::FeatureSchema& schema,
                             std::string description, std::size_t k = 20);

// "+0.0123" / "-0.0123"
std::string format_shap(double value);
// "0.8731"
std::string format_prediction(double value);

enum class Role { kSystem, kUser, kAssistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;

  // Throws kInvalidArgument on empty content.
  static ChatMessage make(Role role, std::string content);

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

// [system] ++ [info as a system message, if any] ++ history ++ [question].
std::vector<ChatMessage> assemble_messages(std::string_view system_prompt,
                                           const InfoPrompt* info,
                                           std::span<const ChatMessage> history,
                                           std::string_view question);

nlohmann::json to_json(const ChatMessage& message);
ChatMessage message_from_json(const nlohmann::json& json);
nlohmann::json to_json(std::span<const ChatMessage> messages);

struct AlpacaRecord {
  std::string instruction;
  std::string input;
  std::string output;

  friend bool operator==(const AlpacaRecord&, const AlpacaRecord&) = default;
};

// One line of JSON with exactly the keys instruction, input, output.
std::string render_alpaca(const AlpacaRecord& record);
// Rejects missing or extra keys, naming the key.
AlpacaRecord parse_alpaca(std::string_view text);

// Standard Alpaca prompt preceding the response; used when scoring outputs.
std::string alpaca_prompt(const AlpacaRecord& record);

}  // namespace shapchat::prompt

#endif  // SHAPCHAT_PROMPT_PROMPT_HPP_
