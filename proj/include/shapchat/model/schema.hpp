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
#ifndef SHAPCHAT_MODEL_SCHEMA_HPP_
#define SHAPCHAT_MODEL_SCHEMA_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace shapchat::model {

enum class FeatureKind { kNumeric, kCategorical };

std::string_view to_string(FeatureKind kind);

struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
  // Only meaningful for categorical features.
  std::vector<std::string> categories;

  friend bool operator==(const Feature&, const Feature&) = default;
};

// Ordered model inputs. The position of a feature is its index everywhere
// downstream (trees, SHAP vectors, prompts).
class FeatureSchema {
 public:
  FeatureSchema() = default;
  // Throws kInvalidArgument on empty or duplicate names, or on a categorical
  // feature without categories.
  FeatureSchema(std::vector<Feature> features, std::string target_name);

  std::size_t size() const { return features_.size(); }
  const std::vector<Feature>& features() const { return features_; }
  const Feature& feature(std::size_t i) const { return features_.at(i); }
  const std::string& target_name() const { return target_name_; }

  std::optional<std::size_t> index_of(std::string_view name) const;
  std::optional<std::size_t> category_index(std::size_t feature,
                                            std::string_view label) const;

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

 private:
  std::vector<Feature> features_;
  std::string target_name_;
};

// Real for numeric features, category label for categorical ones.
using FeatureValue = std::variant<double, std::string>;

struct DataRow {
  std::vector<FeatureValue> values;

  friend bool operator==(const DataRow&, const DataRow&) = default;
};

// Numeric values pass through; categorical labels become their category
// index. Throws kSchemaMismatch naming every offending field.
std::vector<double> encode_row(const FeatureSchema& schema, const DataRow& row);
DataRow decode_row(const FeatureSchema& schema, std::span<const double> encoded);

// Numbers with four decimals, categories verbatim.
std::string format_feature_value(const FeatureValue& value);

nlohmann::json schema_to_json(const FeatureSchema& schema);
FeatureSchema schema_from_json(const nlohmann::json& json);

nlohmann::json value_to_json(const FeatureValue& value);

// Rows serialize as {"feature_name": value, ...} in schema order.
nlohmann::json row_to_json(const FeatureSchema& schema, const DataRow& row);
// Accepts the object form above. Unknown, missing and ill-typed fields are all
// reported in one kSchemaMismatch error.
DataRow row_from_json(const FeatureSchema& schema, const nlohmann::json& json);

}  // namespace shapchat::model

#endif  // SHAPCHAT_MODEL_SCHEMA_HPP_
