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
#include "shapchat/model/schema.hpp"

#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "shapchat/error.hpp"

namespace shapchat::model {

using nlohmann::json;

std::string_view to_string(FeatureKind kind) {
  return kind == FeatureKind::kNumeric ? "numeric" : "categorical";
}

FeatureSchema::FeatureSchema(std::vector<Feature> features,
                             std::string target_name)
    : features_(std::move(features)), target_name_(std::move(target_name)) {
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    const Feature& f = features_[i];
    if (f.name.empty()) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("feature {} has an empty name", i));
    }
    if (!seen.insert(f.name).second) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("duplicate feature name '{}'", f.name));
    }
    if (f.kind == FeatureKind::kCategorical) {
      if (f.categories.empty()) {
        fail(ErrorKind::kInvalidArgument,
             fmt::format("categorical feature '{}' has no categories", f.name));
      }
      std::set<std::string_view> labels;
      for (const auto& c : f.categories) {
        if (!labels.insert(c).second) {
          fail(ErrorKind::kInvalidArgument,
               fmt::format("feature '{}' lists category '{}' twice", f.name,
                           c));
        }
      }
    } else if (!f.categories.empty()) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("numeric feature '{}' must not list categories",
                       f.name));
    }
  }
}

std::optional<std::size_t> FeatureSchema::index_of(
    std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> FeatureSchema::category_index(
    std::size_t feature, std::string_view label) const {
  const auto& cats = features_.at(feature).categories;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (cats[i] == label) return i;
  }
  return std::nullopt;
}

std::vector<double> encode_row(const FeatureSchema& schema,
                               const DataRow& row) {
  if (row.values.size() != schema.size()) {
    fail(ErrorKind::kSchemaMismatch,
         fmt::format("row has {} values, schema has {} features",
                     row.values.size(), schema.size()));
  }
  std::vector<double> encoded(schema.size());
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const Feature& f = schema.feature(i);
    const FeatureValue& v = row.values[i];
    if (f.kind == FeatureKind::kNumeric) {
      const double* x = std::get_if<double>(&v);
      if (x == nullptr) {
        problems.push_back(fmt::format("{}: expected a number", f.name));
      } else if (!std::isfinite(*x)) {
        problems.push_back(fmt::format("{}: value is not finite", f.name));
      } else {
        encoded[i] = *x;
      }
    } else {
      const std::string* label = std::get_if<std::string>(&v);
      if (label == nullptr) {
        problems.push_back(fmt::format("{}: expected a category label", f.name));
        continue;
      }
      auto idx = schema.category_index(i, *label);
      if (!idx) {
        problems.push_back(fmt::format("{}: unknown category '{}'", f.name,
                                       *label));
      } else {
        encoded[i] = static_cast<double>(*idx);
      }
    }
  }
  if (!problems.empty()) {
    fail(ErrorKind::kSchemaMismatch,
         fmt::format("invalid row: {}", fmt::join(problems, "; ")));
  }
  return encoded;
}

DataRow decode_row(const FeatureSchema& schema,
                   std::span<const double> encoded) {
  if (encoded.size() != schema.size()) {
    fail(ErrorKind::kSchemaMismatch, "encoded row arity mismatch");
  }
  DataRow row;
  row.values.reserve(encoded.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const Feature& f = schema.feature(i);
    if (f.kind == FeatureKind::kNumeric) {
      row.values.emplace_back(encoded[i]);
    } else {
      row.values.emplace_back(
          f.categories.at(static_cast<std::size_t>(encoded[i])));
    }
  }
  return row;
}

std::string format_feature_value(const FeatureValue& value) {
  if (const double* x = std::get_if<double>(&value)) {
    return fmt::format("{:.4f}", *x);
  }
  return std::get<std::string>(value);
}

json schema_to_json(const FeatureSchema& schema) {
  json features = json::array();
  for (const Feature& f : schema.features()) {
    json entry = {{"name", f.name}, {"kind", std::string(to_string(f.kind))}};
    if (f.kind == FeatureKind::kCategorical) entry["categories"] = f.categories;
    features.push_back(std::move(entry));
  }
  return {{"features", std::move(features)},
          {"target_name", schema.target_name()}};
}

namespace {

void require_keys(const json& obj, std::string_view path,
                  std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) {
    fail(ErrorKind::kFormat, fmt::format("{}: expected an object", path));
  }
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) {
      fail(ErrorKind::kFormat,
           fmt::format("{}.{}: unknown field", path, key));
    }
  }
}

}  // namespace

FeatureSchema schema_from_json(const json& j) {
  require_keys(j, "schema", {"features", "target_name"});
  if (!j.contains("features") || !j["features"].is_array()) {
    fail(ErrorKind::kFormat, "schema.features: expected an array");
  }
  std::vector<Feature> features;
  for (std::size_t i = 0; i < j["features"].size(); ++i) {
    const json& e = j["features"][i];
    const std::string path = fmt::format("schema.features[{}]", i);
    require_keys(e, path, {"name", "kind", "categories"});
    if (!e.contains("name") || !e["name"].is_string()) {
      fail(ErrorKind::kFormat, path + ".name: expected a string");
    }
    Feature f;
    f.name = e["name"].get<std::string>();
    const std::string kind = e.value("kind", std::string("numeric"));
    if (kind == "numeric") {
      f.kind = FeatureKind::kNumeric;
    } else if (kind == "categorical") {
      f.kind = FeatureKind::kCategorical;
    } else {
      fail(ErrorKind::kFormat,
           fmt::format("{}.kind: unknown kind '{}'", path, kind));
    }
    if (e.contains("categories")) {
      if (!e["categories"].is_array()) {
        fail(ErrorKind::kFormat, path + ".categories: expected an array");
      }
      for (const json& c : e["categories"]) {
        if (!c.is_string()) {
          fail(ErrorKind::kFormat, path + ".categories: expected strings");
        }
        f.categories.push_back(c.get<std::string>());
      }
    }
    features.push_back(std::move(f));
  }
  std::string target = "target";
  if (j.contains("target_name")) {
    if (!j["target_name"].is_string()) {
      fail(ErrorKind::kFormat, "schema.target_name: expected a string");
    }
    target = j["target_name"].get<std::string>();
  }
  try {
    return FeatureSchema(std::move(features), std::move(target));
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, fmt::format("schema: {}", e.what()));
  }
}

json value_to_json(const FeatureValue& value) {
  if (const double* x = std::get_if<double>(&value)) return *x;
  return std::get<std::string>(value);
}

json row_to_json(const FeatureSchema& schema, const DataRow& row) {
  json out = json::object();
  for (std::size_t i = 0; i < schema.size() && i < row.values.size(); ++i) {
    out[schema.feature(i).name] = value_to_json(row.values[i]);
  }
  return out;
}

DataRow row_from_json(const FeatureSchema& schema, const json& j) {
  if (!j.is_object()) {
    fail(ErrorKind::kSchemaMismatch,
         "row must be a JSON object keyed by feature name");
  }
  std::vector<std::string> problems;
  for (const auto& [key, _] : j.items()) {
    if (!schema.index_of(key)) {
      problems.push_back(fmt::format("{}: unknown feature", key));
    }
  }
  DataRow row;
  row.values.resize(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const Feature& f = schema.feature(i);
    auto it = j.find(f.name);
    if (it == j.end() || it->is_null()) {
      problems.push_back(fmt::format("{}: missing value", f.name));
      continue;
    }
    if (f.kind == FeatureKind::kNumeric) {
      if (!it->is_number()) {
        problems.push_back(fmt::format("{}: expected a number", f.name));
        continue;
      }
      row.values[i] = it->get<double>();
    } else {
      if (!it->is_string()) {
        problems.push_back(fmt::format("{}: expected a category label", f.name));
        continue;
      }
      row.values[i] = it->get<std::string>();
    }
  }
  if (!problems.empty()) {
    fail(ErrorKind::kSchemaMismatch,
         fmt::format("invalid row: {}", fmt::join(problems, "; ")));
  }
  // Category membership and finiteness.
  encode_row(schema, row);
  return row;
}

}  // namespace shapchat::model
