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
#include "shapchat/model/tree_ensemble.hpp"

#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "shapchat/error.hpp"

namespace shapchat::model {

using nlohmann::json;
using nlohmann::ordered_json;

TreeNode TreeNode::leaf(double value) {
  TreeNode n;
  n.value = value;
  return n;
}

TreeNode TreeNode::numeric_split(int feature, double threshold, int left,
                                 int right) {
  TreeNode n;
  n.feature = feature;
  n.threshold = threshold;
  n.left = left;
  n.right = right;
  return n;
}

TreeNode TreeNode::categorical_split(int feature,
                                     std::vector<std::string> categories,
                                     int left, int right) {
  TreeNode n;
  n.feature = feature;
  n.categorical = true;
  n.categories = std::move(categories);
  n.left = left;
  n.right = right;
  return n;
}

TreeEnsemble::TreeEnsemble(FeatureSchema schema, double base_score,
                           std::vector<Tree> trees,
                           std::map<std::string, std::string> metadata)
    : schema_(std::move(schema)),
      base_score_(base_score),
      trees_(std::move(trees)),
      metadata_(std::move(metadata)) {
  if (!std::isfinite(base_score_)) {
    fail(ErrorKind::kFormat, "base_score is not finite");
  }
  compile();
}

void TreeEnsemble::compile() {
  const int d = static_cast<int>(schema_.size());
  compiled_.clear();
  compiled_.reserve(trees_.size());
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    const Tree& tree = trees_[t];
    if (tree.empty()) {
      fail(ErrorKind::kFormat, fmt::format("trees[{}]: tree has no nodes", t));
    }
    const int size = static_cast<int>(tree.size());
    std::vector<int> parents(tree.size(), 0);
    std::vector<CompiledNode> nodes;
    nodes.reserve(tree.size());
    for (int i = 0; i < size; ++i) {
      const TreeNode& n = tree[static_cast<std::size_t>(i)];
      const std::string where = fmt::format("trees[{}][{}]", t, i);
      if (n.is_leaf()) {
        if (!std::isfinite(n.value)) {
          fail(ErrorKind::kFormat, where + ": leaf value is not finite");
        }
        nodes.push_back({-1, 0.0, {}, -1, -1, n.value});
        continue;
      }
      if (n.feature >= d) {
        fail(ErrorKind::kSchemaMismatch,
             fmt::format("{}: feature index {} out of range for {} features",
                         where, n.feature, d));
      }
      for (int child : {n.left, n.right}) {
        if (child <= i || child >= size) {
          fail(ErrorKind::kFormat,
               fmt::format("{}: child index {} out of range (must be in "
                           "({}, {}))",
                           where, child, i, size));
        }
        ++parents[static_cast<std::size_t>(child)];
      }
      if (n.left == n.right) {
        fail(ErrorKind::kFormat, where + ": left and right are the same node");
      }
      const Feature& f = schema_.feature(static_cast<std::size_t>(n.feature));
      CompiledNode c{n.feature, n.threshold, {}, n.left, n.right, 0.0};
      if (f.kind == FeatureKind::kCategorical) {
        if (!n.categorical) {
          fail(ErrorKind::kSchemaMismatch,
               fmt::format("{}: threshold split on categorical feature '{}'",
                           where, f.name));
        }
        c.goes_left.assign(f.categories.size(), 0);
        for (const std::string& label : n.categories) {
          auto idx =
              schema_.category_index(static_cast<std::size_t>(n.feature), label);
          if (!idx) {
            fail(ErrorKind::kSchemaMismatch,
                 fmt::format("{}: '{}' is not a category of '{}'", where, label,
                             f.name));
          }
          c.goes_left[*idx] = 1;
        }
      } else {
        if (n.categorical) {
          fail(ErrorKind::kSchemaMismatch,
               fmt::format("{}: category split on numeric feature '{}'", where,
                           f.name));
        }
        if (!std::isfinite(n.threshold)) {
          fail(ErrorKind::kFormat, where + ": threshold is not finite");
        }
      }
      nodes.push_back(std::move(c));
    }
    for (int i = 1; i < size; ++i) {
      if (parents[static_cast<std::size_t>(i)] != 1) {
        fail(ErrorKind::kFormat,
             fmt::format("trees[{}][{}]: node has {} parents, expected 1", t, i,
                         parents[static_cast<std::size_t>(i)]));
      }
    }
    compiled_.push_back(std::move(nodes));
  }
}

double TreeEnsemble::tree_output(std::size_t tree,
                                 std::span<const double> encoded) const {
  const auto& nodes = compiled_[tree];
  const CompiledNode* n = &nodes[0];
  while (n->feature >= 0) {
    const double x = encoded[static_cast<std::size_t>(n->feature)];
    bool left;
    if (n->goes_left.empty()) {
      left = x <= n->threshold;
    } else {
      left = n->goes_left[static_cast<std::size_t>(x)] != 0;
    }
    n = &nodes[static_cast<std::size_t>(left ? n->left : n->right)];
  }
  return n->value;
}

double TreeEnsemble::predict_encoded(std::span<const double> encoded) const {
  double sum = base_score_;
  for (std::size_t t = 0; t < compiled_.size(); ++t) {
    sum += tree_output(t, encoded);
  }
  return sum;
}

double TreeEnsemble::predict(const DataRow& row) const {
  const std::vector<double> encoded = encode_row(schema_, row);
  return predict_encoded(encoded);
}

TreeEnsemble TreeEnsemble::prefix(std::size_t n) const {
  n = std::min(n, trees_.size());
  return TreeEnsemble(schema_, base_score_,
                      std::vector<Tree>(trees_.begin(),
                                        trees_.begin() +
                                            static_cast<std::ptrdiff_t>(n)),
                      metadata_);
}

std::vector<bool> TreeEnsemble::used_features() const {
  std::vector<bool> used(schema_.size(), false);
  for (const Tree& tree : trees_) {
    for (const TreeNode& n : tree) {
      if (!n.is_leaf()) used[static_cast<std::size_t>(n.feature)] = true;
    }
  }
  return used;
}

namespace {

[[noreturn]] void format_error(const std::string& path,
                               const std::string& what) {
  fail(ErrorKind::kFormat, fmt::format("{}: {}", path, what));
}

void reject_unknown(const json& obj, const std::string& path,
                    std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) format_error(path + "." + key, "unknown field");
  }
}

int get_index(const json& node, const char* key, const std::string& path) {
  if (!node.contains(key)) format_error(path, std::string("missing '") + key + "'");
  const json& v = node[key];
  if (!v.is_number_integer()) format_error(path + "." + key, "expected an integer");
  return v.get<int>();
}

double get_real(const json& node, const char* key, const std::string& path) {
  if (!node.contains(key)) format_error(path, std::string("missing '") + key + "'");
  const json& v = node[key];
  if (!v.is_number()) format_error(path + "." + key, "expected a number");
  return v.get<double>();
}

TreeNode parse_node(const json& j, const std::string& path) {
  if (!j.is_object()) format_error(path, "expected an object");
  if (j.contains("leaf")) {
    reject_unknown(j, path, {"leaf"});
    return TreeNode::leaf(get_real(j, "leaf", path));
  }
  if (!j.contains("feature")) format_error(path, "node needs 'leaf' or 'feature'");
  const int feature = get_index(j, "feature", path);
  if (feature < 0) format_error(path + ".feature", "must be non-negative");
  const int left = get_index(j, "left", path);
  const int right = get_index(j, "right", path);
  if (j.contains("categories")) {
    reject_unknown(j, path, {"feature", "categories", "left", "right"});
    const json& cats = j["categories"];
    if (!cats.is_array()) format_error(path + ".categories", "expected an array");
    std::vector<std::string> labels;
    for (const json& c : cats) {
      if (!c.is_string()) format_error(path + ".categories", "expected strings");
      labels.push_back(c.get<std::string>());
    }
    return TreeNode::categorical_split(feature, std::move(labels), left, right);
  }
  reject_unknown(j, path, {"feature", "threshold", "left", "right"});
  return TreeNode::numeric_split(feature, get_real(j, "threshold", path), left,
                                 right);
}

}  // namespace

TreeEnsemble load_ensemble(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, fmt::format("model document: {}", e.what()));
  }
  if (!doc.is_object()) format_error("$", "expected an object");
  reject_unknown(doc, "$",
                 {"format_version", "schema", "base_score", "trees", "metadata"});
  if (!doc.contains("format_version") || doc["format_version"] != 1) {
    format_error("$.format_version", "expected 1");
  }
  if (!doc.contains("schema")) format_error("$", "missing 'schema'");
  FeatureSchema schema = schema_from_json(doc["schema"]);
  const double base = get_real(doc, "base_score", "$");

  std::vector<Tree> trees;
  if (doc.contains("trees")) {
    const json& jt = doc["trees"];
    if (!jt.is_array()) format_error("$.trees", "expected an array");
    for (std::size_t t = 0; t < jt.size(); ++t) {
      const std::string tpath = fmt::format("trees[{}]", t);
      if (!jt[t].is_array()) format_error(tpath, "expected an array of nodes");
      Tree tree;
      for (std::size_t n = 0; n < jt[t].size(); ++n) {
        tree.push_back(parse_node(jt[t][n], fmt::format("{}[{}]", tpath, n)));
      }
      trees.push_back(std::move(tree));
    }
  }

  std::map<std::string, std::string> metadata;
  if (doc.contains("metadata")) {
    const json& jm = doc["metadata"];
    if (!jm.is_object()) format_error("$.metadata", "expected an object");
    for (const auto& [key, value] : jm.items()) {
      if (!value.is_string()) {
        format_error("$.metadata." + key, "expected a string");
      }
      metadata[key] = value.get<std::string>();
    }
  }
  return TreeEnsemble(std::move(schema), base, std::move(trees),
                      std::move(metadata));
}

std::string save_ensemble(const TreeEnsemble& model) {
  ordered_json doc;
  doc["format_version"] = 1;
  ordered_json schema;
  ordered_json features = ordered_json::array();
  for (const Feature& f : model.schema().features()) {
    ordered_json e;
    e["name"] = f.name;
    e["kind"] = std::string(to_string(f.kind));
    if (f.kind == FeatureKind::kCategorical) e["categories"] = f.categories;
    features.push_back(std::move(e));
  }
  schema["features"] = std::move(features);
  schema["target_name"] = model.schema().target_name();
  doc["schema"] = std::move(schema);
  doc["base_score"] = model.base_score();
  ordered_json trees = ordered_json::array();
  for (const Tree& tree : model.trees()) {
    ordered_json nodes = ordered_json::array();
    for (const TreeNode& n : tree) {
      ordered_json e;
      if (n.is_leaf()) {
        e["leaf"] = n.value;
      } else {
        e["feature"] = n.feature;
        if (n.categorical) {
          e["categories"] = n.categories;
        } else {
          e["threshold"] = n.threshold;
        }
        e["left"] = n.left;
        e["right"] = n.right;
      }
      nodes.push_back(std::move(e));
    }
    trees.push_back(std::move(nodes));
  }
  doc["trees"] = std::move(trees);
  doc["metadata"] = ordered_json::object();
  for (const auto& [key, value] : model.metadata()) doc["metadata"][key] = value;
  return doc.dump() + "\n";
}

}  // namespace shapchat::model
