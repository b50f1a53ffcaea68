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
#ifndef SHAPCHAT_MODEL_TREE_ENSEMBLE_HPP_
#define SHAPCHAT_MODEL_TREE_ENSEMBLE_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shapchat/model/schema.hpp"

namespace shapchat::model {

// One node of a regression tree. A node is a leaf when feature < 0.
//
// Numeric split: value <= threshold goes left.
// Categorical split: value in categories goes left.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  std::vector<std::string> categories;
  bool categorical = false;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }

  static TreeNode leaf(double value);
  static TreeNode numeric_split(int feature, double threshold, int left,
                                int right);
  static TreeNode categorical_split(int feature,
                                    std::vector<std::string> categories,
                                    int left, int right);

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

// Node 0 is the root; children always have larger indices than parents.
using Tree = std::vector<TreeNode>;

// Additive tree model: prediction = base_score + sum of reached leaf values.
// Immutable once built; safe for concurrent reads.
class TreeEnsemble {
 public:
  // Throws kFormat / kSchemaMismatch when a tree breaks the structural
  // invariants, naming the tree and node.
  TreeEnsemble(FeatureSchema schema, double base_score, std::vector<Tree> trees,
               std::map<std::string, std::string> metadata = {});

  const FeatureSchema& schema() const { return schema_; }
  double base_score() const { return base_score_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const std::map<std::string, std::string>& metadata() const {
    return metadata_;
  }

  // Throws kSchemaMismatch if the row does not conform.
  double predict(const DataRow& row) const;
  // Row already passed through encode_row.
  double predict_encoded(std::span<const double> encoded) const;
  // Leaf value reached in a single tree.
  double tree_output(std::size_t tree, std::span<const double> encoded) const;

  // The first n trees (all of them when n exceeds the count).
  TreeEnsemble prefix(std::size_t n) const;

  // used[i] is true when some split tests feature i.
  std::vector<bool> used_features() const;

 private:
  struct CompiledNode {
    int feature;
    double threshold;
    // Non-empty only for categorical splits; indexed by category index.
    std::vector<std::uint8_t> goes_left;
    int left;
    int right;
    double value;
  };

  void compile();

  FeatureSchema schema_;
  double base_score_ = 0.0;
  std::vector<Tree> trees_;
  std::map<std::string, std::string> metadata_;
  std::vector<std::vector<CompiledNode>> compiled_;
};

// Free-function spellings of the core operations.
inline double predict_row(const TreeEnsemble& model, const DataRow& row) {
  return model.predict(row);
}

// Model document (JSON). Unknown fields and bad indices are rejected with the
// JSON path of the offending element.
TreeEnsemble load_ensemble(std::string_view document);
std::string save_ensemble(const TreeEnsemble& model);

}  // namespace shapchat::model

#endif  // SHAPCHAT_MODEL_TREE_ENSEMBLE_HPP_
