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
// Hand-built models and random generators shared by the test suites.

#ifndef SHAPCHAT_TESTS_TEST_MODELS_HPP_
#define SHAPCHAT_TESTS_TEST_MODELS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "shapchat/model/tree_ensemble.hpp"
#include "shapchat/random.hpp"

namespace shapchat::testing {

inline model::FeatureSchema numeric_schema(std::size_t d) {
  std::vector<model::Feature> features;
  for (std::size_t i = 0; i < d; ++i) {
    features.push_back({"x" + std::to_string(i), model::FeatureKind::kNumeric, {}});
  }
  return model::FeatureSchema(std::move(features), "y");
}

inline model::DataRow numeric_row(std::vector<double> values) {
  model::DataRow row;
  for (double v : values) row.values.emplace_back(v);
  return row;
}

// x[feature] <= threshold ? left : right
inline model::Tree stump(int feature, double threshold, double left,
                         double right) {
  return {model::TreeNode::numeric_split(feature, threshold, 1, 2),
          model::TreeNode::leaf(left), model::TreeNode::leaf(right)};
}

// Random full-ish tree of the given depth over numeric features in [0, 1).
inline model::Tree random_tree(Rng& rng, std::size_t d, int depth) {
  model::Tree tree;
  // Preorder construction keeps children after parents.
  auto grow = [&](auto&& self, int level) -> int {
    const int index = static_cast<int>(tree.size());
    tree.emplace_back();
    if (level == depth || rng.uniform() < 0.15) {
      tree[static_cast<std::size_t>(index)] =
          model::TreeNode::leaf(rng.uniform(-1.0, 1.0));
      return index;
    }
    const int feature = static_cast<int>(rng.below(d));
    const double threshold = rng.uniform();
    const int left = self(self, level + 1);
    const int right = self(self, level + 1);
    tree[static_cast<std::size_t>(index)] =
        model::TreeNode::numeric_split(feature, threshold, left, right);
    return index;
  };
  grow(grow, 0);
  return tree;
}

inline model::TreeEnsemble random_ensemble(Rng& rng, std::size_t d,
                                           int n_trees, int depth) {
  std::vector<model::Tree> trees;
  for (int t = 0; t < n_trees; ++t) trees.push_back(random_tree(rng, d, depth));
  return model::TreeEnsemble(numeric_schema(d), rng.uniform(-1.0, 1.0),
                             std::move(trees));
}

inline model::DataRow random_row(Rng& rng, std::size_t d) {
  model::DataRow row;
  for (std::size_t i = 0; i < d; ++i) row.values.emplace_back(rng.uniform());
  return row;
}

}  // namespace shapchat::testing

#endif  // SHAPCHAT_TESTS_TEST_MODELS_HPP_
