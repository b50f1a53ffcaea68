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
#include "shapchat/model/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <utility>

#include <fmt/format.h>

#include "shapchat/error.hpp"

namespace shapchat::model {
namespace {

struct Split {
  int feature = -1;
  double gain = 0.0;
  // Numeric splits.
  double threshold = 0.0;
  // Categorical splits: category indices routed left.
  std::vector<std::size_t> left_categories;
};

class TreeBuilder {
 public:
  TreeBuilder(const FeatureSchema& schema,
              const std::vector<std::vector<double>>& columns,
              const std::vector<double>& residuals, const GbdtParams& params,
              std::vector<double>& leaf_of_row)
      : schema_(schema),
        columns_(columns),
        residuals_(residuals),
        params_(params),
        leaf_of_row_(leaf_of_row) {}

  Tree build(std::vector<std::size_t> rows) {
    tree_.clear();
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::size_t> rows, int depth) {
    const int index = static_cast<int>(tree_.size());
    tree_.emplace_back();
    std::optional<Split> split;
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    if (depth < params_.max_depth && rows.size() >= 2 * min_leaf) {
      split = best_split(rows);
    }
    if (!split) {
      double sum = 0.0;
      for (std::size_t r : rows) sum += residuals_[r];
      const double value =
          params_.learning_rate * sum / static_cast<double>(rows.size());
      for (std::size_t r : rows) leaf_of_row_[r] = value;
      tree_[static_cast<std::size_t>(index)] = TreeNode::leaf(value);
      return index;
    }

    const auto& column = columns_[static_cast<std::size_t>(split->feature)];
    std::vector<std::uint8_t> goes_left;
    const bool categorical =
        schema_.feature(static_cast<std::size_t>(split->feature)).kind ==
        FeatureKind::kCategorical;
    if (categorical) {
      goes_left.assign(
          schema_.feature(static_cast<std::size_t>(split->feature))
              .categories.size(),
          0);
      for (std::size_t c : split->left_categories) goes_left[c] = 1;
    }
    std::vector<std::size_t> left_rows;
    std::vector<std::size_t> right_rows;
    for (std::size_t r : rows) {
      const double x = column[r];
      const bool left = categorical ? goes_left[static_cast<std::size_t>(x)] != 0
                                    : x <= split->threshold;
      (left ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    const int left = grow(std::move(left_rows), depth + 1);
    const int right = grow(std::move(right_rows), depth + 1);
    TreeNode node;
    if (categorical) {
      std::vector<std::size_t> cats = split->left_categories;
      std::sort(cats.begin(), cats.end());
      std::vector<std::string> labels;
      const auto& all =
          schema_.feature(static_cast<std::size_t>(split->feature)).categories;
      for (std::size_t c : cats) labels.push_back(all[c]);
      node = TreeNode::categorical_split(split->feature, std::move(labels), left,
                                         right);
    } else {
      node = TreeNode::numeric_split(split->feature, split->threshold, left,
                                     right);
    }
    tree_[static_cast<std::size_t>(index)] = std::move(node);
    return index;
  }

  // Gain = SL^2/nL + SR^2/nR - S^2/n, the drop in squared error when each
  // side predicts its own mean residual.
  std::optional<Split> best_split(const std::vector<std::size_t>& rows) const {
    const double n = static_cast<double>(rows.size());
    double total = 0.0;
    double total_sq = 0.0;
    for (std::size_t r : rows) {
      total += residuals_[r];
      total_sq += residuals_[r] * residuals_[r];
    }
    const double parent_score = total * total / n;
    const double node_sse = total_sq - parent_score;
    if (!(node_sse > 0.0)) return std::nullopt;

    std::optional<Split> best;
    double best_gain = 1e-12 * node_sse;
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      if (schema_.feature(f).kind == FeatureKind::kNumeric) {
        scan_numeric(f, rows, total, parent_score, best_gain, best);
      } else {
        scan_categorical(f, rows, total, parent_score, best_gain, best);
      }
    }
    return best;
  }

  void scan_numeric(std::size_t f, const std::vector<std::size_t>& rows,
                    double total, double parent_score, double& best_gain,
                    std::optional<Split>& best) const {
    const auto& column = columns_[f];
    std::vector<std::size_t> order = rows;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return column[a] < column[b] || (column[a] == column[b] && a < b);
    });
    const std::size_t n = order.size();
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    double left_sum = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      left_sum += residuals_[order[i]];
      const std::size_t n_left = i + 1;
      const double lo = column[order[i]];
      const double hi = column[order[i + 1]];
      if (lo == hi) continue;
      if (n_left < min_leaf) continue;
      if (n - n_left < min_leaf) break;
      const double right_sum = total - left_sum;
      const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                          right_sum * right_sum /
                              static_cast<double>(n - n_left) -
                          parent_score;
      if (gain > best_gain) {
        double threshold = lo + (hi - lo) / 2.0;
        if (!(threshold < hi)) threshold = lo;
        best_gain = gain;
        best = Split{static_cast<int>(f), gain, threshold, {}};
      }
    }
  }

  void scan_categorical(std::size_t f, const std::vector<std::size_t>& rows,
                        double total, double parent_score, double& best_gain,
                        std::optional<Split>& best) const {
    const auto& column = columns_[f];
    const std::size_t k = schema_.feature(f).categories.size();
    std::vector<double> sums(k, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t r : rows) {
      const auto c = static_cast<std::size_t>(column[r]);
      sums[c] += residuals_[r];
      ++counts[c];
    }
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) present.push_back(c);
    }
    // Order by mean residual, then by category index.
    std::sort(present.begin(), present.end(), [&](std::size_t a, std::size_t b) {
      const double ma = sums[a] / static_cast<double>(counts[a]);
      const double mb = sums[b] / static_cast<double>(counts[b]);
      return ma < mb || (ma == mb && a < b);
    });
    const std::size_t n = rows.size();
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    double left_sum = 0.0;
    std::size_t n_left = 0;
    for (std::size_t i = 0; i + 1 < present.size(); ++i) {
      left_sum += sums[present[i]];
      n_left += counts[present[i]];
      if (n_left < min_leaf) continue;
      if (n - n_left < min_leaf) break;
      const double right_sum = total - left_sum;
      const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                          right_sum * right_sum /
                              static_cast<double>(n - n_left) -
                          parent_score;
      if (gain > best_gain) {
        best_gain = gain;
        best = Split{static_cast<int>(f), gain, 0.0,
                     std::vector<std::size_t>(present.begin(),
                                              present.begin() +
                                                  static_cast<std::ptrdiff_t>(
                                                      i + 1))};
      }
    }
  }

  const FeatureSchema& schema_;
  const std::vector<std::vector<double>>& columns_;
  const std::vector<double>& residuals_;
  const GbdtParams& params_;
  std::vector<double>& leaf_of_row_;
  Tree tree_;
};

void validate(const DataTable& table, const GbdtParams& params) {
  if (params.n_trees < 0) fail(ErrorKind::kInvalidArgument, "n_trees must be >= 0");
  if (params.max_depth < 1) fail(ErrorKind::kInvalidArgument, "max_depth must be >= 1");
  if (!(params.learning_rate > 0.0 && params.learning_rate <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, "learning_rate must be in (0, 1]");
  }
  if (params.min_samples_leaf < 1) {
    fail(ErrorKind::kInvalidArgument, "min_samples_leaf must be >= 1");
  }
  if (table.empty()) fail(ErrorKind::kInvalidArgument, "training table is empty");
  if (!table.targets()) fail(ErrorKind::kInvalidArgument, "training table has no targets");
  if (table.size() < 2 * static_cast<std::size_t>(params.min_samples_leaf)) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("training needs at least {} rows, got {}",
                     2 * params.min_samples_leaf, table.size()));
  }
  const auto& y = *table.targets();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("target of row {} is not finite", i));
    }
  }
}

}  // namespace

TreeEnsemble train_gbdt(const DataTable& table, const GbdtParams& params) {
  validate(table, params);
  const FeatureSchema& schema = table.schema();
  const std::size_t n = table.size();
  const auto& y = *table.targets();

  std::vector<std::vector<double>> columns(schema.size(),
                                           std::vector<double>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const std::vector<double> row = encode_row(schema, table.rows()[r]);
    for (std::size_t f = 0; f < schema.size(); ++f) columns[f][r] = row[f];
  }

  const double base =
      std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  std::vector<double> prediction(n, base);
  std::vector<double> residuals(n);
  std::vector<double> leaf_of_row(n);
  std::vector<std::size_t> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});

  std::vector<Tree> trees;
  trees.reserve(static_cast<std::size_t>(params.n_trees));
  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t r = 0; r < n; ++r) residuals[r] = y[r] - prediction[r];
    TreeBuilder builder(schema, columns, residuals, params, leaf_of_row);
    trees.push_back(builder.build(all_rows));
    for (std::size_t r = 0; r < n; ++r) prediction[r] += leaf_of_row[r];
  }

  std::map<std::string, std::string> metadata = {
      {"trainer", "gbdt_squared_error"},
      {"n_trees", std::to_string(params.n_trees)},
      {"max_depth", std::to_string(params.max_depth)},
      {"learning_rate", format_double(params.learning_rate)},
      {"min_samples_leaf", std::to_string(params.min_samples_leaf)},
      {"seed", std::to_string(params.seed)},
      {"training_rows", std::to_string(n)},
  };
  return TreeEnsemble(schema, base, std::move(trees), std::move(metadata));
}

double rmse(const TreeEnsemble& model, const DataTable& table) {
  if (!table.targets() || table.empty()) {
    fail(ErrorKind::kInvalidArgument, "rmse needs a non-empty table with targets");
  }
  double sse = 0.0;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const double e = model.predict(table.rows()[r]) - (*table.targets())[r];
    sse += e * e;
  }
  return std::sqrt(sse / static_cast<double>(table.size()));
}

}  // namespace shapchat::model
