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
#ifndef SHAPCHAT_SHAP_SHAP_HPP_
#define SHAPCHAT_SHAP_SHAP_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapchat/model/data_table.hpp"
#include "shapchat/model/tree_ensemble.hpp"

namespace shapchat::shap {

using model::DataRow;
using model::DataTable;
using model::FeatureSchema;
using model::FeatureValue;
using model::TreeEnsemble;

// Reference rows that define the interventional expectations.
class BackgroundSet {
 public:
  // Throws kInvalidArgument when empty, kSchemaMismatch on a bad row.
  BackgroundSet(const FeatureSchema& schema, std::vector<DataRow> rows);

  const std::vector<DataRow>& rows() const { return rows_; }
  const std::vector<std::vector<double>>& encoded() const { return encoded_; }
  std::size_t size() const { return rows_.size(); }

 private:
  std::vector<DataRow> rows_;
  std::vector<std::vector<double>> encoded_;
};

// Deterministic subsample of at most max_rows rows (all rows, in order, when
// the table is small enough).
BackgroundSet select_background(const DataTable& table,
                                std::size_t max_rows = 100,
                                std::uint64_t seed = 0);

enum class ShapMethod { kExact, kKernel };

struct Explanation {
  double base_value = 0.0;
  std::vector<double> shap_values;
  DataRow feature_values;
  double prediction = 0.0;
  ShapMethod method = ShapMethod::kExact;
  // Distinct coalitions in the regression; kernel method only.
  std::optional<std::int64_t> n_samples;
};

// (d - 1) / (C(d, s) * s * (d - s)), for d >= 2 and 1 <= s <= d - 1.
double shapley_kernel_weight(int d, int s);

// v(S): mean over background rows b of f(x_S, b_rest).
double coalition_value(const TreeEnsemble& model, const DataRow& instance,
                       const BackgroundSet& background,
                       std::span<const std::size_t> coalition);

struct ExactOptions {
  // Enumeration guard: 2^d coalitions are evaluated.
  int max_features = 20;
};

Explanation exact_shap(const TreeEnsemble& model, const DataRow& instance,
                       const BackgroundSet& background,
                       const ExactOptions& options = {});

struct KernelOptions {
  // nullopt enumerates every non-trivial coalition.
  std::optional<std::int64_t> budget;
  std::uint64_t seed = 0;
  // Guard for full enumeration.
  int max_enumerated_features = 16;
};

// Weighted least squares over coalition indicators, constrained so that the
// attributions sum to v(N) - v(empty). Sampled budgets draw coalition sizes
// from the kernel distribution and add each draw's complement. Throws
// kPrecondition when the sampled system is rank deficient.
Explanation kernel_shap(const TreeEnsemble& model, const DataRow& instance,
                        const BackgroundSet& background,
                        const KernelOptions& options = {});

struct ExplainOptions {
  ShapMethod method = ShapMethod::kExact;
  ExactOptions exact;
  KernelOptions kernel;
};

Explanation explain(const TreeEnsemble& model, const DataRow& instance,
                    const BackgroundSet& background,
                    const ExplainOptions& options);

// One explanation per row, in row order. Failures name the row index.
std::vector<Explanation> explain_table(const TreeEnsemble& model,
                                       const DataTable& table,
                                       const BackgroundSet& background,
                                       const ExplainOptions& options = {});

struct SummaryPoint {
  FeatureValue value;
  double shap = 0.0;
};

struct GlobalSummary {
  std::vector<double> mean_abs_shap;
  // points[i] holds one (value, shap) pair per explanation for feature i.
  std::vector<std::vector<SummaryPoint>> points;
};

GlobalSummary global_summary(std::span<const Explanation> explanations);

// Indices sorted by mean |SHAP| descending, ties to the lower index; at most
// min(k, d) entries.
std::vector<std::size_t> top_features(const GlobalSummary& summary,
                                      std::size_t k);

struct DependencePoint {
  FeatureValue value;
  double shap = 0.0;
  FeatureValue color;
};

struct DependenceData {
  std::size_t feature_index = 0;
  std::size_t color_feature_index = 0;
  std::vector<DependencePoint> points;
};

DependenceData dependence_data(std::span<const Explanation> explanations,
                               std::size_t feature, std::size_t color_feature);

struct WaterfallContribution {
  std::string feature_name;
  FeatureValue feature_value;
  double shap_value = 0.0;
};

struct WaterfallData {
  double base_value = 0.0;
  std::vector<WaterfallContribution> contributions;
  // Sum of the attributions not shown individually.
  double remainder = 0.0;
  double final_value = 0.0;
};

WaterfallData waterfall_data(const Explanation& explanation,
                             const FeatureSchema& schema,
                             std::size_t max_display);

// Feature indices ordered by |shap| descending, ties to the lower index.
std::vector<std::size_t> order_by_magnitude(std::span<const double> shap);

nlohmann::json to_json(const Explanation& explanation);
Explanation explanation_from_json(const FeatureSchema& schema,
                                  const nlohmann::json& json);
nlohmann::json to_json(const GlobalSummary& summary,
                       const FeatureSchema& schema);
nlohmann::json to_json(const DependenceData& data);
nlohmann::json to_json(const WaterfallData& data);
WaterfallData waterfall_from_json(const nlohmann::json& json);

}  // namespace shapchat::shap

#endif  // SHAPCHAT_SHAP_SHAP_HPP_
