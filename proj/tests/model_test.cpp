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
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "shapchat/error.hpp"
#include "shapchat/model/data_table.hpp"
#include "shapchat/model/synthetic.hpp"
#include "shapchat/model/trainer.hpp"
#include "shapchat/model/tree_ensemble.hpp"
#include "test_models.hpp"

namespace shapchat::model {
namespace {

using ::shapchat::testing::numeric_row;
using ::shapchat::testing::numeric_schema;
using ::shapchat::testing::stump;

FeatureSchema cycle_schema() {
  return FeatureSchema({{"cycle_count", FeatureKind::kNumeric, {}}}, "soh");
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kIo;
}

std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(FeatureSchemaTest, RejectsBadSchemas) {
  EXPECT_EQ(kind_of([] { FeatureSchema({{"", FeatureKind::kNumeric, {}}}, "y"); }),
            ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([] {
              FeatureSchema({{"a", FeatureKind::kNumeric, {}},
                             {"a", FeatureKind::kNumeric, {}}},
                            "y");
            }),
            ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([] { FeatureSchema({{"c", FeatureKind::kCategorical, {}}}, "y"); }),
            ErrorKind::kInvalidArgument);
}

TEST(FeatureSchemaTest, EncodeRejectsUnknownCategoryByName) {
  const FeatureSchema schema = battery_schema();
  DataRow row{{std::string("XYZ"), 1.0, 2.0, 3.0, 4.0, 5.0, 6.0}};
  const std::string msg = message_of([&] { encode_row(schema, row); });
  EXPECT_NE(msg.find("battery_type"), std::string::npos) << msg;
  row.values[0] = std::string("NMC");
  EXPECT_EQ(encode_row(schema, row)[0], 1.0);
}

TEST(FeatureSchemaTest, RowJsonListsAllOffendingFields) {
  const FeatureSchema schema = battery_schema();
  nlohmann::json j = {{"battery_type", 3}, {"cycle_count", "many"}, {"bogus", 1}};
  const std::string msg = message_of([&] { row_from_json(schema, j); });
  EXPECT_NE(msg.find("battery_type"), std::string::npos);
  EXPECT_NE(msg.find("cycle_count"), std::string::npos);
  EXPECT_NE(msg.find("bogus"), std::string::npos);
  EXPECT_NE(msg.find("storage_soc_pct"), std::string::npos);
}

TEST(TreeEnsembleTest, EmptyEnsemblePredictsBaseScore) {
  const std::string doc = R"({"format_version":1,
    "schema":{"features":[{"name":"cycle_count","kind":"numeric"}],"target_name":"soh"},
    "base_score":0.9,"trees":[],"metadata":{}})";
  const TreeEnsemble model = load_ensemble(doc);
  EXPECT_EQ(model.predict(numeric_row({0.0})), 0.9);
  EXPECT_EQ(model.predict(numeric_row({1e6})), 0.9);
}

TEST(TreeEnsembleTest, ChildIndexOutOfRangeNamesTreeAndNode) {
  const std::string doc = R"({"format_version":1,
    "schema":{"features":[{"name":"cycle_count","kind":"numeric"}],"target_name":"soh"},
    "base_score":0.9,
    "trees":[[{"leaf":0.0}],[{"feature":0,"threshold":500,"left":1,"right":7},{"leaf":0.05},{"leaf":-0.05}]]})";
  EXPECT_EQ(kind_of([&] { load_ensemble(doc); }), ErrorKind::kFormat);
  const std::string msg = message_of([&] { load_ensemble(doc); });
  EXPECT_NE(msg.find("trees[1][0]"), std::string::npos) << msg;
}

TEST(TreeEnsembleTest, UnknownFieldIsRejectedWithPath) {
  const std::string doc = R"({"format_version":1,
    "schema":{"features":[{"name":"a","kind":"numeric"}],"target_name":"y"},
    "base_score":0.0,
    "trees":[[{"feature":0,"threshold":1,"left":1,"right":2,"gain":3},{"leaf":1},{"leaf":2}]]})";
  const std::string msg = message_of([&] { load_ensemble(doc); });
  EXPECT_NE(msg.find("trees[0][0].gain"), std::string::npos) << msg;
}

TEST(TreeEnsembleTest, RejectsStructuralViolations) {
  const FeatureSchema schema = numeric_schema(2);
  // Back edge.
  EXPECT_EQ(kind_of([&] {
              TreeEnsemble(schema, 0.0,
                           {{TreeNode::leaf(0), TreeNode::numeric_split(0, 1, 0, 2),
                             TreeNode::leaf(1)}});
            }),
            ErrorKind::kFormat);
  // Orphan node.
  EXPECT_EQ(kind_of([&] {
              TreeEnsemble(schema, 0.0, {{TreeNode::leaf(0), TreeNode::leaf(1)}});
            }),
            ErrorKind::kFormat);
  // Feature outside the schema.
  EXPECT_EQ(kind_of([&] { TreeEnsemble(schema, 0.0, {stump(5, 0.0, 1, 2)}); }),
            ErrorKind::kSchemaMismatch);
  // Category split on a numeric feature.
  EXPECT_EQ(kind_of([&] {
              TreeEnsemble(schema, 0.0,
                           {{TreeNode::categorical_split(0, {"a"}, 1, 2),
                             TreeNode::leaf(1), TreeNode::leaf(2)}});
            }),
            ErrorKind::kSchemaMismatch);
}

TEST(TreeEnsembleTest, StumpPredictions) {
  const TreeEnsemble one(cycle_schema(), 0.9, {stump(0, 500, 0.05, -0.05)});
  EXPECT_DOUBLE_EQ(predict_row(one, numeric_row({300})), 0.95);
  EXPECT_DOUBLE_EQ(predict_row(one, numeric_row({800})), 0.85);
  EXPECT_DOUBLE_EQ(predict_row(one, numeric_row({500})), 0.95);
  const TreeEnsemble two(cycle_schema(), 0.9,
                         {stump(0, 500, 0.05, -0.05), stump(0, 500, 0.05, -0.05)});
  EXPECT_DOUBLE_EQ(predict_row(two, numeric_row({300})), 1.00);
}

TEST(TreeEnsembleTest, CategoricalSplitRoutesMembersLeft) {
  const FeatureSchema schema = battery_schema();
  const TreeEnsemble model(
      schema, 0.0,
      {{TreeNode::categorical_split(0, {"NMC", "NCA"}, 1, 2), TreeNode::leaf(-1),
        TreeNode::leaf(1)}});
  DataRow row{{std::string("LFP"), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}};
  EXPECT_EQ(model.predict(row), 1.0);
  row.values[0] = std::string("NCA");
  EXPECT_EQ(model.predict(row), -1.0);
}

TEST(TreeEnsembleTest, SchemaMismatchedRowIsRejected) {
  const TreeEnsemble model(cycle_schema(), 0.9, {});
  EXPECT_EQ(kind_of([&] { model.predict(numeric_row({1.0, 2.0})); }),
            ErrorKind::kSchemaMismatch);
  DataRow text{{std::string("x")}};
  EXPECT_EQ(kind_of([&] { model.predict(text); }), ErrorKind::kSchemaMismatch);
}

TEST(TreeEnsembleTest, PredictionIsBasePlusPerTreeLeaves) {
  const DataTable data = generate_synthetic_battery_table(300, 0.01, 11);
  const TreeEnsemble model = train_gbdt(data, {.n_trees = 25, .max_depth = 3});
  for (const DataRow& row : data.rows()) {
    const auto x = encode_row(data.schema(), row);
    double expected = model.base_score();
    for (std::size_t t = 0; t < model.trees().size(); ++t) {
      // Walk the tree directly, independent of the compiled path.
      const Tree& tree = model.trees()[t];
      std::size_t n = 0;
      while (!tree[n].is_leaf()) {
        const TreeNode& node = tree[n];
        bool left;
        if (node.categorical) {
          const auto& label = std::get<std::string>(row.values[static_cast<std::size_t>(node.feature)]);
          left = std::find(node.categories.begin(), node.categories.end(), label) !=
                 node.categories.end();
        } else {
          left = x[static_cast<std::size_t>(node.feature)] <= node.threshold;
        }
        n = static_cast<std::size_t>(left ? node.left : node.right);
      }
      EXPECT_EQ(model.tree_output(t, x), tree[n].value);
      expected += tree[n].value;
    }
    EXPECT_EQ(model.predict(row), expected);
  }
}

TEST(TreeEnsembleTest, SaveLoadRoundTripPreservesPredictionsExactly) {
  const DataTable data = generate_synthetic_battery_table(400, 0.02, 5);
  const TreeEnsemble model = train_gbdt(data, {.n_trees = 30, .max_depth = 4});
  const std::string doc = save_ensemble(model);
  const TreeEnsemble loaded = load_ensemble(doc);
  EXPECT_EQ(save_ensemble(loaded), doc);
  EXPECT_EQ(loaded.schema(), model.schema());
  EXPECT_EQ(loaded.metadata(), model.metadata());
  const DataTable probe = generate_synthetic_battery_table(1000, 0.0, 99);
  for (const DataRow& row : probe.rows()) {
    EXPECT_EQ(loaded.predict(row), model.predict(row));
  }
}

TEST(TrainerTest, ConstantTargetsFitExactly) {
  const DataTable base = generate_synthetic_battery_table(50, 0.0, 1);
  const DataTable table(base.schema(), base.rows(), std::vector<double>(50, 5.0));
  const TreeEnsemble model = train_gbdt(table, {.n_trees = 10});
  for (const DataRow& row : table.rows()) {
    EXPECT_NEAR(model.predict(row), 5.0, 1e-12);
  }
}

// Best single threshold by brute force over every midpoint, independent of
// the trainer's prefix-sum scan.
double oracle_best_threshold(const std::vector<double>& x,
                             const std::vector<double>& y) {
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  double best_sse = std::numeric_limits<double>::infinity();
  double best_threshold = 0.0;
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    if (sorted[i] == sorted[i + 1]) continue;
    const double t = (sorted[i] + sorted[i + 1]) / 2.0;
    double sl = 0, sr = 0;
    int nl = 0, nr = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (x[k] <= t) { sl += y[k]; ++nl; } else { sr += y[k]; ++nr; }
    }
    double sse = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double m = x[k] <= t ? sl / nl : sr / nr;
      sse += (y[k] - m) * (y[k] - m);
    }
    if (sse < best_sse - 1e-15) {
      best_sse = sse;
      best_threshold = t;
    }
  }
  return best_threshold;
}

TEST(TrainerTest, StepFunctionMatchesExhaustiveSplitOracle) {
  std::vector<double> x, y;
  std::vector<DataRow> rows;
  for (int i = 0; i < 40; ++i) {
    const double v = -1.0 + (i + 0.5) * 2.0 / 40.0;
    x.push_back(v);
    y.push_back(v <= 0.0 ? 1.0 : 0.0);
    rows.push_back(numeric_row({v}));
  }
  const DataTable table(numeric_schema(1), rows, y);
  const TreeEnsemble model = train_gbdt(
      table, {.n_trees = 100, .max_depth = 1, .learning_rate = 0.1,
              .min_samples_leaf = 1});
  const double oracle = oracle_best_threshold(x, y);
  ASSERT_FALSE(model.trees().front().front().is_leaf());
  EXPECT_DOUBLE_EQ(model.trees().front().front().threshold, oracle);
  EXPECT_LT(rmse(model, table), 0.01);
}

TEST(TrainerTest, TrainingRmseNeverIncreasesAcrossRounds) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const DataTable data = generate_synthetic_battery_table(250, 0.03, seed);
    const TreeEnsemble model = train_gbdt(
        data, {.n_trees = 40, .max_depth = 3, .learning_rate = 0.3,
               .min_samples_leaf = 3, .seed = seed});
    double previous = rmse(model.prefix(0), data);
    for (std::size_t t = 1; t <= model.trees().size(); ++t) {
      const double current = rmse(model.prefix(t), data);
      EXPECT_LE(current, previous + 1e-15) << "seed " << seed << " round " << t;
      previous = current;
    }
  }
}

TEST(TrainerTest, DeterministicDocuments) {
  const DataTable data = generate_synthetic_battery_table(200, 0.01, 3);
  const GbdtParams params{.n_trees = 20, .max_depth = 3, .seed = 42};
  EXPECT_EQ(save_ensemble(train_gbdt(data, params)),
            save_ensemble(train_gbdt(data, params)));
}

TEST(TrainerTest, LearnsTheSyntheticSignal) {
  const DataTable train = generate_synthetic_battery_table(2000, 0.005, 1);
  const DataTable test = generate_synthetic_battery_table(500, 0.0, 2);
  const TreeEnsemble model = train_gbdt(train, {.n_trees = 200, .max_depth = 4});
  EXPECT_LT(rmse(model, test), 0.02);
  // storage_soc_pct carries no signal; the other features must be used.
  const auto used = model.used_features();
  for (std::size_t i = 0; i + 1 < used.size(); ++i) EXPECT_TRUE(used[i]) << i;
}

TEST(TrainerTest, RejectsInvalidInput) {
  const DataTable data = generate_synthetic_battery_table(20, 0.0, 1);
  EXPECT_EQ(kind_of([&] { train_gbdt(DataTable(data.schema(), {}), {}); }),
            ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { train_gbdt(DataTable(data.schema(), data.rows()), {}); }),
            ErrorKind::kInvalidArgument);
  std::vector<double> y = *data.targets();
  y[3] = std::nan("");
  EXPECT_EQ(kind_of([&] { train_gbdt(DataTable(data.schema(), data.rows(), y), {}); }),
            ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { train_gbdt(data, {.min_samples_leaf = 11}); }),
            ErrorKind::kInvalidArgument);
}

TEST(SyntheticTest, DeterministicPerSeed) {
  EXPECT_EQ(write_csv_table(generate_synthetic_battery_table(100, 0.01, 7)),
            write_csv_table(generate_synthetic_battery_table(100, 0.01, 7)));
  EXPECT_NE(write_csv_table(generate_synthetic_battery_table(100, 0.01, 7)),
            write_csv_table(generate_synthetic_battery_table(100, 0.01, 8)));
}

TEST(SyntheticTest, ZeroNoiseTargetsEqualGroundTruth) {
  const DataTable t = generate_synthetic_battery_table(500, 0.0, 4);
  for (std::size_t r = 0; r < t.size(); ++r) {
    const DataRow& row = t.rows()[r];
    const double type_offset =
        std::get<std::string>(row.values[0]) == "LFP"   ? 0.0
        : std::get<std::string>(row.values[0]) == "NMC" ? 0.02
                                                         : 0.03;
    auto num = [&](std::size_t i) { return std::get<double>(row.values[i]); };
    const double expected = std::clamp(
        1.02 - 8e-5 * num(1) - 2e-3 * std::max(0.0, num(2) - 25.0) -
            1e-3 * num(3) / 10.0 - 0.01 * std::max(0.0, num(4) - 1.0) -
            5e-5 * num(5) - type_offset,
        0.0, 1.0);
    EXPECT_EQ((*t.targets())[r], expected);
    EXPECT_EQ((*t.targets())[r], battery_soh_ground_truth(row));
  }
}

TEST(SyntheticTest, TargetsAreClamped) {
  const DataTable t = generate_synthetic_battery_table(10000, 0.01, 9);
  for (double y : *t.targets()) {
    EXPECT_GE(y, 0.0);
    EXPECT_LE(y, 1.0);
  }
}

TEST(SyntheticTest, RejectsNonPositiveCount) {
  EXPECT_EQ(kind_of([] { generate_synthetic_battery_table(0, 0.0, 1); }),
            ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([] { generate_synthetic_battery_table(5, -1.0, 1); }),
            ErrorKind::kInvalidArgument);
}

TEST(CsvTest, RoundTripsThroughKnownAndInferredSchema) {
  const DataTable t = generate_synthetic_battery_table(50, 0.01, 2);
  const std::string csv = write_csv_table(t);
  EXPECT_EQ(read_csv_table(csv, battery_schema()), t);
  const DataTable inferred = read_csv_table_infer(csv, "soh");
  EXPECT_EQ(inferred.schema().feature(0).kind, FeatureKind::kCategorical);
  EXPECT_EQ(inferred.size(), 50u);
  EXPECT_EQ(*inferred.targets(), *t.targets());
}

TEST(CsvTest, MissingValuesAreRejected) {
  const std::string csv = "cycle_count,soh\n10,0.9\n,0.8\n";
  const std::string msg = message_of([&] { read_csv_table(csv, cycle_schema()); });
  EXPECT_NE(msg.find("missing value"), std::string::npos) << msg;
  EXPECT_EQ(kind_of([&] { read_csv_table("a,b\n1,2\n", cycle_schema()); }),
            ErrorKind::kFormat);
}

TEST(CsvTest, FeaturesOnlyTableHasNoTargets) {
  const DataTable t = read_csv_table("cycle_count\n10\n20\n", cycle_schema());
  EXPECT_FALSE(t.targets().has_value());
  EXPECT_EQ(t.size(), 2u);
}

}  // namespace
}  // namespace shapchat::model
