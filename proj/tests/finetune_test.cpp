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


#include "shapchat/finetune/finetune.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "shapchat/error.hpp"
#include "shapchat/model/synthetic.hpp"
#include "shapchat/model/trainer.hpp"
#include "shapchat/random.hpp"
#include "test_models.hpp"

namespace shapchat::finetune {
namespace {

namespace fs = std::filesystem;
using model::DataRow;
using model::DataTable;
using model::Feature;
using model::FeatureKind;
using model::FeatureSchema;

DomainCategory make_category(std::size_t n) {
  DomainCategory c{"batteries", {}};
  for (std::size_t i = 0; i < n; ++i) {
    c.documents.push_back({"doc" + std::to_string(i), "text " + std::to_string(i)});
  }
  return c;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Lines following the heading that starts with prefix, up to the next blank line.
std::vector<std::string> section(const std::string& doc, const std::string& prefix) {
  const auto lines = lines_of(doc);
  std::vector<std::string> out;
  bool in = false;
  for (const auto& line : lines) {
    if (in) {
      if (line.empty()) break;
      out.push_back(line);
    } else if (line.rfind(prefix, 0) == 0) {
      in = true;
    }
  }
  return out;
}

std::size_t count_feature_lines(const std::string& rendered) {
  std::size_t n = 0;
  for (const auto& line : lines_of(rendered)) n += line.rfind("- ", 0) == 0;
  return n;
}

TEST(CorpusSplitTest, TenDocumentsGiveNinePlusOne) {
  const DomainCategory c = make_category(10);
  const CorpusSplit s = split_in_domain_corpus(c, std::nullopt, 3);
  EXPECT_EQ(s.train_docs.size(), 9u);
  EXPECT_EQ(std::count(s.train_docs.begin(), s.train_docs.end(), s.eval_doc), 0);
  std::set<std::string> ids{s.eval_doc.id};
  for (const auto& d : s.train_docs) ids.insert(d.id);
  EXPECT_EQ(ids.size(), 10u);
  const CorpusSplit again = split_in_domain_corpus(c, std::nullopt, 3);
  EXPECT_EQ(again.eval_doc, s.eval_doc);
  EXPECT_EQ(again.train_docs, s.train_docs);
}

TEST(CorpusSplitTest, PartitionHoldsForManySeeds) {
  const DomainCategory c = make_category(7);
  std::set<std::string> chosen;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const CorpusSplit s = split_in_domain_corpus(c, std::nullopt, seed);
    ASSERT_EQ(s.train_docs.size(), 6u);
    std::vector<Document> all = s.train_docs;
    all.push_back(s.eval_doc);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    EXPECT_EQ(all, c.documents);
    chosen.insert(s.eval_doc.id);
  }
  EXPECT_GT(chosen.size(), 1u);
}

TEST(CorpusSplitTest, MinimalAndExplicitCases) {
  const CorpusSplit two = split_in_domain_corpus(make_category(2), std::nullopt, 0);
  EXPECT_EQ(two.train_docs.size(), 1u);
  const CorpusSplit pick = split_in_domain_corpus(make_category(10), "doc4", 0);
  EXPECT_EQ(pick.eval_doc.id, "doc4");
  EXPECT_EQ(pick.train_docs.front().id, "doc0");
  EXPECT_THROW(split_in_domain_corpus(make_category(10), "missing", 0), Error);
  EXPECT_THROW(split_in_domain_corpus(make_category(1), std::nullopt, 0), Error);
  DomainCategory dup = make_category(3);
  dup.documents[2].id = "doc0";
  EXPECT_THROW(split_in_domain_corpus(dup, std::nullopt, 0), Error);
}

TEST(CorpusSplitTest, Manifest) {
  const CorpusSplit s = split_in_domain_corpus(make_category(3), "doc1", 0);
  EXPECT_EQ(split_manifest(s).dump(),
            R"({"category":"batteries","train":["doc0","doc2"],"eval":"doc1"})");
}

TEST(LoadCategoryTest, ReadsTxtFilesSortedByName) {
  const fs::path dir = fs::temp_directory_path() / "shapchat_corpus_test" / "SHAP";
  fs::remove_all(dir.parent_path());
  fs::create_directories(dir);
  for (const char* name : {"b.txt", "a.txt", "notes.md"}) {
    std::ofstream(dir / name) << "content of " << name;
  }
  const DomainCategory c = load_category(dir);
  EXPECT_EQ(c.name, "SHAP");
  ASSERT_EQ(c.documents.size(), 2u);
  EXPECT_EQ(c.documents[0].id, "a");
  EXPECT_EQ(c.documents[0].text, "content of a.txt");
  EXPECT_EQ(c.documents[1].id, "b");
  EXPECT_EQ(load_category(dir, "custom").name, "custom");
  fs::remove_all(dir.parent_path());
  try {
    load_category(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(FinetuneConfigTest, StepConstants) {
  const FinetuneConfig in = finetune_config_for_step(FinetuneStep::kInDomain);
  EXPECT_EQ(in.epochs, 3);
  EXPECT_EQ(in.learning_rate, 0.0003);
  EXPECT_EQ(in.lora_rank, 8);
  EXPECT_EQ(in.lora_alpha, 16);
  EXPECT_EQ(in.batch_size, 128);
  EXPECT_EQ(in.micro_batch_size, 4);

  FinetuneConfig global = finetune_config_for_step(FinetuneStep::kGlobalExplanation);
  EXPECT_EQ(global.step, FinetuneStep::kGlobalExplanation);
  global.step = FinetuneStep::kInDomain;
  EXPECT_EQ(global, in);

  const FinetuneConfig align = finetune_config_for_step(FinetuneStep::kHumanAlignment);
  EXPECT_EQ(align.epochs, 20);
  EXPECT_EQ(align.learning_rate, 0.0003);
  EXPECT_EQ(align.lora_rank, 8);
  EXPECT_EQ(align.lora_alpha, 16);
  EXPECT_EQ(align.batch_size, 128);
  EXPECT_EQ(align.micro_batch_size, 4);

  EXPECT_EQ(to_json(align).dump(),
            R"({"step":"human_alignment","epochs":20,"learning_rate":0.0003,)"
            R"("lora_rank":8,"lora_alpha":16,"batch_size":128,"micro_batch_size":4})");
}

TEST(FinetuneConfigTest, StepNames) {
  for (FinetuneStep s : {FinetuneStep::kInDomain, FinetuneStep::kGlobalExplanation,
                         FinetuneStep::kHumanAlignment}) {
    EXPECT_EQ(step_from_string(to_string(s)), s);
  }
  EXPECT_THROW(step_from_string("pretraining"), Error);
}

TEST(PearsonTest, Examples) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_NEAR(pearson(x, std::vector<double>{2, 4, 6, 8}), 1.0, 1e-12);
  EXPECT_NEAR(pearson(x, std::vector<double>{8, 6, 4, 2}), -1.0, 1e-12);
  EXPECT_EQ(pearson(x, std::vector<double>{5, 5, 5, 5}), 0.0);
  EXPECT_NEAR(pearson(x, std::vector<double>{1, 3, 2, 4}), 0.8, 1e-12);
  EXPECT_THROW(pearson(x, std::vector<double>{1}), Error);
}

FeatureSchema mixed_schema() {
  return FeatureSchema({{"x0", FeatureKind::kNumeric, {}},
                        {"x1", FeatureKind::kNumeric, {}},
                        {"kind", FeatureKind::kCategorical, {"A", "B"}}},
                       "y");
}

DataTable mixed_table(std::size_t n, bool single_category) {
  Rng rng(11);
  std::vector<DataRow> rows;
  for (std::size_t r = 0; r < n; ++r) {
    rows.push_back({{rng.uniform(0, 10), rng.uniform(0, 10),
                     std::string(single_category || r % 2 == 0 ? "A" : "B")}});
  }
  return DataTable(mixed_schema(), rows);
}

TEST(GlobalDocTest, OnlySplitFeatureRanksFirst) {
  const model::TreeEnsemble model(mixed_schema(), 1.0, {testing::stump(0, 5.0, -1.0, 2.0)}, {});
  const DataTable table = mixed_table(40, false);
  const shap::BackgroundSet bg = shap::select_background(table, 20, 1);
  const std::string doc = generate_global_explanation_doc(model, table, bg, "kind");
  EXPECT_EQ(doc, generate_global_explanation_doc(model, table, bg, "kind"));

  const auto a = section(doc, "Section A");
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].rfind("1. x0: ", 0), 0u);
  EXPECT_NE(a[0], "1. x0: 0.0000");
  EXPECT_EQ(a[1], "2. x1: 0.0000");
  EXPECT_EQ(a[2], "3. kind: 0.0000");

  const auto b = section(doc, "Section B");
  ASSERT_EQ(b.size(), 3u);
  EXPECT_NE(b[0].find("x0: SHAP values increase with the feature value"), std::string::npos);

  const auto c = section(doc, "Section C");
  EXPECT_EQ(c.front(), "kind = A (20 rows)");
  EXPECT_EQ(std::count(c.begin(), c.end(), "kind = B (20 rows)"), 1);
  EXPECT_EQ(c.size(), 8u);
}

TEST(GlobalDocTest, SingleCategoryMatchesGlobalRanking) {
  const DataTable table = mixed_table(30, true);
  const model::TreeEnsemble model(
      mixed_schema(), 0.0,
      {testing::stump(0, 4.0, -1.0, 1.0), testing::stump(1, 6.0, 0.5, -0.5)}, {});
  const shap::BackgroundSet bg = shap::select_background(table, 30, 1);
  const std::string doc = generate_global_explanation_doc(model, table, bg, "kind");
  const auto a = section(doc, "Section A");
  auto c = section(doc, "Section C");
  ASSERT_FALSE(c.empty());
  EXPECT_EQ(c.front(), "kind = A (30 rows)");
  c.erase(c.begin());
  EXPECT_EQ(c, a);
}

TEST(GlobalDocTest, DependenceSectionClampsToFeatureCount) {
  const DataTable table = model::generate_synthetic_battery_table(60, 0.01, 2);
  const auto model = model::train_gbdt(table, {.n_trees = 15, .max_depth = 3});
  const shap::BackgroundSet bg = shap::select_background(table, 20, 2);
  const std::string doc = generate_global_explanation_doc(model, table, bg, "battery_type");
  EXPECT_EQ(section(doc, "Section B").size(), 7u);
  EXPECT_NE(doc.find("for the top 7 features"), std::string::npos);
  GlobalDocOptions few;
  few.dependence_features = 2;
  EXPECT_EQ(section(generate_global_explanation_doc(model, table, bg, "battery_type", few),
                    "Section B")
                .size(),
            2u);
}

TEST(GlobalDocTest, Rejections) {
  const DataTable table = mixed_table(10, false);
  const model::TreeEnsemble model(mixed_schema(), 0.0, {testing::stump(0, 5.0, 0, 1)}, {});
  const shap::BackgroundSet bg = shap::select_background(table, 10, 1);
  EXPECT_THROW(generate_global_explanation_doc(model, table, bg, "x0"), Error);
  EXPECT_THROW(generate_global_explanation_doc(model, table, bg, "nope"), Error);
  const DataTable empty(mixed_schema(), {});
  EXPECT_THROW(generate_global_explanation_doc(model, empty, bg, "kind"), Error);
}

TEST(AlignmentAnswerTest, FixedTemplate) {
  shap::Explanation e;
  e.base_value = 0.9;
  e.prediction = 0.8;
  e.shap_values = {0.01, -0.12, 0.01};
  e.feature_values.values = {1.0, 250.0, 3.0};
  EXPECT_EQ(alignment_answer(e, testing::numeric_schema(3)),
            "The predicted y is 0.8000. The most influential feature is x1 = 250.0000, "
            "which lowers the prediction by 0.1200 (SHAP -0.1200). The base value "
            "(average prediction) is 0.9000.");
  e.shap_values = {0.0, 0.0, 0.0};
  EXPECT_NE(alignment_answer(e, testing::numeric_schema(3)).find("does not change"),
            std::string::npos);
}

class AlignmentTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    table_ = new DataTable(model::generate_synthetic_battery_table(100, 0.01, 9));
    model_ = new model::TreeEnsemble(model::train_gbdt(*table_, {.n_trees = 20, .max_depth = 3}));
    bg_ = new shap::BackgroundSet(shap::select_background(*table_, 25, 9));
  }
  static void TearDownTestSuite() {
    delete bg_;
    delete model_;
    delete table_;
  }
  static AlignmentDataset generate(const AlignmentOptions& options) {
    const auto templates = default_question_templates();
    return generate_alignment_dataset(*model_, *table_, *bg_, templates, options);
  }
  static DataTable* table_;
  static model::TreeEnsemble* model_;
  static shap::BackgroundSet* bg_;
};

DataTable* AlignmentTest::table_ = nullptr;
model::TreeEnsemble* AlignmentTest::model_ = nullptr;
shap::BackgroundSet* AlignmentTest::bg_ = nullptr;

TEST_F(AlignmentTest, SplitSizesAndDisjointRows) {
  const AlignmentDataset ds = generate({.seed = 4});
  EXPECT_EQ(ds.train.size(), 80u);
  EXPECT_EQ(ds.eval.size(), 20u);
  std::set<std::size_t> rows;
  for (const auto& r : ds.train) rows.insert(r.row_index);
  for (const auto& r : ds.eval) EXPECT_EQ(rows.count(r.row_index), 0u);
  for (const auto& r : ds.eval) rows.insert(r.row_index);
  EXPECT_EQ(rows.size(), 100u);
}

TEST_F(AlignmentTest, TemplatesMatchAcrossSides) {
  const AlignmentDataset ds = generate({.seed = 4});
  std::set<std::size_t> train_ids, eval_ids;
  for (const auto& r : ds.train) train_ids.insert(r.template_id);
  for (const auto& r : ds.eval) eval_ids.insert(r.template_id);
  EXPECT_EQ(train_ids, (std::set<std::size_t>{0, 1, 2}));
  EXPECT_EQ(eval_ids, train_ids);
}

TEST_F(AlignmentTest, RecordsAreGroundedInTheirRow) {
  const AlignmentDataset ds = generate({.seed = 4});
  const auto templates = default_question_templates();
  for (const auto* side : {&ds.train, &ds.eval}) {
    for (const QARecord& r : *side) {
      const std::string p =
          prompt::format_prediction(model::predict_row(*model_, table_->rows()[r.row_index]));
      EXPECT_EQ(r.seed, 4u);
      EXPECT_NE(r.record.input.find(p), std::string::npos);
      EXPECT_EQ(count_feature_lines(r.record.input), 7u);
      EXPECT_NE(r.record.output.find(p), std::string::npos);
      EXPECT_EQ(r.record.instruction.find("{p}"), std::string::npos);
      if (r.template_id == 0) {
        EXPECT_EQ(r.record.instruction, "Why is the predicted SoH " + p + "?");
      } else {
        EXPECT_EQ(r.record.instruction, templates[r.template_id]);
      }
    }
  }
}

TEST_F(AlignmentTest, FeatureLinesFollowK) {
  const AlignmentDataset ds = generate({.k = 3, .seed = 1});
  for (const QARecord& r : ds.train) EXPECT_EQ(count_feature_lines(r.record.input), 3u);
}

TEST_F(AlignmentTest, JsonlIsDeterministicAndRoundTrips) {
  const AlignmentDataset a = generate({.seed = 4});
  const AlignmentDataset b = generate({.seed = 4});
  EXPECT_EQ(to_jsonl(a.train), to_jsonl(b.train));
  EXPECT_EQ(to_jsonl(a.eval), to_jsonl(b.eval));
  EXPECT_NE(to_jsonl(a.train), to_jsonl(generate({.seed = 5}).train));

  const std::string text = to_jsonl(a.train);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 80);
  const auto parsed = parse_jsonl(text);
  ASSERT_EQ(parsed.size(), a.train.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) EXPECT_EQ(parsed[i], a.train[i].record);

  const auto prov = provenance_json(a);
  ASSERT_EQ(prov["train"].size(), 80u);
  EXPECT_EQ(prov["eval"][0]["row_index"].get<std::size_t>(), a.eval[0].row_index);
  EXPECT_EQ(prov["prompt_version"], std::string(prompt::kPromptVersion));
}

TEST_F(AlignmentTest, Rejections) {
  const std::vector<std::string> none;
  EXPECT_THROW(generate_alignment_dataset(*model_, *table_, *bg_, none, {}), Error);
  EXPECT_THROW(generate({.train_frac = 0.0}), Error);
  EXPECT_THROW(generate({.train_frac = 1.0}), Error);
  EXPECT_THROW(generate({.k = 0}), Error);
}

TEST(ParseJsonlTest, ReportsLineNumbers) {
  const std::string good = R"({"instruction":"q","input":"","output":"a"})";
  EXPECT_EQ(parse_jsonl(good + "\n" + good + "\n").size(), 2u);
  EXPECT_EQ(parse_jsonl(good).size(), 1u);
  EXPECT_TRUE(parse_jsonl("").empty());
  try {
    parse_jsonl(good + "\n{\"instruction\":\"q\"}\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_jsonl(good + "\n\n" + good), Error);
}

}  // namespace
}  // namespace shapchat::finetune
