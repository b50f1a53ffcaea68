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
#ifndef SHAPCHAT_FINETUNE_FINETUNE_HPP_
#define SHAPCHAT_FINETUNE_FINETUNE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapchat/model/data_table.hpp"
#include "shapchat/model/tree_ensemble.hpp"
#include "shapchat/prompt/prompt.hpp"
#include "shapchat/shap/shap.hpp"

namespace shapchat::finetune {

struct Document {
  std::string id;
  std::string text;

  friend bool operator==(const Document&, const Document&) = default;
};

// A named set of unstructured training texts, such as "SHAP" or "batteries".
struct DomainCategory {
  std::string name;
  std::vector<Document> documents;
};

// Every *.txt file in the directory, sorted by file name; the id is the file
// stem and the category name defaults to the directory name. Texts are taken
// as they are.
DomainCategory load_category(const std::filesystem::path& directory,
                             std::optional<std::string> name = std::nullopt);

struct CorpusSplit {
  std::string category;
  std::vector<Document> train_docs;
  Document eval_doc;
};

// eval_doc_id == nullopt picks the evaluation document uniformly with the
// seed. Training documents keep their input order.
CorpusSplit split_in_domain_corpus(const DomainCategory& category,
                                   const std::optional<std::string>& eval_doc_id,
                                   std::uint64_t seed);

// {"category": ..., "train": [ids], "eval": id}
nlohmann::ordered_json split_manifest(const CorpusSplit& split);

enum class FinetuneStep { kInDomain, kGlobalExplanation, kHumanAlignment };

std::string_view to_string(FinetuneStep step);
FinetuneStep step_from_string(std::string_view text);

struct FinetuneConfig {
  FinetuneStep step = FinetuneStep::kInDomain;
  int epochs = 0;
  double learning_rate = 0.0;
  int lora_rank = 0;
  int lora_alpha = 0;
  int batch_size = 0;
  int micro_batch_size = 0;

  friend bool operator==(const FinetuneConfig&, const FinetuneConfig&) = default;
};

// LoRA hyperparameters used for each of the three fine-tuning steps.
FinetuneConfig finetune_config_for_step(FinetuneStep step);
nlohmann::ordered_json to_json(const FinetuneConfig& config);

struct GlobalDocOptions {
  shap::ExplainOptions explain;
  // Features covered by the dependence section.
  std::size_t dependence_features = 15;
};

// Plain-text summary of the SHAP values over a table, in three sections:
// global ranking by mean |SHAP|, per-feature dependence statistics for the
// top features, and one ranking per category of category_feature.
std::string generate_global_explanation_doc(
    const model::TreeEnsemble& model, const model::DataTable& table,
    const shap::BackgroundSet& background, std::string_view category_feature,
    const GlobalDocOptions& options = {});

// Pearson correlation; 0 when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

struct QARecord {
  prompt::AlpacaRecord record;
  std::size_t row_index = 0;
  std::uint64_t seed = 0;
  std::size_t template_id = 0;
};

struct AlignmentOptions {
  std::size_t k = 20;
  double train_frac = 0.8;
  std::uint64_t seed = 0;
  std::string data_description =
      "Usage and condition data of a single rechargeable battery.";
  shap::ExplainOptions explain{
      .method = shap::ShapMethod::kKernel, .exact = {}, .kernel = {}};
};

struct AlignmentDataset {
  std::vector<QARecord> train;
  std::vector<QARecord> eval;
};

std::vector<std::string> default_question_templates();

// One record per table row. Rows are shuffled with the seed and split by
// train_frac, so train and eval never share a row; templates are assigned
// round-robin within each side so both sides use the same templates.
// "{p}" in a template is replaced by the formatted prediction.
AlignmentDataset generate_alignment_dataset(
    const model::TreeEnsemble& model, const model::DataTable& table,
    const shap::BackgroundSet& background,
    std::span<const std::string> templates, const AlignmentOptions& options);

// The answer text used as the supervised target.
std::string alignment_answer(const shap::Explanation& explanation,
                             const model::FeatureSchema& schema);

std::string to_jsonl(std::span<const QARecord> records);
nlohmann::ordered_json provenance_json(const AlignmentDataset& dataset);
std::vector<prompt::AlpacaRecord> parse_jsonl(std::string_view text);

}  // namespace shapchat::finetune

#endif  // SHAPCHAT_FINETUNE_FINETUNE_HPP_
