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
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "shapchat/error.hpp"
#include "shapchat/random.hpp"

namespace shapchat::finetune {

namespace fs = std::filesystem;
using model::DataTable;
using model::FeatureKind;
using model::FeatureSchema;
using nlohmann::ordered_json;
using shap::Explanation;

DomainCategory load_category(const fs::path& directory,
                             std::optional<std::string> name) {
  std::error_code ec;
  if (!fs::is_directory(directory, ec)) {
    fail(ErrorKind::kIo, fmt::format("not a directory: {}", directory.string()));
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  DomainCategory out;
  out.name = name ? *name : directory.filename().string();
  if (out.name.empty()) out.name = directory.parent_path().filename().string();
  for (const fs::path& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorKind::kIo, fmt::format("cannot read {}", file.string()));
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    out.documents.push_back({file.stem().string(), std::move(text)});
  }
  return out;
}

CorpusSplit split_in_domain_corpus(const DomainCategory& category,
                                   const std::optional<std::string>& eval_doc_id,
                                   std::uint64_t seed) {
  const auto& docs = category.documents;
  if (docs.size() < 2) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("category '{}' has {} document(s); at least 2 are needed",
                     category.name, docs.size()));
  }
  std::set<std::string> ids;
  for (const Document& doc : docs) {
    if (!ids.insert(doc.id).second) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("category '{}' has duplicate document id '{}'",
                       category.name, doc.id));
    }
  }
  std::size_t eval_index = 0;
  if (eval_doc_id) {
    const auto it = std::find_if(docs.begin(), docs.end(), [&](const Document& d) {
      return d.id == *eval_doc_id;
    });
    if (it == docs.end()) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("category '{}' has no document '{}'", category.name,
                       *eval_doc_id));
    }
    eval_index = static_cast<std::size_t>(it - docs.begin());
  } else {
    Rng rng(seed);
    eval_index = static_cast<std::size_t>(rng.below(docs.size()));
  }
  CorpusSplit out;
  out.category = category.name;
  out.eval_doc = docs[eval_index];
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i != eval_index) out.train_docs.push_back(docs[i]);
  }
  return out;
}

ordered_json split_manifest(const CorpusSplit& split) {
  ordered_json train = ordered_json::array();
  for (const Document& doc : split.train_docs) train.push_back(doc.id);
  ordered_json out;
  out["category"] = split.category;
  out["train"] = std::move(train);
  out["eval"] = split.eval_doc.id;
  return out;
}

std::string_view to_string(FinetuneStep step) {
  switch (step) {
    case FinetuneStep::kInDomain:
      return "in_domain";
    case FinetuneStep::kGlobalExplanation:
      return "global_explanation";
    case FinetuneStep::kHumanAlignment:
      return "human_alignment";
  }
  fail(ErrorKind::kInvalidArgument, "unknown fine-tuning step");
}

FinetuneStep step_from_string(std::string_view text) {
  for (FinetuneStep step : {FinetuneStep::kInDomain, FinetuneStep::kGlobalExplanation,
                            FinetuneStep::kHumanAlignment}) {
    if (to_string(step) == text) return step;
  }
  fail(ErrorKind::kInvalidArgument,
       fmt::format("unknown fine-tuning step '{}' (expected in_domain, "
                   "global_explanation or human_alignment)",
                   text));
}

FinetuneConfig finetune_config_for_step(FinetuneStep step) {
  FinetuneConfig config{.step = step,
                        .epochs = 3,
                        .learning_rate = 0.0003,
                        .lora_rank = 8,
                        .lora_alpha = 16,
                        .batch_size = 128,
                        .micro_batch_size = 4};
  switch (step) {
    case FinetuneStep::kInDomain:
    case FinetuneStep::kGlobalExplanation:
      return config;
    case FinetuneStep::kHumanAlignment:
      config.epochs = 20;
      return config;
  }
  fail(ErrorKind::kInvalidArgument, "unknown fine-tuning step");
}

ordered_json to_json(const FinetuneConfig& config) {
  ordered_json out;
  out["step"] = std::string(to_string(config.step));
  out["epochs"] = config.epochs;
  out["learning_rate"] = config.learning_rate;
  out["lora_rank"] = config.lora_rank;
  out["lora_alpha"] = config.lora_alpha;
  out["batch_size"] = config.batch_size;
  out["micro_batch_size"] = config.micro_batch_size;
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(ErrorKind::kInvalidArgument, "pearson needs equally long inputs");
  }
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::string format_stat(double value) { return fmt::format("{:.4f}", value); }

std::string format_corr(double value) { return fmt::format("{:+.4f}", value); }

// Ranking lines "1. name: 0.1234" for the explanations in rows.
std::string ranking_lines(const FeatureSchema& schema,
                          std::span<const Explanation> explanations) {
  const shap::GlobalSummary summary = shap::global_summary(explanations);
  std::string out;
  const auto order = shap::top_features(summary, schema.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    out += fmt::format("{}. {}: {}\n", r + 1, schema.feature(order[r]).name,
                       format_stat(summary.mean_abs_shap[order[r]]));
  }
  return out;
}

}  // namespace

std::string generate_global_explanation_doc(const model::TreeEnsemble& model,
                                            const DataTable& table,
                                            const shap::BackgroundSet& background,
                                            std::string_view category_feature,
                                            const GlobalDocOptions& options) {
  const FeatureSchema& schema = table.schema();
  if (table.size() == 0) {
    fail(ErrorKind::kInvalidArgument, "global explanation needs a non-empty table");
  }
  const auto cat = schema.index_of(category_feature);
  if (!cat) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("unknown category feature '{}'", category_feature));
  }
  if (schema.feature(*cat).kind != FeatureKind::kCategorical) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("category feature '{}' is not categorical", category_feature));
  }
  const std::size_t d = schema.size();
  const std::vector<Explanation> explanations =
      shap::explain_table(model, table, background, options.explain);
  const shap::GlobalSummary summary = shap::global_summary(explanations);
  const auto encoded = table.encoded_rows();
  const std::size_t n = explanations.size();

  std::string doc;
  doc += fmt::format("Global explanation of the {} model\n", schema.target_name());
  doc += fmt::format("Rows analysed: {}\n", n);
  doc += fmt::format("Base value (average prediction): {}\n",
                     prompt::format_prediction(explanations.front().base_value));

  doc += "\nSection A: feature ranking by mean absolute SHAP value over all rows\n";
  doc += ranking_lines(schema, explanations);

  const auto top = shap::top_features(summary, options.dependence_features);
  doc += fmt::format(
      "\nSection B: dependence of SHAP values on feature values for the top {} "
      "features\n",
      top.size());
  std::vector<std::vector<double>> column(d, std::vector<double>(n));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t r = 0; r < n; ++r) column[i][r] = encoded[r][i];
  }
  for (std::size_t i : top) {
    std::vector<double> phi(n);
    for (std::size_t r = 0; r < n; ++r) phi[r] = explanations[r].shap_values[i];
    const double r_self = pearson(column[i], phi);
    const char* trend = r_self > 0.0   ? "increase with"
                        : r_self < 0.0 ? "decrease with"
                                       : "show no linear trend with";
    const char* unit =
        schema.feature(i).kind == FeatureKind::kCategorical ? " (category index)" : "";
    std::string line = fmt::format("- {}: SHAP values {} the feature value{} (r = {})",
                                   schema.feature(i).name, trend, unit,
                                   format_corr(r_self));
    std::optional<std::size_t> partner;
    double best = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (j == i) continue;
      const double r_j = pearson(column[j], phi);
      if (!partner || std::abs(r_j) > std::abs(best)) {
        partner = j;
        best = r_j;
      }
    }
    if (partner) {
      line += fmt::format("; strongest partner feature: {} (r = {})",
                          schema.feature(*partner).name, format_corr(best));
    } else {
      line += "; strongest partner feature: none";
    }
    doc += line + "\n";
  }

  const auto& categories = schema.feature(*cat).categories;
  doc += fmt::format("\nSection C: feature ranking by mean absolute SHAP value per {}\n",
                     schema.feature(*cat).name);
  for (std::size_t c = 0; c < categories.size(); ++c) {
    std::vector<Explanation> group;
    for (std::size_t r = 0; r < n; ++r) {
      if (encoded[r][*cat] == static_cast<double>(c)) group.push_back(explanations[r]);
    }
    if (group.empty()) continue;
    doc += fmt::format("{} = {} ({} rows)\n", schema.feature(*cat).name,
                       categories[c], group.size());
    doc += ranking_lines(schema, group);
  }
  return doc;
}

std::vector<std::string> default_question_templates() {
  return {"Why is the predicted SoH {p}?",
          "Which feature influenced this prediction most?",
          "What would improve this battery's health?"};
}

std::string alignment_answer(const Explanation& explanation,
                             const FeatureSchema& schema) {
  const auto top = prompt::select_top_features(explanation, schema, 1);
  const prompt::FeatureLine& line = top.front();
  const std::string effect =
      line.shap > 0.0   ? fmt::format("raises the prediction by {}", format_stat(line.shap))
      : line.shap < 0.0 ? fmt::format("lowers the prediction by {}", format_stat(-line.shap))
                        : std::string("does not change the prediction");
  return fmt::format(
      "The predicted {} is {}. The most influential feature is {} = {}, which {} "
      "(SHAP {}). The base value (average prediction) is {}.",
      schema.target_name(), prompt::format_prediction(explanation.prediction),
      line.name, model::format_feature_value(line.value), effect,
      prompt::format_shap(line.shap), prompt::format_prediction(explanation.base_value));
}

AlignmentDataset generate_alignment_dataset(const model::TreeEnsemble& model,
                                            const DataTable& table,
                                            const shap::BackgroundSet& background,
                                            std::span<const std::string> templates,
                                            const AlignmentOptions& options) {
  if (table.size() == 0) {
    fail(ErrorKind::kInvalidArgument, "alignment dataset needs a non-empty table");
  }
  if (templates.empty()) {
    fail(ErrorKind::kInvalidArgument, "alignment dataset needs at least one template");
  }
  for (const std::string& t : templates) {
    if (t.empty()) fail(ErrorKind::kInvalidArgument, "question templates must not be empty");
  }
  if (!(options.train_frac > 0.0 && options.train_frac < 1.0)) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("train_frac must be in (0, 1), got {}", options.train_frac));
  }
  if (options.k < 1) fail(ErrorKind::kInvalidArgument, "k must be at least 1");

  const std::size_t n = table.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(options.seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::llround(options.train_frac * static_cast<double>(n)));

  const std::vector<Explanation> explanations =
      shap::explain_table(model, table, background, options.explain);
  const FeatureSchema& schema = table.schema();

  auto make = [&](std::size_t row, std::size_t position) {
    const Explanation& ex = explanations[row];
    const std::size_t template_id = position % templates.size();
    std::string instruction = templates[template_id];
    const std::string p = prompt::format_prediction(ex.prediction);
    for (std::size_t at = instruction.find("{p}"); at != std::string::npos;
         at = instruction.find("{p}", at + p.size())) {
      instruction.replace(at, 3, p);
    }
    QARecord out;
    out.record.instruction = std::move(instruction);
    out.record.input =
        prompt::build_info_prompt(ex, schema, options.data_description, options.k).rendered;
    out.record.output = alignment_answer(ex, schema);
    out.row_index = row;
    out.seed = options.seed;
    out.template_id = template_id;
    return out;
  };

  AlignmentDataset out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      out.train.push_back(make(order[i], i));
    } else {
      out.eval.push_back(make(order[i], i - n_train));
    }
  }
  return out;
}

std::string to_jsonl(std::span<const QARecord> records) {
  std::string out;
  for (const QARecord& r : records) {
    out += prompt::render_alpaca(r.record);
    out += '\n';
  }
  return out;
}

ordered_json provenance_json(const AlignmentDataset& dataset) {
  auto side = [](const std::vector<QARecord>& records) {
    ordered_json list = ordered_json::array();
    for (const QARecord& r : records) {
      ordered_json item;
      item["row_index"] = r.row_index;
      item["seed"] = r.seed;
      item["template_id"] = r.template_id;
      list.push_back(std::move(item));
    }
    return list;
  };
  ordered_json out;
  out["prompt_version"] = std::string(prompt::kPromptVersion);
  out["train"] = side(dataset.train);
  out["eval"] = side(dataset.eval);
  return out;
}

std::vector<prompt::AlpacaRecord> parse_jsonl(std::string_view text) {
  std::vector<prompt::AlpacaRecord> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const std::size_t end = text.find('\n');
    std::string_view line = text.substr(0, end);
    text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      fail(ErrorKind::kFormat, fmt::format("line {}: empty record", line_no));
    }
    try {
      out.push_back(prompt::parse_alpaca(line));
    } catch (const Error& e) {
      fail(e.kind(), fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

}  // namespace shapchat::finetune
