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

#ifndef SHAPCHAT_EVAL_EVAL_HPP_
#define SHAPCHAT_EVAL_EVAL_HPP_

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapchat/finetune/finetune.hpp"

namespace shapchat::eval {

// One backend token with its natural-log probability.
struct TokenScore {
  std::string token_text;
  double logprob = 0.0;
};

using WarningSink = std::function<void(std::string_view)>;

// exp(-mean logprob). Throws on an empty list or a non-finite logprob; a
// positive logprob is reported through warn and otherwise accepted.
double perplexity(std::span<const TokenScore> scores, const WarningSink& warn = {});

// Scores the target tokens that follow prompt.
using Scorer = std::function<std::vector<TokenScore>(const std::string& prompt,
                                                     const std::string& target)>;

// Mean over records of the mean negative target-token logprob. The prompt is
// the Alpaca prompt of the record and the target its output; prompt tokens are
// never scored. Scorer failures are rethrown with the record's provenance.
double qa_loss(std::span<const finetune::QARecord> records, const Scorer& scorer,
               const WarningSink& warn = {});

enum class Metric { kPerplexity, kLoss };

std::string_view to_string(Metric metric);
Metric metric_from_string(std::string_view text);

struct EvalReport {
  Metric metric = Metric::kPerplexity;
  double value = 0.0;
  std::size_t n_tokens = 0;
  std::string document_id;
};

nlohmann::ordered_json to_json(const EvalReport& report);

// (previous - current) / previous * 100; positive when the metric decreased.
double improvement_pct(double previous, double current);

// Half away from zero at the given number of decimals.
double round_to(double value, int decimals);

struct AblationColumn {
  std::string name;
  std::string test_document;
  Metric metric = Metric::kPerplexity;
};

struct StageResult {
  std::string stage;
  // Column name to value, in column order.
  std::vector<std::pair<std::string, double>> values;
  // Columns whose document belongs to this stage; improvements are reported
  // only there. Empty means every column.
  std::vector<std::string> own_columns;
};

struct AblationCell {
  double value = 0.0;
  std::optional<double> improvement_pct;
};

struct AblationRow {
  std::string stage;
  std::vector<AblationCell> cells;
};

struct AblationReport {
  std::vector<AblationColumn> columns;
  std::vector<AblationRow> rows;
};

// Every stage must list the same columns in the same order; when columns is
// empty it is derived from the first stage with an unknown document and the
// perplexity metric.
AblationReport build_ablation_report(std::span<const StageResult> stages,
                                     std::vector<AblationColumn> columns = {});

// {"columns": [{"name", "test_document", "metric"}], "stages": [{"stage",
// "values": {column: value}, "own_columns": [...]}]}. "columns" is optional
// and stage values are matched to columns by name.
AblationReport ablation_report_from_json(const nlohmann::ordered_json& json);

nlohmann::ordered_json to_json(const AblationReport& report);

// Plain-text table: one header line each for the step, the test document and
// the evaluation type, then one line per stage. Values have two decimals and
// improvements one, as "5.32 (7.6%)".
std::string render_table(const AblationReport& report);

}  // namespace shapchat::eval

#endif  // SHAPCHAT_EVAL_EVAL_HPP_
