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


#include "shapchat/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "shapchat/error.hpp"
#include "shapchat/prompt/prompt.hpp"

namespace shapchat::eval {

using nlohmann::ordered_json;

namespace {

// Sum of logprobs after validation; warns once about positive values.
double checked_sum(std::span<const TokenScore> scores, const WarningSink& warn) {
  if (scores.empty()) fail(ErrorKind::kInvalidArgument, "no token scores");
  double sum = 0.0;
  std::size_t positive = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double lp = scores[i].logprob;
    if (!std::isfinite(lp)) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("token {} ('{}') has a non-finite logprob", i, scores[i].token_text));
    }
    if (lp > 0.0) ++positive;
    sum += lp;
  }
  if (positive > 0 && warn) {
    warn(fmt::format("{} of {} token logprobs are positive; the backend may smooth "
                     "its probabilities",
                     positive, scores.size()));
  }
  return sum;
}

}  // namespace

double perplexity(std::span<const TokenScore> scores, const WarningSink& warn) {
  const double sum = checked_sum(scores, warn);
  return std::exp(-sum / static_cast<double>(scores.size()));
}

double qa_loss(std::span<const finetune::QARecord> records, const Scorer& scorer,
               const WarningSink& warn) {
  if (records.empty()) fail(ErrorKind::kInvalidArgument, "loss needs at least one record");
  double total = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const finetune::QARecord& r = records[i];
    const auto where = [&] {
      return fmt::format("record {} (row {}, template {}, seed {})", i, r.row_index,
                         r.template_id, r.seed);
    };
    std::vector<TokenScore> scores;
    try {
      scores = scorer(prompt::alpaca_prompt(r.record), r.record.output);
    } catch (const Error& e) {
      fail(e.kind(), fmt::format("{}: {}", where(), e.what()));
    } catch (const std::exception& e) {
      fail(ErrorKind::kBackendUnreachable, fmt::format("{}: {}", where(), e.what()));
    }
    if (scores.empty()) {
      fail(ErrorKind::kProtocol, fmt::format("{}: scorer returned no tokens", where()));
    }
    try {
      total += -checked_sum(scores, warn) / static_cast<double>(scores.size());
    } catch (const Error& e) {
      fail(e.kind(), fmt::format("{}: {}", where(), e.what()));
    }
  }
  return total / static_cast<double>(records.size());
}

std::string_view to_string(Metric metric) {
  return metric == Metric::kPerplexity ? "perplexity" : "loss";
}

Metric metric_from_string(std::string_view text) {
  if (text == "perplexity") return Metric::kPerplexity;
  if (text == "loss") return Metric::kLoss;
  fail(ErrorKind::kInvalidArgument,
       fmt::format("unknown metric '{}' (expected perplexity or loss)", text));
}

ordered_json to_json(const EvalReport& report) {
  ordered_json out;
  out["metric"] = std::string(to_string(report.metric));
  out["value"] = report.value;
  out["n_tokens"] = report.n_tokens;
  out["document_id"] = report.document_id;
  return out;
}

double improvement_pct(double previous, double current) {
  if (!(previous > 0.0) || !std::isfinite(previous) || !std::isfinite(current)) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("improvement needs a positive previous value, got {}", previous));
  }
  return (previous - current) / previous * 100.0;
}

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

AblationReport build_ablation_report(std::span<const StageResult> stages,
                                     std::vector<AblationColumn> columns) {
  if (stages.empty()) fail(ErrorKind::kInvalidArgument, "ablation report needs a stage");
  if (columns.empty()) {
    for (const auto& [name, _] : stages.front().values) {
      columns.push_back({name, "", Metric::kPerplexity});
    }
  }
  if (columns.empty()) fail(ErrorKind::kInvalidArgument, "ablation report needs a column");
  std::set<std::string> names;
  for (const AblationColumn& c : columns) {
    if (!names.insert(c.name).second) {
      fail(ErrorKind::kInvalidArgument, fmt::format("duplicate column '{}'", c.name));
    }
  }
  AblationReport report;
  report.columns = columns;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageResult& stage = stages[s];
    bool consistent = stage.values.size() == columns.size();
    for (std::size_t c = 0; consistent && c < columns.size(); ++c) {
      consistent = stage.values[c].first == columns[c].name;
    }
    if (!consistent) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("stage '{}' does not have the columns of the report", stage.stage));
    }
    for (const std::string& own : stage.own_columns) {
      if (!names.contains(own)) {
        fail(ErrorKind::kInvalidArgument,
             fmt::format("stage '{}' names unknown column '{}'", stage.stage, own));
      }
    }
    AblationRow row{stage.stage, {}};
    for (std::size_t c = 0; c < columns.size(); ++c) {
      AblationCell cell{stage.values[c].second, std::nullopt};
      const bool own = stage.own_columns.empty() ||
                       std::find(stage.own_columns.begin(), stage.own_columns.end(),
                                 columns[c].name) != stage.own_columns.end();
      if (s > 0 && own) {
        cell.improvement_pct = improvement_pct(stages[s - 1].values[c].second, cell.value);
      }
      row.cells.push_back(cell);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

AblationReport ablation_report_from_json(const ordered_json& json) {
  try {
    std::vector<AblationColumn> columns;
    if (json.contains("columns")) {
      for (const auto& c : json.at("columns")) {
        columns.push_back({c.at("name").get<std::string>(),
                           c.value("test_document", std::string()),
                           metric_from_string(c.value("metric", std::string("perplexity")))});
      }
    }
    std::vector<StageResult> stages;
    for (const auto& s : json.at("stages")) {
      StageResult stage;
      stage.stage = s.at("stage").get<std::string>();
      const auto& values = s.at("values");
      if (!values.is_object()) fail(ErrorKind::kFormat, "stage values must be an object");
      if (columns.empty()) {
        for (const auto& [name, value] : values.items()) {
          stage.values.emplace_back(name, value.get<double>());
        }
      } else {
        for (const AblationColumn& c : columns) {
          if (!values.contains(c.name)) {
            fail(ErrorKind::kInvalidArgument,
                 fmt::format("stage '{}' has no value for column '{}'", stage.stage, c.name));
          }
          stage.values.emplace_back(c.name, values.at(c.name).get<double>());
        }
        if (values.size() != columns.size()) {
          fail(ErrorKind::kInvalidArgument,
               fmt::format("stage '{}' has values for unknown columns", stage.stage));
        }
      }
      if (s.contains("own_columns")) {
        stage.own_columns = s.at("own_columns").get<std::vector<std::string>>();
      }
      stages.push_back(std::move(stage));
    }
    return build_ablation_report(stages, std::move(columns));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("ablation input: {}", e.what()));
  }
}

ordered_json to_json(const AblationReport& report) {
  ordered_json columns = ordered_json::array();
  for (const AblationColumn& c : report.columns) {
    columns.push_back({{"name", c.name},
                       {"test_document", c.test_document},
                       {"metric", std::string(to_string(c.metric))}});
  }
  ordered_json rows = ordered_json::array();
  for (const AblationRow& r : report.rows) {
    ordered_json cells = ordered_json::array();
    for (std::size_t c = 0; c < r.cells.size(); ++c) {
      ordered_json cell;
      cell["column"] = report.columns[c].name;
      cell["value"] = r.cells[c].value;
      if (r.cells[c].improvement_pct) {
        cell["improvement_pct"] = *r.cells[c].improvement_pct;
        cell["improvement_pct_rounded"] = round_to(*r.cells[c].improvement_pct, 1);
      }
      cells.push_back(std::move(cell));
    }
    rows.push_back({{"stage", r.stage}, {"cells", std::move(cells)}});
  }
  ordered_json out;
  out["columns"] = std::move(columns);
  out["rows"] = std::move(rows);
  return out;
}

std::string render_table(const AblationReport& report) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> step{"Fine-Tuning Step"}, doc{"Test Document"},
      metric{"Evaluation Type"};
  for (const AblationColumn& c : report.columns) {
    step.push_back(c.name);
    doc.push_back(c.test_document);
    metric.push_back(c.metric == Metric::kPerplexity ? "Perplexity" : "Loss");
  }
  grid.push_back(std::move(step));
  grid.push_back(std::move(doc));
  grid.push_back(std::move(metric));
  for (const AblationRow& r : report.rows) {
    std::vector<std::string> line{r.stage};
    for (const AblationCell& cell : r.cells) {
      std::string text = fmt::format("{:.2f}", cell.value);
      if (cell.improvement_pct) {
        text += fmt::format(" ({:.1f}%)", round_to(*cell.improvement_pct, 1));
      }
      line.push_back(std::move(text));
    }
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(report.columns.size() + 1, 0);
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::string out;
  for (const auto& line : grid) {
    std::string text;
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c > 0) text += "  ";
      text += fmt::format("{:<{}}", line[c], width[c]);
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out += text + "\n";
  }
  return out;
}

}  // namespace shapchat::eval
