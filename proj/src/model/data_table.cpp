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
#include "shapchat/model/data_table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <string>
#include <system_error>
#include <utility>

#include <fmt/format.h>

#include "shapchat/error.hpp"

namespace shapchat::model {

DataTable::DataTable(FeatureSchema schema, std::vector<DataRow> rows,
                     std::optional<std::vector<double>> targets)
    : schema_(std::move(schema)),
      rows_(std::move(rows)),
      targets_(std::move(targets)) {
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    try {
      encode_row(schema_, rows_[r]);
    } catch (const Error& e) {
      fail(e.kind(), fmt::format("row {}: {}", r, e.what()));
    }
  }
  if (targets_ && targets_->size() != rows_.size()) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("{} targets for {} rows", targets_->size(), rows_.size()));
  }
}

std::vector<std::vector<double>> DataTable::encoded_rows() const {
  std::vector<std::vector<double>> out;
  out.reserve(rows_.size());
  for (const DataRow& row : rows_) out.push_back(encode_row(schema_, row));
  return out;
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return fmt::format("{}", value);
  return std::string(buf, end);
}

namespace {

using Record = std::vector<std::string>;

// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF.
std::vector<Record> parse_csv(std::string_view text) {
  std::vector<Record> records;
  Record current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  auto end_field = [&] {
    current.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = current.size() == 1 && current[0].empty();
    if (!blank) records.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started || !field.empty()) {
          fail(ErrorKind::kFormat,
               fmt::format("csv line {}: stray quote inside field", line));
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field.push_back(c);
    }
  }
  if (in_quotes) fail(ErrorKind::kFormat, "csv: unterminated quoted field");
  if (field_started || !field.empty() || !current.empty()) end_record();
  return records;
}

std::optional<double> parse_number(const std::string& cell) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return value;
}

DataTable build_table(const std::vector<Record>& records,
                      const FeatureSchema& schema, bool has_target) {
  const std::size_t width = schema.size() + (has_target ? 1 : 0);
  std::vector<DataRow> rows;
  std::vector<double> targets;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const Record& rec = records[r];
    if (rec.size() != width) {
      fail(ErrorKind::kFormat,
           fmt::format("csv row {}: expected {} cells, found {}", r, width,
                       rec.size()));
    }
    DataRow row;
    row.values.reserve(schema.size());
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const Feature& f = schema.feature(c);
      if (rec[c].empty()) {
        fail(ErrorKind::kFormat,
             fmt::format("csv row {}: missing value for '{}'", r, f.name));
      }
      if (f.kind == FeatureKind::kNumeric) {
        auto x = parse_number(rec[c]);
        if (!x || !std::isfinite(*x)) {
          fail(ErrorKind::kFormat,
               fmt::format("csv row {}: '{}' is not a finite number for '{}'",
                           r, rec[c], f.name));
        }
        row.values.emplace_back(*x);
      } else {
        row.values.emplace_back(rec[c]);
      }
    }
    if (has_target) {
      auto y = parse_number(rec.back());
      if (!y) {
        fail(ErrorKind::kFormat,
             fmt::format("csv row {}: target '{}' is not a number", r,
                         rec.back()));
      }
      targets.push_back(*y);
    }
    rows.push_back(std::move(row));
  }
  try {
    if (has_target) return DataTable(schema, std::move(rows), std::move(targets));
    return DataTable(schema, std::move(rows));
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, fmt::format("csv: {}", e.what()));
  }
}

}  // namespace

DataTable read_csv_table(std::string_view text, const FeatureSchema& schema) {
  const auto records = parse_csv(text);
  if (records.empty()) fail(ErrorKind::kFormat, "csv: missing header row");
  const Record& header = records.front();
  bool has_target = false;
  if (header.size() == schema.size() + 1 &&
      header.back() == schema.target_name()) {
    has_target = true;
  } else if (header.size() != schema.size()) {
    fail(ErrorKind::kFormat,
         fmt::format("csv header has {} columns, schema expects {}",
                     header.size(), schema.size()));
  }
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (header[c] != schema.feature(c).name) {
      fail(ErrorKind::kFormat,
           fmt::format("csv header column {} is '{}', expected '{}'", c,
                       header[c], schema.feature(c).name));
    }
  }
  return build_table(records, schema, has_target);
}

DataTable read_csv_table_infer(std::string_view text,
                               const std::string& target_name) {
  const auto records = parse_csv(text);
  if (records.empty()) fail(ErrorKind::kFormat, "csv: missing header row");
  const Record& header = records.front();
  const bool has_target = !header.empty() && header.back() == target_name;
  const std::size_t n_features = header.size() - (has_target ? 1 : 0);
  std::vector<Feature> features;
  for (std::size_t c = 0; c < n_features; ++c) {
    Feature f;
    f.name = header[c];
    bool numeric = true;
    std::set<std::string> labels;
    for (std::size_t r = 1; r < records.size(); ++r) {
      if (c >= records[r].size()) continue;
      const std::string& cell = records[r][c];
      if (cell.empty()) continue;
      if (!parse_number(cell)) numeric = false;
      labels.insert(cell);
    }
    if (!numeric) {
      f.kind = FeatureKind::kCategorical;
      f.categories.assign(labels.begin(), labels.end());
    }
    features.push_back(std::move(f));
  }
  FeatureSchema schema;
  try {
    schema = FeatureSchema(std::move(features), target_name);
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, fmt::format("csv header: {}", e.what()));
  }
  return build_table(records, schema, has_target);
}

namespace {

std::string quote_cell(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string write_csv_table(const DataTable& table) {
  const FeatureSchema& schema = table.schema();
  std::string out;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (c > 0) out.push_back(',');
    out += quote_cell(schema.feature(c).name);
  }
  if (table.targets()) {
    out.push_back(',');
    out += quote_cell(schema.target_name());
  }
  out.push_back('\n');
  for (std::size_t r = 0; r < table.size(); ++r) {
    const DataRow& row = table.rows()[r];
    for (std::size_t c = 0; c < row.values.size(); ++c) {
      if (c > 0) out.push_back(',');
      if (const double* x = std::get_if<double>(&row.values[c])) {
        out += format_double(*x);
      } else {
        out += quote_cell(std::get<std::string>(row.values[c]));
      }
    }
    if (table.targets()) {
      out.push_back(',');
      out += format_double((*table.targets())[r]);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace shapchat::model
