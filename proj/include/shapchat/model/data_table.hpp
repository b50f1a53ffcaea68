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
#ifndef SHAPCHAT_MODEL_DATA_TABLE_HPP_
#define SHAPCHAT_MODEL_DATA_TABLE_HPP_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shapchat/model/schema.hpp"

namespace shapchat::model {

class DataTable {
 public:
  DataTable() = default;
  // Validates every row against the schema and the target count.
  DataTable(FeatureSchema schema, std::vector<DataRow> rows,
            std::optional<std::vector<double>> targets = std::nullopt);

  const FeatureSchema& schema() const { return schema_; }
  const std::vector<DataRow>& rows() const { return rows_; }
  const std::optional<std::vector<double>>& targets() const { return targets_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  // Rows encoded with encode_row, in table order.
  std::vector<std::vector<double>> encoded_rows() const;

  friend bool operator==(const DataTable&, const DataTable&) = default;

 private:
  FeatureSchema schema_;
  std::vector<DataRow> rows_;
  std::optional<std::vector<double>> targets_;
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

// CSV with a header row of feature names, optionally followed by a column
// named schema.target_name() holding the targets. Empty cells are rejected.
DataTable read_csv_table(std::string_view text, const FeatureSchema& schema);

// Variant for files without a known schema: columns whose cells all parse as
// numbers become numeric, the others categorical with sorted labels. A final
// column named target_name becomes the target.
DataTable read_csv_table_infer(std::string_view text,
                               const std::string& target_name);

std::string write_csv_table(const DataTable& table);

}  // namespace shapchat::model

#endif  // SHAPCHAT_MODEL_DATA_TABLE_HPP_
