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
#include "shapchat/model/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "shapchat/error.hpp"
#include "shapchat/random.hpp"

namespace shapchat::model {
namespace {

enum Column : std::size_t {
  kBatteryType,
  kCycleCount,
  kAvgTemperature,
  kDepthOfDischarge,
  kChargeRate,
  kCalendarAge,
  kStorageSoc,
};

double round_to(double x, double step) { return std::round(x / step) * step; }

double unclamped_soh(const FeatureSchema& schema, const DataRow& row) {
  const std::vector<double> x = encode_row(schema, row);
  static constexpr double kTypeOffset[] = {0.00, 0.02, 0.03};
  return 1.02 - 8e-5 * x[kCycleCount] -
         2e-3 * std::max(0.0, x[kAvgTemperature] - 25.0) -
         1e-3 * x[kDepthOfDischarge] / 10.0 -
         0.01 * std::max(0.0, x[kChargeRate] - 1.0) - 5e-5 * x[kCalendarAge] -
         kTypeOffset[static_cast<std::size_t>(x[kBatteryType])];
}

}  // namespace

FeatureSchema battery_schema() {
  return FeatureSchema(
      {
          {"battery_type", FeatureKind::kCategorical, {"LFP", "NMC", "NCA"}},
          {"cycle_count", FeatureKind::kNumeric, {}},
          {"avg_temperature_c", FeatureKind::kNumeric, {}},
          {"avg_depth_of_discharge_pct", FeatureKind::kNumeric, {}},
          {"avg_charge_rate_c", FeatureKind::kNumeric, {}},
          {"calendar_age_days", FeatureKind::kNumeric, {}},
          {"storage_soc_pct", FeatureKind::kNumeric, {}},
      },
      "soh");
}

double battery_soh_ground_truth(const DataRow& row) {
  static const FeatureSchema schema = battery_schema();
  return std::clamp(unclamped_soh(schema, row), 0.0, 1.0);
}

DataTable generate_synthetic_battery_table(int n, double noise_sigma,
                                           std::uint64_t seed) {
  if (n <= 0) fail(ErrorKind::kInvalidArgument, "n must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    fail(ErrorKind::kInvalidArgument, "noise_sigma must be finite and >= 0");
  }
  const FeatureSchema schema = battery_schema();
  const auto& types = schema.feature(kBatteryType).categories;
  Rng rng(seed);
  std::vector<DataRow> rows;
  std::vector<double> targets;
  rows.reserve(static_cast<std::size_t>(n));
  targets.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    DataRow row;
    row.values.reserve(schema.size());
    row.values.emplace_back(types[rng.below(types.size())]);
    row.values.emplace_back(static_cast<double>(rng.below(3001)));
    row.values.emplace_back(round_to(rng.uniform(5.0, 45.0), 0.1));
    row.values.emplace_back(round_to(rng.uniform(10.0, 100.0), 0.1));
    row.values.emplace_back(round_to(rng.uniform(0.1, 3.0), 0.01));
    row.values.emplace_back(static_cast<double>(rng.below(2001)));
    row.values.emplace_back(round_to(rng.uniform(0.0, 100.0), 0.1));
    double y = unclamped_soh(schema, row);
    if (noise_sigma > 0.0) y += noise_sigma * rng.normal();
    targets.push_back(std::clamp(y, 0.0, 1.0));
    rows.push_back(std::move(row));
  }
  return DataTable(schema, std::move(rows), std::move(targets));
}

}  // namespace shapchat::model
