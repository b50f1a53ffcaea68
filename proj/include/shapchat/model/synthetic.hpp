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
#ifndef SHAPCHAT_MODEL_SYNTHETIC_HPP_
#define SHAPCHAT_MODEL_SYNTHETIC_HPP_

#include <cstdint>

#include "shapchat/model/data_table.hpp"

namespace shapchat::model {

// battery_type {LFP, NMC, NCA}, cycle_count, avg_temperature_c,
// avg_depth_of_discharge_pct, avg_charge_rate_c, calendar_age_days,
// storage_soc_pct; target "soh".
FeatureSchema battery_schema();

// Noise-free state of health, clamped to [0, 1]:
//
//   1.02 - 8e-5 * cycle_count
//        - 2e-3 * max(0, avg_temperature_c - 25)
//        - 1e-3 * avg_depth_of_discharge_pct / 10
//        - 0.01 * max(0, avg_charge_rate_c - 1)
//        - 5e-5 * calendar_age_days
//        - {LFP: 0, NMC: 0.02, NCA: 0.03}
//
// storage_soc_pct has no effect. The coefficients are made up so that
// attribution tests have a known additive structure; this is not measured
// battery data.
double battery_soh_ground_truth(const DataRow& row);

// Rows drawn uniformly over fixed feature ranges; target is the ground truth
// plus N(0, noise_sigma^2), clamped to [0, 1]. Deterministic per seed.
DataTable generate_synthetic_battery_table(int n, double noise_sigma,
                                           std::uint64_t seed);

}  // namespace shapchat::model

#endif  // SHAPCHAT_MODEL_SYNTHETIC_HPP_
