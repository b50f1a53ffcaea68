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
#ifndef SHAPCHAT_MODEL_TRAINER_HPP_
#define SHAPCHAT_MODEL_TRAINER_HPP_

#include <cstdint>

#include "shapchat/model/data_table.hpp"
#include "shapchat/model/tree_ensemble.hpp"

namespace shapchat::model {

struct GbdtParams {
  int n_trees = 100;
  int max_depth = 4;
  double learning_rate = 0.1;
  int min_samples_leaf = 5;
  std::uint64_t seed = 0;
};

// Least-squares gradient boosting with greedy variance-reduction splits.
//
// Categorical features are ordered by mean residual inside each node and then
// split like ordered values, producing explicit category sets. Split ties go
// to the lower feature index, then the lower threshold. Training uses every
// row in every round, so the result does not depend on params.seed beyond
// recording it in the metadata.
TreeEnsemble train_gbdt(const DataTable& table, const GbdtParams& params);

double rmse(const TreeEnsemble& model, const DataTable& table);

}  // namespace shapchat::model

#endif  // SHAPCHAT_MODEL_TRAINER_HPP_
