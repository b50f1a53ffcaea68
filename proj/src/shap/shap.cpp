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
#include "shapchat/shap/shap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <utility>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "shapchat/error.hpp"
#include "shapchat/random.hpp"

namespace shapchat::shap {

using model::FeatureKind;
using nlohmann::json;

namespace {

using Mask = std::uint64_t;

// Hard limit for mask arithmetic and for the 2^d value table.
constexpr int kMaxExactFeatures = 26;
constexpr int kMaxKernelFeatures = 64;

// Evaluates v(S) for one instance against one background set.
class CoalitionGame {
 public:
  CoalitionGame(const TreeEnsemble& model, std::vector<double> instance,
                const BackgroundSet& background)
      : model_(model),
        instance_(std::move(instance)),
        background_(background.encoded()),
        scratch_(instance_.size()) {}

  std::size_t dimension() const { return instance_.size(); }

  double prediction() const { return model_.predict_encoded(instance_); }

  // Running mean, so a background whose spliced rows all predict the same
  // value yields exactly that value.
  double value(Mask coalition) {
    double mean = 0.0;
    std::size_t count = 0;
    const std::size_t d = instance_.size();
    for (const auto& b : background_) {
      for (std::size_t j = 0; j < d; ++j) {
        scratch_[j] = (coalition >> j) & 1U ? instance_[j] : b[j];
      }
      const double p = model_.predict_encoded(scratch_);
      ++count;
      mean += (p - mean) / static_cast<double>(count);
    }
    return mean;
  }

 private:
  const TreeEnsemble& model_;
  std::vector<double> instance_;
  const std::vector<std::vector<double>>& background_;
  std::vector<double> scratch_;
};

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double result = 1.0;
  for (int i = 1; i <= k; ++i) {
    result = result * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return std::round(result);
}

Mask full_mask(std::size_t d) {
  return d >= 64 ? ~Mask{0} : (Mask{1} << d) - 1;
}

void check_conformance(const TreeEnsemble& model,
                       const BackgroundSet& background) {
  if (!background.encoded().empty() &&
      background.encoded().front().size() != model.schema().size()) {
    fail(ErrorKind::kSchemaMismatch,
         "background rows do not match the model schema");
  }
}

}  // namespace

BackgroundSet::BackgroundSet(const FeatureSchema& schema,
                             std::vector<DataRow> rows)
    : rows_(std::move(rows)) {
  if (rows_.empty()) {
    fail(ErrorKind::kInvalidArgument, "background set must not be empty");
  }
  encoded_.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    try {
      encoded_.push_back(model::encode_row(schema, rows_[i]));
    } catch (const Error& e) {
      fail(e.kind(), fmt::format("background row {}: {}", i, e.what()));
    }
  }
}

BackgroundSet select_background(const DataTable& table, std::size_t max_rows,
                                std::uint64_t seed) {
  if (table.empty()) {
    fail(ErrorKind::kInvalidArgument, "cannot draw a background from an empty table");
  }
  if (max_rows == 0) fail(ErrorKind::kInvalidArgument, "max_rows must be positive");
  if (table.size() <= max_rows) return BackgroundSet(table.schema(), table.rows());
  std::vector<std::size_t> index(table.size());
  std::iota(index.begin(), index.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < max_rows; ++i) {
    const std::size_t j = i + rng.below(index.size() - i);
    std::swap(index[i], index[j]);
  }
  index.resize(max_rows);
  std::sort(index.begin(), index.end());
  std::vector<DataRow> rows;
  rows.reserve(max_rows);
  for (std::size_t i : index) rows.push_back(table.rows()[i]);
  return BackgroundSet(table.schema(), std::move(rows));
}

double shapley_kernel_weight(int d, int s) {
  if (d < 2) fail(ErrorKind::kInvalidArgument, "kernel weight needs d >= 2");
  if (s <= 0 || s >= d) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("kernel weight is infinite for s = {} (d = {})", s, d));
  }
  return static_cast<double>(d - 1) /
         (binomial(d, s) * static_cast<double>(s) * static_cast<double>(d - s));
}

double coalition_value(const TreeEnsemble& model, const DataRow& instance,
                       const BackgroundSet& background,
                       std::span<const std::size_t> coalition) {
  check_conformance(model, background);
  const std::size_t d = model.schema().size();
  if (d > kMaxKernelFeatures) {
    fail(ErrorKind::kInvalidArgument, "too many features for coalition masks");
  }
  Mask mask = 0;
  for (std::size_t i : coalition) {
    if (i >= d) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("coalition member {} out of range", i));
    }
    mask |= Mask{1} << i;
  }
  CoalitionGame game(model, model::encode_row(model.schema(), instance),
                     background);
  return game.value(mask);
}

Explanation exact_shap(const TreeEnsemble& model, const DataRow& instance,
                       const BackgroundSet& background,
                       const ExactOptions& options) {
  check_conformance(model, background);
  const std::size_t d = model.schema().size();
  const int limit = std::min(options.max_features, kMaxExactFeatures);
  if (static_cast<int>(d) > limit) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("exact enumeration is limited to {} features, model has "
                     "{}; use kernel_shap",
                     limit, d));
  }
  CoalitionGame game(model, model::encode_row(model.schema(), instance),
                     background);
  const std::size_t n_coalitions = std::size_t{1} << d;
  std::vector<double> value(n_coalitions);
  for (std::size_t m = 0; m < n_coalitions; ++m) value[m] = game.value(m);

  // |S|! (d - |S| - 1)! / d! = 1 / (d * C(d - 1, |S|)).
  std::vector<double> weight(d);
  for (std::size_t s = 0; s < d; ++s) {
    weight[s] = 1.0 / (static_cast<double>(d) *
                       binomial(static_cast<int>(d) - 1, static_cast<int>(s)));
  }

  Explanation out;
  out.shap_values.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const Mask bit = Mask{1} << i;
    double phi = 0.0;
    for (Mask m = 0; m < n_coalitions; ++m) {
      if (m & bit) continue;
      phi += weight[static_cast<std::size_t>(std::popcount(m))] *
             (value[m | bit] - value[m]);
    }
    out.shap_values[i] = phi;
  }
  out.base_value = value[0];
  out.prediction = game.prediction();
  out.feature_values = instance;
  out.method = ShapMethod::kExact;
  return out;
}

Explanation kernel_shap(const TreeEnsemble& model, const DataRow& instance,
                        const BackgroundSet& background,
                        const KernelOptions& options) {
  check_conformance(model, background);
  const std::size_t d = model.schema().size();
  const int di = static_cast<int>(d);
  if (options.budget && *options.budget < static_cast<std::int64_t>(d)) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("budget {} is below the feature count {}; the regression "
                     "would be under-determined",
                     *options.budget, d));
  }
  if (di > kMaxKernelFeatures) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("kernel_shap supports at most {} features", kMaxKernelFeatures));
  }
  CoalitionGame game(model, model::encode_row(model.schema(), instance),
                     background);
  Explanation out;
  out.feature_values = instance;
  out.method = ShapMethod::kKernel;
  out.prediction = game.prediction();
  out.base_value = game.value(0);
  out.shap_values.assign(d, 0.0);
  const double delta = out.prediction - out.base_value;

  // Features the model never splits on are dummies; the regression runs over
  // the remaining players only.
  std::vector<std::size_t> active;
  const std::vector<bool> used = model.used_features();
  for (std::size_t i = 0; i < d; ++i) {
    if (used[i]) active.push_back(i);
  }
  const std::size_t m = active.size();
  const int mi = static_cast<int>(m);
  auto expand = [&active](Mask reduced) {
    Mask full = 0;
    for (std::size_t j = 0; reduced != 0; ++j, reduced >>= 1) {
      if (reduced & 1U) full |= Mask{1} << active[j];
    }
    return full;
  };
  if (m <= 1) {
    if (m == 1) out.shap_values[active[0]] = delta;
    out.n_samples = 0;
    return out;
  }

  // (coalition over active features, regression weight)
  std::vector<std::pair<Mask, double>> coalitions;
  const bool small = m < 62;
  const std::int64_t all_count =
      small ? (std::int64_t{1} << m) - 2 : INT64_MAX;
  if (!options.budget || *options.budget >= all_count) {
    if (mi > options.max_enumerated_features) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("full enumeration is limited to {} features, model uses "
                       "{}; pass a sampling budget",
                       options.max_enumerated_features, m));
    }
    std::vector<double> weight(m);
    for (int s = 1; s < mi; ++s) weight[static_cast<std::size_t>(s)] = shapley_kernel_weight(mi, s);
    coalitions.reserve(static_cast<std::size_t>(all_count));
    for (Mask c = 1; c <= static_cast<Mask>(all_count); ++c) {
      coalitions.emplace_back(c, weight[static_cast<std::size_t>(std::popcount(c))]);
    }
  } else {
    // Sizes drawn with probability proportional to (m-1) / (s (m-s)), which is
    // the kernel weight summed over all coalitions of that size. Sampled
    // coalitions then enter the regression with their multiplicity.
    std::vector<double> cumulative(m - 1);
    double total = 0.0;
    for (int s = 1; s < mi; ++s) {
      total += 1.0 / (static_cast<double>(s) * static_cast<double>(mi - s));
      cumulative[static_cast<std::size_t>(s - 1)] = total;
    }
    Rng rng(options.seed);
    std::map<Mask, double> counts;
    std::vector<std::size_t> pool(m);
    const Mask full = full_mask(m);
    std::int64_t draws = 0;
    while (draws < *options.budget) {
      const double u = rng.uniform() * total;
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      const std::size_t size = std::min<std::size_t>(
          static_cast<std::size_t>(it - cumulative.begin()) + 1, m - 1);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      Mask c = 0;
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t j = i + rng.below(m - i);
        std::swap(pool[i], pool[j]);
        c |= Mask{1} << pool[i];
      }
      counts[c] += 1.0;
      ++draws;
      if (draws < *options.budget) {
        counts[full & ~c] += 1.0;
        ++draws;
      }
    }
    coalitions.assign(counts.begin(), counts.end());
  }

  // Eliminate the last attribution through sum(phi) = delta.
  const std::size_t rows = coalitions.size();
  const std::size_t cols = m - 1;
  const Mask last = Mask{1} << (m - 1);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto [c, w] = coalitions[r];
    const double sw = std::sqrt(w);
    const double z_last = (c & last) ? 1.0 : 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double z = ((c >> j) & 1U) ? 1.0 : 0.0;
      a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = sw * (z - z_last);
    }
    b(static_cast<Eigen::Index>(r)) = sw * (game.value(expand(c)) - out.base_value - z_last * delta);
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < static_cast<Eigen::Index>(cols)) {
    fail(ErrorKind::kPrecondition,
         fmt::format("kernel regression is rank deficient ({} of {}) with {} "
                     "distinct coalitions; increase the budget",
                     qr.rank(), cols, rows));
  }
  const Eigen::VectorXd beta = qr.solve(b);
  double partial = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    out.shap_values[active[j]] = beta(static_cast<Eigen::Index>(j));
    partial += beta(static_cast<Eigen::Index>(j));
  }
  out.shap_values[active[m - 1]] = delta - partial;
  out.n_samples = static_cast<std::int64_t>(rows);
  return out;
}

Explanation explain(const TreeEnsemble& model, const DataRow& instance,
                    const BackgroundSet& background,
                    const ExplainOptions& options) {
  return options.method == ShapMethod::kExact
             ? exact_shap(model, instance, background, options.exact)
             : kernel_shap(model, instance, background, options.kernel);
}

std::vector<Explanation> explain_table(const TreeEnsemble& model,
                                       const DataTable& table,
                                       const BackgroundSet& background,
                                       const ExplainOptions& options) {
  const std::size_t n = table.size();
  std::vector<Explanation> out(n);
  std::vector<std::exception_ptr> errors(n);
  // Each worker owns a strided subset of rows, so results do not depend on timing.
  const std::size_t workers = std::min<std::size_t>(
      n, std::max(1U, std::thread::hardware_concurrency()));
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t r = first; r < n; r += stride) {
      try {
        out[r] = explain(model, table.rows()[r], background, options);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w, workers);
    for (auto& t : threads) t.join();
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (!errors[r]) continue;
    try {
      std::rethrow_exception(errors[r]);
    } catch (const Error& e) {
      fail(e.kind(), fmt::format("row {}: {}", r, e.what()));
    }
  }
  return out;
}

GlobalSummary global_summary(std::span<const Explanation> explanations) {
  if (explanations.empty()) {
    fail(ErrorKind::kInvalidArgument, "global summary needs at least one explanation");
  }
  const std::size_t d = explanations.front().shap_values.size();
  GlobalSummary out;
  out.mean_abs_shap.assign(d, 0.0);
  out.points.assign(d, {});
  for (std::size_t e = 0; e < explanations.size(); ++e) {
    const Explanation& ex = explanations[e];
    if (ex.shap_values.size() != d || ex.feature_values.values.size() != d) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("explanation {} has a different arity", e));
    }
    for (std::size_t i = 0; i < d; ++i) {
      out.mean_abs_shap[i] += std::abs(ex.shap_values[i]);
      out.points[i].push_back({ex.feature_values.values[i], ex.shap_values[i]});
    }
  }
  for (double& m : out.mean_abs_shap) m /= static_cast<double>(explanations.size());
  return out;
}

std::vector<std::size_t> top_features(const GlobalSummary& summary,
                                      std::size_t k) {
  std::vector<std::size_t> index(summary.mean_abs_shap.size());
  std::iota(index.begin(), index.end(), std::size_t{0});
  std::stable_sort(index.begin(), index.end(), [&](std::size_t a, std::size_t b) {
    return summary.mean_abs_shap[a] > summary.mean_abs_shap[b];
  });
  index.resize(std::min(k, index.size()));
  return index;
}

DependenceData dependence_data(std::span<const Explanation> explanations,
                               std::size_t feature, std::size_t color_feature) {
  DependenceData out;
  out.feature_index = feature;
  out.color_feature_index = color_feature;
  for (std::size_t e = 0; e < explanations.size(); ++e) {
    const Explanation& ex = explanations[e];
    const std::size_t d = ex.shap_values.size();
    if (feature >= d || color_feature >= d) {
      fail(ErrorKind::kInvalidArgument,
           fmt::format("feature index {} / color index {} out of range for {} "
                       "features",
                       feature, color_feature, d));
    }
    out.points.push_back({ex.feature_values.values[feature],
                          ex.shap_values[feature],
                          ex.feature_values.values[color_feature]});
  }
  return out;
}

std::vector<std::size_t> order_by_magnitude(std::span<const double> shap) {
  std::vector<std::size_t> index(shap.size());
  std::iota(index.begin(), index.end(), std::size_t{0});
  std::stable_sort(index.begin(), index.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(shap[a]) > std::abs(shap[b]);
  });
  return index;
}

WaterfallData waterfall_data(const Explanation& explanation,
                             const FeatureSchema& schema,
                             std::size_t max_display) {
  if (max_display < 1) fail(ErrorKind::kInvalidArgument, "max_display must be >= 1");
  const auto& phi = explanation.shap_values;
  if (phi.size() != schema.size() ||
      explanation.feature_values.values.size() != schema.size()) {
    fail(ErrorKind::kSchemaMismatch, "explanation does not match the schema");
  }
  WaterfallData out;
  out.base_value = explanation.base_value;
  const auto order = order_by_magnitude(phi);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t i = order[r];
    if (r < max_display) {
      out.contributions.push_back({schema.feature(i).name,
                                   explanation.feature_values.values[i], phi[i]});
    } else {
      out.remainder += phi[i];
    }
  }
  out.final_value = explanation.prediction;
  return out;
}

namespace {

std::string_view method_name(ShapMethod m) {
  return m == ShapMethod::kExact ? "exact" : "kernel";
}

double get_number(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    fail(ErrorKind::kFormat, fmt::format("explanation.{}: expected a number", key));
  }
  return j[key].get<double>();
}

FeatureValue value_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  fail(ErrorKind::kFormat, "feature value must be a number or a string");
}

}  // namespace

json to_json(const Explanation& ex) {
  json values = json::array();
  for (const auto& v : ex.feature_values.values) values.push_back(model::value_to_json(v));
  json out = {
      {"base_value", ex.base_value},
      {"shap_values", ex.shap_values},
      {"feature_values", std::move(values)},
      {"prediction", ex.prediction},
      {"method", std::string(method_name(ex.method))},
  };
  if (ex.n_samples) out["n_samples"] = *ex.n_samples;
  return out;
}

Explanation explanation_from_json(const FeatureSchema& schema, const json& j) {
  if (!j.is_object()) fail(ErrorKind::kFormat, "explanation: expected an object");
  Explanation ex;
  ex.base_value = get_number(j, "base_value");
  ex.prediction = get_number(j, "prediction");
  if (!j.contains("shap_values") || !j["shap_values"].is_array()) {
    fail(ErrorKind::kFormat, "explanation.shap_values: expected an array");
  }
  for (const json& v : j["shap_values"]) {
    if (!v.is_number()) fail(ErrorKind::kFormat, "explanation.shap_values: expected numbers");
    ex.shap_values.push_back(v.get<double>());
  }
  if (!j.contains("feature_values") || !j["feature_values"].is_array()) {
    fail(ErrorKind::kFormat, "explanation.feature_values: expected an array");
  }
  for (const json& v : j["feature_values"]) ex.feature_values.values.push_back(value_from_json(v));
  const std::string method = j.value("method", std::string("exact"));
  if (method == "exact") {
    ex.method = ShapMethod::kExact;
  } else if (method == "kernel") {
    ex.method = ShapMethod::kKernel;
  } else {
    fail(ErrorKind::kFormat, fmt::format("explanation.method: unknown '{}'", method));
  }
  if (j.contains("n_samples")) ex.n_samples = j["n_samples"].get<std::int64_t>();
  if (ex.shap_values.size() != schema.size()) {
    fail(ErrorKind::kSchemaMismatch, "explanation.shap_values arity differs from the schema");
  }
  model::encode_row(schema, ex.feature_values);
  return ex;
}

json to_json(const GlobalSummary& summary, const FeatureSchema& schema) {
  json names = json::array();
  for (const auto& f : schema.features()) names.push_back(f.name);
  json points = json::array();
  for (const auto& per_feature : summary.points) {
    json list = json::array();
    for (const auto& p : per_feature) {
      list.push_back({{"value", model::value_to_json(p.value)}, {"shap", p.shap}});
    }
    points.push_back(std::move(list));
  }
  return {{"feature_names", std::move(names)},
          {"mean_abs_shap", summary.mean_abs_shap},
          {"points", std::move(points)}};
}

json to_json(const DependenceData& data) {
  json points = json::array();
  for (const auto& p : data.points) {
    points.push_back({{"value", model::value_to_json(p.value)},
                      {"shap", p.shap},
                      {"color", model::value_to_json(p.color)}});
  }
  return {{"feature_index", data.feature_index},
          {"color_feature_index", data.color_feature_index},
          {"points", std::move(points)}};
}

json to_json(const WaterfallData& data) {
  json contributions = json::array();
  for (const auto& c : data.contributions) {
    contributions.push_back({{"feature_name", c.feature_name},
                             {"feature_value", model::value_to_json(c.feature_value)},
                             {"shap_value", c.shap_value}});
  }
  return {{"base_value", data.base_value},
          {"contributions", std::move(contributions)},
          {"remainder", data.remainder},
          {"final_value", data.final_value}};
}

WaterfallData waterfall_from_json(const json& j) {
  try {
    WaterfallData out;
    out.base_value = j.at("base_value").get<double>();
    out.remainder = j.at("remainder").get<double>();
    out.final_value = j.at("final_value").get<double>();
    for (const json& c : j.at("contributions")) {
      out.contributions.push_back({c.at("feature_name").get<std::string>(),
                                   value_from_json(c.at("feature_value")),
                                   c.at("shap_value").get<double>()});
    }
    return out;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, fmt::format("waterfall: {}", e.what()));
  }
}

}  // namespace shapchat::shap
