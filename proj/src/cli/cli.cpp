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


#include "shapchat/cli/cli.hpp"

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "shapchat/error.hpp"
#include "shapchat/eval/eval.hpp"
#include "shapchat/finetune/finetune.hpp"
#include "shapchat/llm/llm.hpp"
#include "shapchat/model/data_table.hpp"
#include "shapchat/model/synthetic.hpp"
#include "shapchat/model/trainer.hpp"
#include "shapchat/model/tree_ensemble.hpp"
#include "shapchat/service/service.hpp"
#include "shapchat/shap/shap.hpp"

namespace shapchat::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, fmt::format("cannot read {}", path.string()));
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::kIo, fmt::format("error reading {}", path.string()));
  return text;
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + fmt::format(".tmp-{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    if (!out) {
      std::error_code ignored;
      fs::remove(tmp, ignored);
      fail(ErrorKind::kIo, fmt::format("cannot write {}", path.string()));
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    fail(ErrorKind::kIo, fmt::format("cannot write {}: {}", path.string(), ec.message()));
  }
}

namespace {

// Command line mistakes that CLI11 cannot express as constraints.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackendFlags {
  std::optional<std::string> url;
  std::optional<std::string> model_name;
  std::optional<int> timeout_ms;
  std::optional<int> retries;
  std::optional<std::string> mock;
  std::string mock_reply = "OK";
  double mock_logprob = -0.5;
};

struct Options {
  std::optional<fs::path> out;
  std::uint64_t seed = 0;
  bool quiet = false;

  int n = 1000;
  double noise = 0.02;

  fs::path data;
  std::string target = "soh";
  std::optional<std::string> schema;
  model::GbdtParams gbdt;

  fs::path model;
  std::optional<fs::path> row;
  std::optional<fs::path> rows;
  std::optional<fs::path> background;
  std::size_t background_rows = 100;
  std::string method = "kernel";
  std::optional<std::int64_t> budget;

  std::string category = "battery_type";
  std::size_t dependence_features = 15;
  std::optional<fs::path> step_config;

  std::size_t k = 20;
  double train_frac = 0.8;
  std::optional<fs::path> templates;
  std::size_t max_rows = 0;
  std::optional<std::string> description;
  fs::path out_dir;

  fs::path corpus_dir;
  std::optional<std::string> category_name;
  std::optional<std::string> eval_doc;
  std::optional<fs::path> split_out_dir;

  std::vector<fs::path> scores;
  std::vector<fs::path> documents;
  fs::path records;
  std::optional<fs::path> provenance;

  fs::path ablation_input;
  std::string format = "json";

  std::optional<fs::path> service_config;
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<fs::path> store;
  bool check_backend = false;

  BackendFlags backend;
};

class Context {
 public:
  Context(const Options& options, std::ostream& out, std::ostream& err)
      : options_(options), out_(out), err_(err) {}

  void emit(std::string_view content) const {
    if (options_.out) {
      write_file_atomic(*options_.out, content);
    } else {
      out_ << content;
      out_.flush();
    }
  }

  void info(std::string_view message) const {
    if (!options_.quiet) err_ << message << '\n';
  }

  std::ostream& err() const { return err_; }

 private:
  const Options& options_;
  std::ostream& out_;
  std::ostream& err_;
};

// Runs f and prefixes any error with the path it concerns.
template <typename F>
auto with_path(const fs::path& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    const std::string what = e.what();
    if (what.rfind(path.string(), 0) == 0) throw;
    fail(e.kind(), fmt::format("{}: {}", path.string(), what));
  }
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, fmt::format("{}: {}", path.string(), e.what()));
  }
}

ordered_json read_ordered_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return ordered_json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }
std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

model::TreeEnsemble load_model(const fs::path& path) {
  const std::string text = read_file(path);
  return with_path(path, [&] { return model::load_ensemble(text); });
}

model::DataTable load_table(const fs::path& path, const model::FeatureSchema& schema) {
  const std::string text = read_file(path);
  return with_path(path, [&] { return model::read_csv_table(text, schema); });
}

shap::BackgroundSet load_background(const Options& o, const model::FeatureSchema& schema,
                                    const model::DataTable* fallback) {
  if (o.background) {
    const model::DataTable table = load_table(*o.background, schema);
    return with_path(*o.background, [&] {
      return shap::select_background(table, o.background_rows, o.seed);
    });
  }
  if (!fallback) throw UsageError("--background is required");
  return shap::select_background(*fallback, o.background_rows, o.seed);
}

shap::ExplainOptions explain_options(const Options& o) {
  shap::ExplainOptions options;
  if (o.method == "exact") {
    options.method = shap::ShapMethod::kExact;
  } else if (o.method == "kernel") {
    options.method = shap::ShapMethod::kKernel;
  } else {
    throw UsageError(fmt::format("--method must be exact or kernel, got '{}'", o.method));
  }
  if (o.budget) {
    if (*o.budget < 1) throw UsageError("--budget must be positive");
    options.kernel.budget = static_cast<std::size_t>(*o.budget);
  }
  options.kernel.seed = o.seed;
  return options;
}

std::shared_ptr<llm::LlmClient> make_client(const BackendFlags& flags) {
  llm::BackendConfig config = llm::apply_env({});
  if (flags.url) config.base_url = *flags.url;
  if (flags.model_name) config.model_name = *flags.model_name;
  if (flags.timeout_ms) config.timeout_ms = *flags.timeout_ms;
  if (flags.retries) config.retries = *flags.retries;
  std::shared_ptr<llm::Transport> transport;
  if (flags.mock) {
    llm::MockOptions mock;
    if (*flags.mock == "echo_top_feature") {
      mock.mode = llm::MockMode::kEchoTopFeature;
    } else if (*flags.mock == "fixed_reply") {
      mock.mode = llm::MockMode::kFixedReply;
    } else if (*flags.mock == "fail_after_n") {
      mock.mode = llm::MockMode::kFailAfterN;
    } else {
      throw UsageError(fmt::format(
          "--mock must be echo_top_feature, fixed_reply or fail_after_n, got '{}'",
          *flags.mock));
    }
    mock.fixed_reply = flags.mock_reply;
    mock.token_logprob = flags.mock_logprob;
    transport = std::make_shared<llm::MockBackend>(mock);
    config.backoff_ms = 0;
  } else {
    transport = std::make_shared<llm::HttpTransport>(config.base_url);
  }
  return std::make_shared<llm::LlmClient>(config, transport);
}

void write_step_config(const Options& o, finetune::FinetuneStep step) {
  if (o.step_config) write_file_atomic(*o.step_config, dump(finetune::to_json(
                                                           finetune::finetune_config_for_step(step))));
}

void cmd_synth(const Options& o, const Context& ctx) {
  const model::DataTable table = model::generate_synthetic_battery_table(o.n, o.noise, o.seed);
  ctx.emit(model::write_csv_table(table));
}

void cmd_train(const Options& o, const Context& ctx) {
  const std::string text = read_file(o.data);
  const model::DataTable table = with_path(o.data, [&] {
    if (!o.schema) return model::read_csv_table_infer(text, o.target);
    if (*o.schema == "battery") return model::read_csv_table(text, model::battery_schema());
    return model::read_csv_table(text, model::schema_from_json(read_json(*o.schema)));
  });
  if (!table.targets()) {
    fail(ErrorKind::kInvalidArgument,
         fmt::format("{}: no target column '{}'", o.data.string(), table.schema().target_name()));
  }
  model::GbdtParams params = o.gbdt;
  params.seed = o.seed;
  const model::TreeEnsemble model = model::train_gbdt(table, params);
  ctx.emit(model::save_ensemble(model));
  ctx.info(fmt::format("trained {} trees on {} rows; training RMSE {:.6f}", model.trees().size(),
                       table.size(), model::rmse(model, table)));
}

void cmd_explain(const Options& o, const Context& ctx) {
  if (o.row.has_value() == o.rows.has_value()) {
    throw UsageError("explain needs exactly one of --row and --rows");
  }
  const model::TreeEnsemble model = load_model(o.model);
  const model::FeatureSchema& schema = model.schema();
  const shap::BackgroundSet background = load_background(o, schema, nullptr);
  const shap::ExplainOptions options = explain_options(o);
  if (o.row) {
    const json row_json = read_json(*o.row);
    const model::DataRow row =
        with_path(*o.row, [&] { return model::row_from_json(schema, row_json); });
    ctx.emit(dump(shap::to_json(shap::explain(model, row, background, options))));
    return;
  }
  const model::DataTable table = load_table(*o.rows, schema);
  const auto explanations = shap::explain_table(model, table, background, options);
  json list = json::array();
  for (const auto& e : explanations) list.push_back(shap::to_json(e));
  json out = {{"explanations", std::move(list)}};
  if (!explanations.empty()) {
    out["summary"] = shap::to_json(shap::global_summary(explanations), schema);
  }
  ctx.emit(dump(out));
}

void cmd_gen_global_doc(const Options& o, const Context& ctx) {
  const model::TreeEnsemble model = load_model(o.model);
  const model::DataTable table = load_table(o.data, model.schema());
  const shap::BackgroundSet background = load_background(o, model.schema(), &table);
  finetune::GlobalDocOptions options;
  options.explain = explain_options(o);
  options.dependence_features = o.dependence_features;
  const std::string doc =
      finetune::generate_global_explanation_doc(model, table, background, o.category, options);
  write_step_config(o, finetune::FinetuneStep::kGlobalExplanation);
  ctx.emit(doc);
}

std::vector<std::string> load_templates(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() != '#') out.push_back(std::move(line));
    pos = end + 1;
  }
  if (out.empty()) fail(ErrorKind::kFormat, fmt::format("{}: no templates", path.string()));
  return out;
}

void cmd_gen_align(const Options& o, const Context& ctx) {
  const model::TreeEnsemble model = load_model(o.model);
  model::DataTable table = load_table(o.data, model.schema());
  const shap::BackgroundSet background = load_background(o, model.schema(), &table);
  if (o.max_rows > 0 && o.max_rows < table.size()) {
    const shap::BackgroundSet sample = shap::select_background(table, o.max_rows, o.seed + 1);
    table = model::DataTable(table.schema(), sample.rows());
  }
  const std::vector<std::string> templates =
      o.templates ? load_templates(*o.templates) : finetune::default_question_templates();
  finetune::AlignmentOptions options;
  options.k = o.k;
  options.train_frac = o.train_frac;
  options.seed = o.seed;
  if (o.description) options.data_description = *o.description;
  options.explain = explain_options(o);
  const finetune::AlignmentDataset ds =
      finetune::generate_alignment_dataset(model, table, background, templates, options);

  ordered_json provenance;
  provenance["seed"] = o.seed;
  provenance["k"] = o.k;
  provenance["train_frac"] = o.train_frac;
  provenance["templates"] = templates;
  const ordered_json records = finetune::provenance_json(ds);
  for (const auto& [key, value] : records.items()) provenance[key] = value;

  const std::string train = finetune::to_jsonl(ds.train);
  const std::string eval = finetune::to_jsonl(ds.eval);
  const std::string prov = dump(provenance);
  std::error_code ec;
  fs::create_directories(o.out_dir, ec);
  if (ec) fail(ErrorKind::kIo, fmt::format("cannot create {}: {}", o.out_dir.string(), ec.message()));
  write_file_atomic(o.out_dir / "train.jsonl", train);
  write_file_atomic(o.out_dir / "eval.jsonl", eval);
  write_file_atomic(o.out_dir / "provenance.json", prov);
  write_step_config(o, finetune::FinetuneStep::kHumanAlignment);
  ordered_json summary;
  summary["train_records"] = ds.train.size();
  summary["eval_records"] = ds.eval.size();
  summary["files"] = {"train.jsonl", "eval.jsonl", "provenance.json"};
  ctx.emit(dump(summary));
}

void cmd_split_corpus(const Options& o, const Context& ctx) {
  const finetune::DomainCategory category = finetune::load_category(o.corpus_dir, o.category_name);
  const finetune::CorpusSplit split = with_path(o.corpus_dir, [&] {
    return finetune::split_in_domain_corpus(category, o.eval_doc, o.seed);
  });
  if (o.split_out_dir) {
    const fs::path train_dir = *o.split_out_dir / "train";
    const fs::path eval_dir = *o.split_out_dir / "eval";
    std::error_code ec;
    fs::create_directories(train_dir, ec);
    if (!ec) fs::create_directories(eval_dir, ec);
    if (ec) {
      fail(ErrorKind::kIo,
           fmt::format("cannot create {}: {}", o.split_out_dir->string(), ec.message()));
    }
    for (const auto& doc : split.train_docs) write_file_atomic(train_dir / (doc.id + ".txt"), doc.text);
    write_file_atomic(eval_dir / (split.eval_doc.id + ".txt"), split.eval_doc.text);
    write_file_atomic(*o.split_out_dir / "manifest.json", dump(finetune::split_manifest(split)));
  }
  write_step_config(o, finetune::FinetuneStep::kInDomain);
  ctx.emit(dump(finetune::split_manifest(split)));
}

std::vector<eval::TokenScore> load_scores(const fs::path& path) {
  const json j = read_json(path);
  return with_path(path, [&] {
    std::vector<eval::TokenScore> out;
    const json& list = j.is_object() && j.contains("token_logprobs") ? j["token_logprobs"] : j;
    if (!list.is_array()) fail(ErrorKind::kFormat, "expected an array of token scores");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const json& item = list[i];
      if (item.is_number()) {
        out.push_back({"", item.get<double>()});
      } else if (item.is_object() && item.contains("logprob") && item["logprob"].is_number()) {
        out.push_back({item.value("token", std::string()), item["logprob"].get<double>()});
      } else {
        fail(ErrorKind::kFormat, fmt::format("token score {} is not a number", i));
      }
    }
    return out;
  });
}

void cmd_eval_ppl(const Options& o, const Context& ctx) {
  if (o.scores.empty() == o.documents.empty()) {
    throw UsageError("eval-ppl needs --scores or --document (but not both)");
  }
  const eval::WarningSink warn = [&ctx](std::string_view w) { ctx.info(fmt::format("warning: {}", w)); };
  ordered_json reports = ordered_json::array();
  for (const fs::path& path : o.scores) {
    const auto scores = load_scores(path);
    const double value = with_path(path, [&] { return eval::perplexity(scores, warn); });
    reports.push_back(eval::to_json(
        eval::EvalReport{eval::Metric::kPerplexity, value, scores.size(), path.stem().string()}));
  }
  if (!o.documents.empty()) {
    const auto client = make_client(o.backend);
    for (const fs::path& path : o.documents) {
      const std::string text = read_file(path);
      const auto scores = with_path(path, [&] { return client->score_tokens("", text); });
      const double value = with_path(path, [&] { return eval::perplexity(scores, warn); });
      reports.push_back(eval::to_json(
          eval::EvalReport{eval::Metric::kPerplexity, value, scores.size(), path.stem().string()}));
    }
  }
  ctx.emit(dump(reports.size() == 1 ? reports[0] : reports));
}

void cmd_eval_loss(const Options& o, const Context& ctx) {
  const std::string text = read_file(o.records);
  const auto alpaca = with_path(o.records, [&] { return finetune::parse_jsonl(text); });
  std::vector<finetune::QARecord> records;
  for (std::size_t i = 0; i < alpaca.size(); ++i) {
    records.push_back({alpaca[i], i, o.seed, 0});
  }
  if (o.provenance) {
    const json prov = read_json(*o.provenance);
    with_path(*o.provenance, [&] {
      const std::string side = o.records.stem().string() == "train" ? "train" : "eval";
      if (!prov.contains(side) || prov[side].size() != records.size()) {
        fail(ErrorKind::kFormat,
             fmt::format("provenance '{}' does not have {} entries", side, records.size()));
      }
      for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].row_index = prov[side][i].at("row_index").get<std::size_t>();
        records[i].seed = prov[side][i].at("seed").get<std::uint64_t>();
        records[i].template_id = prov[side][i].at("template_id").get<std::size_t>();
      }
    });
  }
  const auto client = make_client(o.backend);
  std::size_t n_tokens = 0;
  const eval::Scorer scorer = [&](const std::string& prompt, const std::string& target) {
    auto scores = client->score_tokens(prompt, target);
    n_tokens += scores.size();
    return scores;
  };
  const eval::WarningSink warn = [&ctx](std::string_view w) { ctx.info(fmt::format("warning: {}", w)); };
  const double loss = with_path(o.records, [&] { return eval::qa_loss(records, scorer, warn); });
  ctx.emit(dump(eval::to_json(
      eval::EvalReport{eval::Metric::kLoss, loss, n_tokens, o.records.stem().string()})));
}

void cmd_ablation(const Options& o, const Context& ctx) {
  if (o.format != "json" && o.format != "table") {
    throw UsageError(fmt::format("--format must be json or table, got '{}'", o.format));
  }
  const ordered_json input = read_ordered_json(o.ablation_input);
  const eval::AblationReport report =
      with_path(o.ablation_input, [&] { return eval::ablation_report_from_json(input); });
  ctx.emit(o.format == "table" ? eval::render_table(report) : dump(eval::to_json(report)));
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

void cmd_serve(const Options& o, const Context& ctx) {
  service::ServeConfig config;
  if (o.service_config) {
    const json j = read_json(*o.service_config);
    config = with_path(*o.service_config, [&] {
      return service::serve_config_from_json(j, o.service_config->parent_path());
    });
  }
  config = service::apply_env(config);
  if (o.host) config.host = *o.host;
  if (o.port) config.port = *o.port;
  if (o.store) config.store_path = *o.store;
  if (!o.model.empty()) config.model_path = o.model;
  if (o.background) config.background_path = *o.background;
  if (config.model_path.empty()) throw UsageError("serve needs --model");
  if (config.background_path.empty()) throw UsageError("serve needs --background");

  BackendFlags flags = o.backend;
  if (!flags.url) flags.url = config.backend.base_url;
  if (!flags.model_name) flags.model_name = config.backend.model_name;
  const auto client = make_client(flags);
  if (o.check_backend && !client->ping()) {
    fail(ErrorKind::kBackendUnreachable,
         fmt::format("backend at {} is not reachable", client->config().base_url));
  }
  model::TreeEnsemble model = load_model(config.model_path);
  const model::DataTable bg_table = load_table(config.background_path, model.schema());
  shap::BackgroundSet background = with_path(config.background_path, [&] {
    return shap::select_background(bg_table, config.background_rows, config.seed);
  });
  service::ServiceOptions options;
  options.k = config.k;
  options.max_prompt_chars = config.max_prompt_chars;
  options.store_path = config.store_path;
  options.explain.kernel.seed = config.seed;
  service::ChatService chat(std::move(model), std::move(background), client, options);

  httplib::Server server;
  service::mount_routes(server, chat);
  const int port = config.port == 0 ? server.bind_to_any_port(config.host)
                                    : (server.bind_to_port(config.host, config.port) ? config.port : -1);
  if (port < 0) {
    fail(ErrorKind::kIo, fmt::format("cannot listen on {}:{}", config.host, config.port));
  }
  ctx.info(fmt::format("listening on http://{}:{}", config.host, port));
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  server.listen_after_bind();
  g_server = nullptr;
}

void add_backend_flags(CLI::App* sub, BackendFlags& b) {
  sub->add_option("--backend-url", b.url, "OpenAI-compatible server (default $LLM_BASE_URL)");
  sub->add_option("--model-name", b.model_name, "Model name sent to the backend ($LLM_MODEL)");
  sub->add_option("--timeout-ms", b.timeout_ms, "Request timeout")->check(CLI::PositiveNumber);
  sub->add_option("--retries", b.retries, "Retries on transport failures and 5xx")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--mock", b.mock,
                  "Use the built-in mock backend: echo_top_feature, fixed_reply or fail_after_n");
  sub->add_option("--mock-reply", b.mock_reply, "Reply of the fixed_reply mock");
  sub->add_option("--mock-logprob", b.mock_logprob, "Logprob of every mock token");
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kBackendUnreachable:
    case ErrorKind::kBackendRejected:
    case ErrorKind::kProtocol:
    case ErrorKind::kCapability:
      return kExitBackend;
    default:
      return kExitInput;
  }
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Explainable battery-health chatbot toolkit", "shapchat"};
  app.set_config("--config", "", "Read flag defaults from a TOML or INI file");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--out", o.out, "Write the result to this file instead of stdout");
  app.add_option("--seed", o.seed, "Seed for every random choice");
  app.add_flag("--quiet", o.quiet, "Suppress informational messages");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic battery table as CSV");
  synth->add_option("--n", o.n, "Number of rows")->check(CLI::PositiveNumber);
  synth->add_option("--noise", o.noise, "Standard deviation of the target noise")
      ->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "Train a gradient-boosted tree ensemble");
  train->add_option("--data", o.data, "Training CSV with a final target column")->required();
  train->add_option("--target", o.target, "Target column name when inferring the schema");
  train->add_option("--schema", o.schema, "Schema JSON file, or 'battery'");
  train->add_option("--n-trees", o.gbdt.n_trees, "Number of trees")->check(CLI::PositiveNumber);
  train->add_option("--max-depth", o.gbdt.max_depth, "Maximum tree depth")
      ->check(CLI::PositiveNumber);
  train->add_option("--learning-rate", o.gbdt.learning_rate, "Shrinkage in (0, 1]");
  train->add_option("--min-samples-leaf", o.gbdt.min_samples_leaf, "Minimum rows per leaf")
      ->check(CLI::PositiveNumber);

  auto add_explain_flags = [&o](CLI::App* sub) {
    sub->add_option("--model", o.model, "Model JSON")->required();
    sub->add_option("--background-rows", o.background_rows, "Background sample size")
        ->check(CLI::PositiveNumber);
    sub->add_option("--method", o.method, "kernel or exact");
    sub->add_option("--budget", o.budget, "Kernel coalition budget (default: all)");
  };

  auto* explain = app.add_subcommand("explain", "Explain one row or every row of a CSV");
  add_explain_flags(explain);
  explain->add_option("--row", o.row, "Row JSON keyed by feature name");
  explain->add_option("--rows", o.rows, "CSV of rows");
  explain->add_option("--background", o.background, "Background CSV")->required();

  auto* global = app.add_subcommand("gen-global-doc", "Write the global explanation document");
  add_explain_flags(global);
  global->add_option("--data", o.data, "CSV to explain")->required();
  global->add_option("--background", o.background, "Background CSV (default: sample of --data)");
  global->add_option("--category", o.category, "Categorical feature for the per-group section");
  global->add_option("--dependence-features", o.dependence_features,
                     "Features in the dependence section")
      ->check(CLI::PositiveNumber);
  global->add_option("--step-config", o.step_config, "Also write the step's fine-tuning config");

  auto* align = app.add_subcommand("gen-align", "Write Alpaca train/eval sets for alignment");
  add_explain_flags(align);
  align->add_option("--data", o.data, "CSV of rows to turn into records")->required();
  align->add_option("--background", o.background, "Background CSV (default: sample of --data)");
  align->add_option("--k", o.k, "Feature lines per info prompt")->check(CLI::PositiveNumber);
  align->add_option("--train-frac", o.train_frac, "Share of rows used for training");
  align->add_option("--templates", o.templates, "Question templates, one per line");
  align->add_option("--max-rows", o.max_rows, "Use a seeded sample of this many rows (0 = all)");
  align->add_option("--description", o.description, "Data description in the info prompt");
  align->add_option("--out-dir", o.out_dir, "Directory for train.jsonl, eval.jsonl, provenance.json")
      ->required();
  align->add_option("--step-config", o.step_config, "Also write the step's fine-tuning config");

  auto* split = app.add_subcommand("split-corpus", "Split a category's documents into train/eval");
  split->add_option("--dir", o.corpus_dir, "Directory of .txt documents")->required();
  split->add_option("--category", o.category_name, "Category name (default: directory name)");
  split->add_option("--eval-doc", o.eval_doc, "Id of the evaluation document (default: seeded)");
  split->add_option("--out-dir", o.split_out_dir, "Copy the split documents and manifest here");
  split->add_option("--step-config", o.step_config, "Also write the step's fine-tuning config");

  auto* ppl = app.add_subcommand("eval-ppl", "Perplexity of token scores or documents");
  ppl->add_option("--scores", o.scores, "JSON token scores (numbers or {token, logprob})");
  ppl->add_option("--document", o.documents, "Text document scored by the backend");
  add_backend_flags(ppl, o.backend);

  auto* loss = app.add_subcommand("eval-loss", "Loss of a model on an Alpaca JSONL set");
  loss->add_option("--records", o.records, "Alpaca JSONL file")->required();
  loss->add_option("--provenance", o.provenance, "Provenance sidecar of the records");
  add_backend_flags(loss, o.backend);

  auto* ablation = app.add_subcommand("ablation", "Build the fine-tuning ablation table");
  ablation->add_option("--input", o.ablation_input, "Stage results JSON")->required();
  ablation->add_option("--format", o.format, "json or table");

  auto* serve = app.add_subcommand("serve", "Run the chat HTTP service");
  serve->add_option("--service-config", o.service_config, "Service config JSON");
  serve->add_option("--model", o.model, "Model JSON ($SHAPCHAT_MODEL)");
  serve->add_option("--background", o.background, "Background CSV ($SHAPCHAT_BACKGROUND)");
  serve->add_option("--host", o.host, "Listen address");
  serve->add_option("--port", o.port, "Listen port, 0 for any ($SHAPCHAT_PORT)");
  serve->add_option("--store", o.store, "Session snapshot file");
  serve->add_flag("--check-backend", o.check_backend, "Exit 3 unless the backend answers");
  add_backend_flags(serve, o.backend);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::FileError& e) {
    err << e.what() << '\n';
    return kExitInput;
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  const Context ctx(o, out, err);
  try {
    if (*synth) cmd_synth(o, ctx);
    if (*train) cmd_train(o, ctx);
    if (*explain) cmd_explain(o, ctx);
    if (*global) cmd_gen_global_doc(o, ctx);
    if (*align) cmd_gen_align(o, ctx);
    if (*split) cmd_split_corpus(o, ctx);
    if (*ppl) cmd_eval_ppl(o, ctx);
    if (*loss) cmd_eval_loss(o, ctx);
    if (*ablation) cmd_ablation(o, ctx);
    if (*serve) cmd_serve(o, ctx);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\nRun with --help for more information.\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitOk;
}

}  // namespace shapchat::cli
