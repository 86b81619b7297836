// SPDX-License-Identifier: Apache-2.0
#include "dscc/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include "dscc/error.hpp"
#include "dscc/evalkit.hpp"
#include "dscc/hash.hpp"
#include "dscc/parallel.hpp"

namespace dscc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config -----------------------------------------------------------------------

json to_json(const DecodingConfig& c) {
  return {{"max_new_tokens", c.max_new_tokens},
          {"policy", c.policy == SamplingPolicy::greedy ? "greedy" : "temperature"},
          {"temperature", c.temperature},
          {"lambda", c.lambda},
          {"seed", c.seed},
          {"record_trace", c.record_trace}};
}

DecodingConfig decoding_from_json(const json& j) {
  DecodingConfig c;
  try {
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    const auto policy = j.value("policy", std::string("greedy"));
    if (policy == "greedy") {
      c.policy = SamplingPolicy::greedy;
    } else if (policy == "temperature") {
      c.policy = SamplingPolicy::temperature;
    } else {
      throw Error(ErrorCode::ConfigError, "decoding: unknown policy '" + policy + "'");
    }
    c.temperature = j.value("temperature", c.temperature);
    c.lambda = j.value("lambda", c.lambda);
    c.seed = j.value("seed", c.seed);
    c.record_trace = j.value("record_trace", c.record_trace);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("decoding config: ") + e.what());
  }
  return c;
}

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"run_dir", run_dir},
          {"split_ratio", split_ratio},
          {"threads", threads},
          {"paths",
           {{"data", paths.data},
            {"model", paths.model},
            {"pred", paths.pred},
            {"specs", paths.specs},
            {"trace", paths.trace},
            {"in", paths.in},
            {"out", paths.out},
            {"external", paths.external},
            {"prompts", paths.prompts}}},
          {"prompts", prompts},
          {"split", split},
          {"providers",
           {{"target", providers.target}, {"fap", providers.fap}, {"hdp", providers.hdp}, {"base", providers.base}}},
          {"decoding", dscc::to_json(decoding)},
          {"ablation", ablation},
          {"train", train.to_json()},
          {"hdp", hdp.to_json()},
          {"k", k},
          {"augment",
           {{"client", client},
            {"ops", ops},
            {"concurrency", concurrency},
            {"paraphrases_per_question", paraphrases_per_question},
            {"external_limit", external_limit},
            {"http", http.to_json()}}},
          {"eval",
           {{"scorer_url", scorer_url},
            {"scorer_timeout_ms", scorer_timeout_ms},
            {"scorer_min_interval_ms", scorer_min_interval_ms}}},
          {"toy", toy.to_json()}};
}

namespace {

// Unknown keys are rejected against the default tree so typos do not pass silently.
void check_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) throw Error(ErrorCode::ConfigError, "config: '" + where + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::ConfigError, "config: unknown key '" + where + key + "'");
    if (known[key].is_object() && !value.is_null()) check_keys(value, known[key], where + key + ".");
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  check_keys(j, c.to_json(), "");
  try {
    c.seed = j.value("seed", c.seed);
    c.run_dir = j.value("run_dir", c.run_dir);
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.threads = j.value("threads", c.threads);
    const json paths = j.value("paths", json::object());
    for (auto [key, field] : std::initializer_list<std::pair<const char*, std::string*>>{
             {"data", &c.paths.data},
             {"model", &c.paths.model},
             {"pred", &c.paths.pred},
             {"specs", &c.paths.specs},
             {"trace", &c.paths.trace},
             {"in", &c.paths.in},
             {"out", &c.paths.out},
             {"external", &c.paths.external},
             {"prompts", &c.paths.prompts}}) {
      *field = paths.value(key, *field);
    }
    c.prompts = j.value("prompts", c.prompts);
    c.split = j.value("split", c.split);
    const json prov = j.value("providers", json::object());
    c.providers.target = prov.value("target", "");
    c.providers.fap = prov.value("fap", "");
    c.providers.hdp = prov.value("hdp", "");
    c.providers.base = prov.value("base", "");
    if (j.contains("decoding")) c.decoding = decoding_from_json(j["decoding"]);
    c.ablation = j.value("ablation", c.ablation);
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    if (j.contains("hdp")) c.hdp = TrainConfig::from_json(j["hdp"]);
    c.k = j.value("k", c.k);
    const json aug = j.value("augment", json::object());
    c.client = aug.value("client", c.client);
    c.ops = aug.value("ops", c.ops);
    c.concurrency = aug.value("concurrency", c.concurrency);
    c.paraphrases_per_question = aug.value("paraphrases_per_question", c.paraphrases_per_question);
    c.external_limit = aug.value("external_limit", c.external_limit);
    if (aug.contains("http")) c.http = HttpGenConfig::from_json(aug["http"]);
    const json ev = j.value("eval", json::object());
    c.scorer_url = ev.value("scorer_url", c.scorer_url);
    c.scorer_timeout_ms = ev.value("scorer_timeout_ms", c.scorer_timeout_ms);
    c.scorer_min_interval_ms = ev.value("scorer_min_interval_ms", c.scorer_min_interval_ms);
    if (j.contains("toy")) c.toy = ToyConfig::from_json(j["toy"]);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }
  if (c.split != "train" && c.split != "val" && c.split != "all") {
    throw Error(ErrorCode::ConfigError, "config: split must be train, val or all");
  }
  if (c.k == 0) throw Error(ErrorCode::ConfigError, "config: k must be >= 1");
  if (c.threads == 0) throw Error(ErrorCode::ConfigError, "config: threads must be >= 1");
  c.decoding.validate();
  c.train.validate();
  c.hdp.validate();
  return c;
}

// ---- plumbing -----------------------------------------------------------------------

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "config: cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "config: " + path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cli: cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

// "a.b.c=value": value is parsed as JSON when possible, otherwise taken as a string.
void apply_set(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::ConfigError, "cli: --set expects key.path=value, got '" + assignment + "'");
  }
  std::string pointer = "/" + assignment.substr(0, eq);
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  tree[json::json_pointer(pointer)] = value;
}

std::string require(const std::string& value, const char* what) {
  if (value.empty()) throw Error(ErrorCode::ConfigError, std::string("cli: missing ") + what);
  return value;
}

/// Sends spdlog output to the given stream (and later a run log) for one invocation.
class LogScope {
 public:
  explicit LogScope(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    sink->set_pattern("[%l] %v");
    logger_ = std::make_shared<spdlog::logger>("dscc", sink);
    logger_->set_level(spdlog::level::info);
    spdlog::set_default_logger(logger_);
  }
  ~LogScope() {
    logger_->flush();
    spdlog::set_default_logger(previous_);
  }
  void add_file(const fs::path& path) {
    auto sink = std::make_shared<spdlog::sinks::basic_file_sink_mt>(path.string(), true);
    sink->set_pattern("%Y-%m-%dT%H:%M:%S.%e [%l] %v");
    logger_->sinks().push_back(sink);
  }

 private:
  std::shared_ptr<spdlog::logger> previous_;
  std::shared_ptr<spdlog::logger> logger_;
};

fs::path prepare_run_dir(const RunConfig& cfg, const std::string& command, const json& snapshot, LogScope& logs) {
  const fs::path dir = cfg.run_dir.empty() ? fs::path("runs") / command : fs::path(cfg.run_dir);
  fs::create_directories(dir);
  json snap = snapshot;
  snap["command"] = command;
  write_json_file(snap, dir / "config.json");
  logs.add_file(dir / "run.log");
  spdlog::info("{}: run directory {}", command, dir.string());
  return dir;
}

Dataset ensure_split(Dataset data, const RunConfig& cfg) {
  const bool unassigned =
      std::any_of(data.begin(), data.end(), [](const TrainingExample& e) { return e.split == Split::unassigned; });
  if (unassigned) {
    spdlog::info("dataset has unassigned examples; splitting {} with ratio {} and seed {}", data.size(),
                 cfg.split_ratio, cfg.seed);
    data = split_dataset(std::move(data), cfg.split_ratio, cfg.seed);
  }
  return data;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cli: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

// ---- commands ---------------------------------------------------------------------

int cmd_augment(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto data = load_dataset(require(cfg.paths.in, "--in"));
  std::vector<std::string> questions;
  if (!cfg.paths.external.empty()) questions = load_questions(cfg.paths.external);

  std::unique_ptr<GenClient> client;
  if (cfg.client == "mock") {
    client = std::make_unique<MockGenClient>(cfg.seed);
  } else if (cfg.client == "http") {
    client = std::make_unique<HttpGenClient>(cfg.http);
  } else {
    throw Error(ErrorCode::ConfigError, "cli: --client must be mock or http");
  }
  AugmentConfig ac;
  ac.ops = parse_ops(cfg.ops);
  ac.seed = cfg.seed;
  ac.split_ratio = cfg.split_ratio;
  ac.concurrency = cfg.concurrency;
  ac.paraphrases_per_question = cfg.paraphrases_per_question;
  ac.external_limit = cfg.external_limit;
  if (ac.ops.external && questions.empty()) spdlog::warn("augment: external op selected but no --external questions");

  auto result = augment(data, questions, *client, ac);
  const fs::path out_path = cfg.paths.out.empty() ? dir / "dataset.jsonl" : fs::path(cfg.paths.out);
  save_dataset(result.data, out_path);
  result.manifest["input"] = cfg.paths.in;
  result.manifest["output"] = out_path.string();
  write_json_file(result.manifest, dir / "manifest.json");
  out << "wrote " << result.data.size() << " examples (" << result.manifest["n_train"] << " train, "
      << result.manifest["n_val"] << " val) to " << out_path.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto data = ensure_split(load_dataset(require(cfg.paths.data, "--data")), cfg);
  const auto train = select_split(data, Split::train);
  const auto val = select_split(data, Split::val);
  const fs::path model_path = require(cfg.paths.model, "--model");
  const MicroLM model = load_model(model_path);
  spdlog::info("train: {} train / {} val examples, base model {}", train.size(), val.size(), model.content_hash());

  auto hdp = train_hdp(model, train, cfg.hdp);
  save_checkpoint(hdp, dir / "hdp.json");
  spdlog::info("train: hdp {}", hdp.hash());

  fs::create_directories(dir / "checkpoints");
  auto refined = refine_fap(model, hdp, train, val, cfg.k, cfg.train,
                            [&](const AdapterCheckpoint& c, const std::string& id) {
                              save_checkpoint(c, dir / "checkpoints" / (id + ".json"));
                            });
  for (const auto& r : refined.reports) {
    spdlog::info("train: iteration {} selected {} (val EM {:.4f})", r.iteration, r.selected_id, r.selected_em);
  }
  save_checkpoint(refined.final_fap, dir / "fap_final.json");

  json iterations = json::array();
  for (const auto& r : refined.reports) iterations.push_back(r.to_json());
  const json report{{"seed", cfg.seed},
                    {"k", cfg.k},
                    {"model", model_path.string()},
                    {"model_hash", model.content_hash()},
                    {"data_hash", file_hash(cfg.paths.data)},
                    {"n_train", train.size()},
                    {"n_val", val.size()},
                    {"hdp_hash", hdp.hash()},
                    {"initial_em", refined.initial_em},
                    {"iterations", iterations},
                    {"fap_final_hash", refined.final_fap.hash()},
                    {"fap_final_em", refined.final_fap.val_em.value_or(refined.initial_em)}};
  write_json_file(report, dir / "train_report.json");
  out << "hdp " << hdp.hash() << '\n' << "fap_final " << refined.final_fap.hash() << '\n';
  return kExitOk;
}

struct DecodeInput {
  std::string id;
  std::string prompt;
};

std::vector<DecodeInput> decode_inputs(const RunConfig& cfg) {
  std::vector<DecodeInput> inputs;
  for (std::size_t i = 0; i < cfg.prompts.size(); ++i) inputs.push_back({"prompt-" + std::to_string(i), cfg.prompts[i]});
  if (!cfg.paths.prompts.empty()) {
    auto qs = load_questions(cfg.paths.prompts);
    for (std::size_t i = 0; i < qs.size(); ++i) inputs.push_back({"line-" + std::to_string(i), qs[i]});
  }
  if (!cfg.paths.data.empty()) {
    auto data = ensure_split(load_dataset(cfg.paths.data), cfg);
    if (cfg.split != "all") data = select_split(data, cfg.split == "train" ? Split::train : Split::val);
    for (const auto& e : data) inputs.push_back({e.id, e.question});
  }
  if (inputs.empty()) throw Error(ErrorCode::ConfigError, "cli: decode needs --prompt, --prompts or --data");
  return inputs;
}

int cmd_decode(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto ablation = parse_ablation(cfg.ablation);
  const auto target_spec = require(cfg.providers.target, "--target");
  const auto fap_spec = require(cfg.providers.fap, "--fap");
  const auto hdp_spec = ablation.no_iterative || ablation.no_negative || ablation.no_guidance
                            ? cfg.providers.hdp
                            : require(cfg.providers.hdp, "--hdp");
  if (!ablation.no_guidance && !ablation.no_iterative && !ablation.no_negative && fap_spec == hdp_spec) {
    spdlog::warn("decode: fap and hdp specs are identical ('{}'); steering is identically zero", fap_spec);
  }
  ProviderPtr target = make_concurrency_safe(make_provider(target_spec));
  ProviderPtr fap = make_concurrency_safe(make_provider(fap_spec));
  ProviderPtr hdp = hdp_spec.empty() ? nullptr : make_concurrency_safe(make_provider(hdp_spec));
  ProviderPtr base;
  if (ablation.no_iterative || ablation.no_negative) {
    base = make_concurrency_safe(make_provider(require(cfg.providers.base, "--base (needed by the ablation)")));
  }
  const auto wiring = wire_ablation(ablation, target, base, fap, hdp);
  const auto map = build_shared_map(fap->vocabulary(), target->vocabulary());
  spdlog::info("decode: shared vocabulary {} of {} target tokens", map.pairs().size(), target->vocabulary().size());

  auto dc = cfg.decoding;
  const auto inputs = decode_inputs(cfg);
  std::vector<GenerationTrace> traces(inputs.size());
  parallel_for(inputs.size(), cfg.threads, [&](std::size_t i) {
    auto per = dc;
    per.seed = dc.seed + i;  // one stream per prompt so results do not depend on scheduling
    traces[i] = run_wiring(wiring, map, inputs[i].prompt, per);
  });

  const json providers_info{{"target", target_spec},
                            {"fap", fap_spec},
                            {"hdp", hdp_spec},
                            {"base", cfg.providers.base},
                            {"ablation", ablation.name()},
                            {"target_vocab_hash", target->describe().vocab_hash},
                            {"proxy_vocab_hash", fap->describe().vocab_hash}};
  std::vector<Prediction> preds;
  if (dc.record_trace) fs::create_directories(dir / "traces");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    preds.push_back({inputs[i].id, traces[i].text});
    out << inputs[i].id << '\t' << json(traces[i].text).dump() << '\n';
    if (dc.record_trace) {
      std::ofstream t(dir / "traces" / (inputs[i].id + ".jsonl"));
      auto per = dc;
      per.seed = dc.seed + i;
      write_trace(t, traces[i], per, providers_info, target->vocabulary(), wiring.fap_generates ? nullptr : &map);
    }
  }
  save_predictions(preds, dir / "predictions.jsonl");
  write_json_file(providers_info, dir / "providers.json");
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto preds = load_predictions(require(cfg.paths.pred, "--pred"));
  const auto data = load_dataset(require(cfg.paths.data, "--data"));
  std::map<std::string, KeywordSpec> specs;
  if (!cfg.paths.specs.empty()) specs = load_keyword_specs(cfg.paths.specs);
  std::unique_ptr<HttpScorer> scorer;
  if (!cfg.scorer_url.empty()) {
    scorer = std::make_unique<HttpScorer>(cfg.scorer_url, std::chrono::milliseconds(cfg.scorer_timeout_ms),
                                          std::chrono::milliseconds(cfg.scorer_min_interval_ms));
  }
  auto report = evaluate_run(preds, data, specs, scorer.get(), cfg.threads);
  report.meta = {{"pred", cfg.paths.pred}, {"data", cfg.paths.data}, {"specs", cfg.paths.specs},
                 {"scorer_url", cfg.scorer_url}};
  write_json_file(to_json(report), dir / "report.json");
  const auto table = render_table(report);
  {
    std::ofstream t(dir / "report.txt");
    t << table;
  }
  out << table;
  return kExitOk;
}

int cmd_inspect(const RunConfig& cfg, std::ostream& out) {
  const fs::path path = require(cfg.paths.trace, "trace file");
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cli: cannot open " + path.string());
  const auto loaded = read_trace(in);
  out << "prompt: " << json(loaded.trace.prompt).dump() << '\n'
      << "text: " << json(loaded.trace.text).dump() << '\n'
      << "stop: " << to_string(loaded.trace.stop) << '\n'
      << "lambda: " << loaded.lambda << '\n'
      << "providers: " << loaded.header.value("providers", json::object()).dump() << '\n';
  for (const auto& s : loaded.trace.steps) {
    double g_norm = 0.0;
    std::size_t nonzero = 0;
    for (double v : s.g_hat.values()) {
      g_norm += v * v;
      nonzero += v != 0.0 ? 1 : 0;
    }
    out << "step " << s.step << ": token " << s.token << " p=" << std::setprecision(6) << s.probability
        << " |g_hat|=" << std::sqrt(g_norm) << " nonzero=" << nonzero << '\n';
  }
  const auto replay = replay_trace(loaded);
  for (const auto& p : replay.problems) out << "mismatch: " << p << '\n';
  out << "replay: " << (replay.ok() ? "ok" : "MISMATCH") << " (" << replay.steps << " steps"
      << (loaded.map ? "" : ", projection unchecked") << ")\n";
  return replay.ok() ? kExitOk : kExitRuntime;
}

int cmd_make_toy(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const fs::path target = cfg.paths.out.empty() ? dir : fs::path(cfg.paths.out);
  fs::create_directories(target);
  const auto& tc = cfg.toy;
  auto data = split_dataset(make_planted_facts(tc.n_facts, tc.n_cities, tc.seed), tc.split_ratio, tc.seed);
  auto models = build_toy_models(data, tc);
  save_dataset(data, target / "dataset.jsonl");
  save_model(*models.base, target / "proxy.json");
  save_model(*models.target, target / "target.json");
  write_json_file({{"toy", tc.to_json()},
                   {"proxy_hash", models.base->content_hash()},
                   {"target_hash", models.target->content_hash()}},
                  target / "toy_manifest.json");
  out << "proxy " << models.base->content_hash() << '\n' << "target " << models.target->content_hash() << '\n';
  return kExitOk;
}

int cmd_toy(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto report = run_toy_experiment(cfg.toy);
  write_json_file(report.to_json(), dir / "toy_report.json");
  out << std::fixed << std::setprecision(3) << "iteration 0 EM " << report.iteration0_em << '\n';
  for (const auto& it : report.iterations) {
    out << "iteration " << it.iteration << " EM " << it.selected_em << " (" << it.selected_id << ")\n";
  }
  out << "target alone EM " << report.target_alone_em << '\n'
      << "full EM " << report.full_em << '\n'
      << "no_negative EM " << report.no_negative_em << '\n'
      << "no_iterative EM " << report.no_iterative_em << '\n'
      << "no_guidance EM " << report.no_guidance_em << '\n';
  for (const auto& w : report.warnings) spdlog::warn("toy: {}", w);
  return kExitOk;
}

// ---- argument parsing ---------------------------------------------------------------

/// Collects flag values that were actually given and writes them into the config tree.
class Overrides {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& name, const std::string& pointer, const std::string& help) {
    auto holder = std::make_shared<T>();
    auto* opt = app->add_option(name, *holder, help);
    appliers_.push_back([opt, holder, pointer](json& tree) {
      if (opt->count() > 0) tree[json::json_pointer(pointer)] = *holder;
    });
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& name, const std::string& pointer, const std::string& help) {
    auto* opt = app->add_flag(name, help);
    appliers_.push_back([opt, pointer](json& tree) {
      if (opt->count() > 0) tree[json::json_pointer(pointer)] = true;
    });
    return opt;
  }

  void apply(json& tree) const {
    for (const auto& a : appliers_) a(tree);
  }

 private:
  std::vector<std::function<void(json&)>> appliers_;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& common, Overrides& ov, const std::string& seed_pointer = "/seed") {
  app->add_option("--config", common.config, "JSON config file (default: $" + std::string(kConfigEnv) + ")");
  app->add_option("--set", common.sets, "Override a config key, e.g. --set train.lr=0.01");
  ov.add<std::string>(app, "--run-dir", "/run_dir", "Run directory (default runs/<command>)");
  ov.add<std::uint64_t>(app, "--seed", seed_pointer, "Random seed");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  LogScope logs(err);
  CLI::App app{"Proxy-guided steering: augmentation, training, decoding and evaluation", "dscc"};
  app.require_subcommand(1);
  Common common;
  Overrides ov;

  auto* augment_cmd = app.add_subcommand("augment", "Expand a QA dataset with a generation client");
  add_common(augment_cmd, common, ov);
  ov.add<std::string>(augment_cmd, "--in", "/paths/in", "Input dataset (JSONL)");
  ov.add<std::string>(augment_cmd, "--out", "/paths/out", "Output dataset (JSONL)");
  ov.add<std::string>(augment_cmd, "--client", "/augment/client", "mock or http");
  ov.add<std::string>(augment_cmd, "--ops", "/augment/ops", "Comma list of paraphrase, perturb, external");
  ov.add<std::string>(augment_cmd, "--external", "/paths/external", "External questions file");
  ov.add<std::size_t>(augment_cmd, "--concurrency", "/augment/concurrency", "Concurrent client calls");
  ov.add<double>(augment_cmd, "--split-ratio", "/split_ratio", "Training fraction");

  auto* train_cmd = app.add_subcommand("train", "Train the negative proxy and refine the positive proxy");
  add_common(train_cmd, common, ov);
  ov.add<std::string>(train_cmd, "--data", "/paths/data", "Dataset (JSONL)");
  ov.add<std::string>(train_cmd, "--model", "/paths/model", "Proxy base model (JSON)");
  ov.add<std::size_t>(train_cmd, "--k", "/k", "Refinement iterations");
  ov.add<std::size_t>(train_cmd, "--epochs", "/train/epochs", "Epochs per iteration");
  ov.add<double>(train_cmd, "--lr", "/train/lr", "Learning rate for the positive proxy");
  ov.add<std::size_t>(train_cmd, "--batch-size", "/train/batch_size", "Batch size");
  ov.add<std::size_t>(train_cmd, "--rank", "/train/rank", "Adapter rank");
  ov.add<double>(train_cmd, "--alpha", "/train/alpha", "Adapter alpha");
  ov.add<std::string>(train_cmd, "--logit-space", "/train/logit_space", "raw or softmax");
  ov.add<std::size_t>(train_cmd, "--hdp-epochs", "/hdp/epochs", "Negative proxy epochs");
  ov.add<double>(train_cmd, "--hdp-lr", "/hdp/lr", "Negative proxy learning rate");
  ov.add<double>(train_cmd, "--split-ratio", "/split_ratio", "Training fraction for unsplit data");

  auto* decode_cmd = app.add_subcommand("decode", "Steered decoding");
  add_common(decode_cmd, common, ov);
  ov.add<std::string>(decode_cmd, "--target", "/providers/target", "Target provider spec");
  ov.add<std::string>(decode_cmd, "--fap", "/providers/fap", "Positive proxy spec");
  ov.add<std::string>(decode_cmd, "--hdp", "/providers/hdp", "Negative proxy spec");
  ov.add<std::string>(decode_cmd, "--base", "/providers/base", "Unadapted proxy spec (ablations)");
  ov.add<std::vector<std::string>>(decode_cmd, "--prompt", "/prompts", "Prompt text (repeatable)");
  ov.add<std::string>(decode_cmd, "--prompts", "/paths/prompts", "Prompts file");
  ov.add<std::string>(decode_cmd, "--data", "/paths/data", "Dataset whose questions are decoded");
  ov.add<std::string>(decode_cmd, "--split", "/split", "train, val or all");
  ov.add<double>(decode_cmd, "--lambda", "/decoding/lambda", "Steering strength");
  ov.add<std::size_t>(decode_cmd, "--max-new-tokens", "/decoding/max_new_tokens", "Generation budget");
  ov.add<std::string>(decode_cmd, "--policy", "/decoding/policy", "greedy or temperature");
  ov.add<double>(decode_cmd, "--temperature", "/decoding/temperature", "Sampling temperature");
  ov.flag(decode_cmd, "--trace", "/decoding/record_trace", "Write per-step traces");
  ov.add<std::string>(decode_cmd, "--ablation", "/ablation", "no_iterative, no_guidance or no_negative");
  ov.add<std::size_t>(decode_cmd, "--threads", "/threads", "Concurrent prompts");

  auto* eval_cmd = app.add_subcommand("eval", "Score predictions");
  add_common(eval_cmd, common, ov);
  ov.add<std::string>(eval_cmd, "--pred", "/paths/pred", "Predictions (JSONL)");
  ov.add<std::string>(eval_cmd, "--data", "/paths/data", "Dataset (JSONL)");
  ov.add<std::string>(eval_cmd, "--specs", "/paths/specs", "Keyword specs (JSONL)");
  ov.add<std::string>(eval_cmd, "--scorer-url", "/eval/scorer_url", "External hallucination scorer");
  ov.add<std::size_t>(eval_cmd, "--threads", "/threads", "Scoring threads");

  auto* inspect_cmd = app.add_subcommand("inspect-trace", "Summarize and replay a trace file");
  add_common(inspect_cmd, common, ov);
  ov.add<std::string>(inspect_cmd, "trace", "/paths/trace", "Trace file (JSONL)")->required();

  auto* make_toy_cmd = app.add_subcommand("make-toy", "Write the synthetic planted-fact dataset and models");
  add_common(make_toy_cmd, common, ov, "/toy/seed");
  ov.add<std::string>(make_toy_cmd, "--out", "/paths/out", "Output directory");
  ov.add<std::size_t>(make_toy_cmd, "--n-facts", "/toy/n_facts", "Number of facts");

  auto* toy_cmd = app.add_subcommand("toy", "Run the synthetic end-to-end experiment");
  add_common(toy_cmd, common, ov, "/toy/seed");
  ov.add<std::size_t>(toy_cmd, "--k", "/toy/k", "Refinement iterations");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitConfig;
  }

  const auto* cmd = app.get_subcommands().front();
  const std::string command = cmd->get_name();
  try {
    json tree = RunConfig{}.to_json();
    std::string config_path = common.config;
    if (config_path.empty()) {
      if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') config_path = env;
    }
    if (!config_path.empty()) {
      auto file = read_json_file(config_path);
      if (file.is_object()) file.erase("command");  // present in run-directory snapshots
      tree.merge_patch(file);
    }
    ov.apply(tree);
    for (const auto& s : common.sets) apply_set(tree, s);
    auto cfg = RunConfig::from_json(tree);
    // The global seed drives every stochastic component except the toy data, which has its own.
    cfg.train.seed = cfg.seed;
    cfg.hdp.seed = cfg.seed;
    cfg.decoding.seed = cfg.seed;

    if (command == "inspect-trace") return cmd_inspect(cfg, out);
    const auto dir = prepare_run_dir(cfg, command, cfg.to_json(), logs);
    if (command == "augment") return cmd_augment(cfg, dir, out);
    if (command == "train") return cmd_train(cfg, dir, out);
    if (command == "decode") return cmd_decode(cfg, dir, out);
    if (command == "eval") return cmd_eval(cfg, dir, out);
    if (command == "make-toy") return cmd_make_toy(cfg, dir, out);
    if (command == "toy") return cmd_toy(cfg, dir, out);
    throw Error(ErrorCode::ConfigError, "cli: unknown command " + command);
  } catch (const Error& e) {
    spdlog::error("{}: {}", command, e.what());
    if (e.code() == ErrorCode::ConfigError) {
      err << cmd->help();
      return kExitConfig;
    }
    return kExitRuntime;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", command, e.what());
    return kExitRuntime;
  }
}

}  // namespace dscc
