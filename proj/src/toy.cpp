// SPDX-License-Identifier: Apache-2.0
#include "dscc/toy.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dscc/error.hpp"
#include "dscc/evalkit.hpp"
#include "dscc/rng.hpp"

namespace dscc {

using nlohmann::json;

namespace {

const std::vector<std::string>& city_names() {
  static const std::vector<std::string> cities{"Toronto", "Paris",  "Lima",   "Oslo",   "Cairo",  "Delhi",
                                               "Tokyo",   "Quito",  "Berlin", "Madrid", "Sydney", "Nairobi",
                                               "Dublin",  "Havana", "Seoul",  "Athens"};
  return cities;
}

std::string make_name(Rng& rng) {
  static const char* syllables[] = {"ka", "lo", "mi", "zu", "ter", "vin", "dra", "po", "sel", "qua",
                                    "rin", "bo", "tu", "xe", "nor", "fi", "gal", "hu", "jor", "wex"};
  constexpr std::size_t n_syl = sizeof(syllables) / sizeof(syllables[0]);
  std::string name;
  const std::size_t parts = 2 + rng.below(2);
  for (std::size_t i = 0; i < parts; ++i) name += syllables[rng.below(n_syl)];
  name[0] = static_cast<char>(name[0] - 'a' + 'A');
  return name;
}

std::vector<std::string> training_texts(const Dataset& data) {
  std::vector<std::string> texts;
  for (const auto& e : data) {
    auto tr = build_triplet(e);
    texts.push_back(tr.t_plus);
    texts.push_back(tr.t_minus);
    texts.push_back(answer_continuation(e.correct_answer));
    texts.push_back(answer_continuation(e.hallucinated_answer));
  }
  return texts;
}

double steered_em(const Wiring& wiring, const SharedVocabMap& map, const Dataset& val, std::size_t max_tokens) {
  DecodingConfig dc;
  dc.max_new_tokens = max_tokens;
  std::size_t hits = 0;
  for (const auto& e : val) {
    auto trace = run_wiring(wiring, map, e.question, dc);
    hits += exact_match(trace.text, e.correct_answer) ? 1 : 0;
  }
  return val.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(val.size());
}

}  // namespace

Dataset make_planted_facts(std::size_t n, std::size_t n_cities, std::uint64_t seed) {
  const auto& cities = city_names();
  if (n_cities < 2 || n_cities > cities.size()) {
    throw Error(ErrorCode::ConfigError, "toy: n_cities must be in [2, " + std::to_string(cities.size()) + "]");
  }
  Rng rng(seed);
  std::set<std::string> used;
  Dataset data;
  data.reserve(n);
  while (data.size() < n) {
    auto name = make_name(rng);
    if (!used.insert(name).second) continue;
    const std::size_t c = rng.below(n_cities);
    TrainingExample e;
    e.id = "fact-" + std::to_string(data.size());
    e.question = "Where is " + name + " located?";
    e.correct_answer = cities[c];
    // A fixed wrong neighbour, so hallucinations follow a learnable pattern.
    e.hallucinated_answer = cities[(c + 1) % n_cities];
    e.provenance = Provenance::felm_original;
    data.push_back(std::move(e));
  }
  return data;
}

json ToyConfig::to_json() const {
  return {{"n_facts", n_facts},
          {"n_cities", n_cities},
          {"seed", seed},
          {"split_ratio", split_ratio},
          {"proxy_d", proxy_d},
          {"target_d", target_d},
          {"init_range", init_range},
          {"target_error_rate", target_error_rate},
          {"base_pretrain", base_pretrain.to_json()},
          {"target_pretrain", target_pretrain.to_json()},
          {"hdp", hdp.to_json()},
          {"fap", fap.to_json()},
          {"k", k},
          {"decode_max_tokens", decode_max_tokens}};
}

ToyConfig ToyConfig::from_json(const json& j) {
  ToyConfig c;
  try {
    c.n_facts = j.value("n_facts", c.n_facts);
    c.n_cities = j.value("n_cities", c.n_cities);
    c.seed = j.value("seed", c.seed);
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.proxy_d = j.value("proxy_d", c.proxy_d);
    c.target_d = j.value("target_d", c.target_d);
    c.init_range = j.value("init_range", c.init_range);
    c.target_error_rate = j.value("target_error_rate", c.target_error_rate);
    if (j.contains("base_pretrain")) c.base_pretrain = TrainConfig::from_json(j["base_pretrain"]);
    if (j.contains("target_pretrain")) c.target_pretrain = TrainConfig::from_json(j["target_pretrain"]);
    if (j.contains("hdp")) c.hdp = TrainConfig::from_json(j["hdp"]);
    if (j.contains("fap")) c.fap = TrainConfig::from_json(j["fap"]);
    c.k = j.value("k", c.k);
    c.decode_max_tokens = j.value("decode_max_tokens", c.decode_max_tokens);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("toy config: ") + e.what());
  }
  return c;
}

ToyModels build_toy_models(const Dataset& data, const ToyConfig& config) {
  const auto texts = training_texts(data);
  const std::vector<std::string> proxy_specials{MicroLM::kUnkToken, MicroLM::kEosToken};
  auto proxy_vocab = std::make_shared<const Vocabulary>(build_vocabulary("toy-proxy", texts, proxy_specials));

  // The target sees the texts in reverse order and carries tokens the proxies lack.
  std::vector<std::string> target_texts(texts.rbegin(), texts.rend());
  target_texts.push_back(" perhaps maybe indeed");
  const std::vector<std::string> target_specials{MicroLM::kUnkToken, "<pad>", MicroLM::kEosToken};
  auto target_vocab =
      std::make_shared<const Vocabulary>(build_vocabulary("toy-target", target_texts, target_specials));

  ToyModels models;
  MicroLMConfig pc;
  pc.d_model = config.proxy_d;
  pc.seed = config.seed * 2 + 1;
  pc.init_range = config.init_range;
  models.base = std::make_shared<MicroLM>(MicroLM::init(proxy_vocab, pc));
  std::vector<std::pair<std::string, std::string>> truth;
  for (const auto& e : data) truth.emplace_back(e.question, e.correct_answer);
  auto base_cfg = config.base_pretrain;
  base_cfg.seed = config.seed;
  pretrain_base(*models.base, truth, base_cfg);

  MicroLMConfig tc;
  tc.d_model = config.target_d;
  tc.seed = config.seed * 2 + 2;
  tc.init_range = config.init_range;
  models.target = std::make_shared<MicroLM>(MicroLM::init(target_vocab, tc));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(config.seed ^ 0x7a7a7a7aULL);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_wrong = static_cast<std::size_t>(std::llround(config.target_error_rate * static_cast<double>(data.size())));
  std::vector<std::pair<std::string, std::string>> noisy(data.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& e = data[order[rank]];
    noisy[order[rank]] = {e.question, rank < n_wrong ? e.hallucinated_answer : e.correct_answer};
  }
  auto target_cfg = config.target_pretrain;
  target_cfg.seed = config.seed + 1;
  pretrain_base(*models.target, noisy, target_cfg);
  return models;
}

json ToyReport::to_json() const {
  json iters = json::array();
  for (const auto& r : iterations) iters.push_back(r.to_json());
  return {{"base_em_t", base_em_t},
          {"iteration0_em", iteration0_em},
          {"iterations", iters},
          {"final_em", final_em},
          {"hdp_unchanged", hdp_unchanged},
          {"hdp_hash", hdp_hash},
          {"fap_hash", fap_hash},
          {"target_alone_em", target_alone_em},
          {"full_em", full_em},
          {"no_negative_em", no_negative_em},
          {"no_iterative_em", no_iterative_em},
          {"no_guidance_em", no_guidance_em},
          {"ordering_ok", ordering_ok},
          {"warnings", warnings}};
}

ToyReport run_toy_experiment(const ToyConfig& config) {
  auto data = split_dataset(make_planted_facts(config.n_facts, config.n_cities, config.seed), config.split_ratio,
                            config.seed);
  const auto train = select_split(data, Split::train);
  const auto val = select_split(data, Split::val);
  auto models = build_toy_models(data, config);
  const MicroLM& base = *models.base;

  ToyReport report;
  report.base_em_t = exact_match_rate(
      base, nullptr, val, [](const TrainingExample& e) { return e.question; }, config.fap.max_gen_tokens);

  auto hdp_cfg = config.hdp;
  hdp_cfg.seed = config.seed;
  auto hdp = train_hdp(base, train, hdp_cfg);
  report.hdp_hash = hdp.hash();

  auto fap_cfg = config.fap;
  fap_cfg.seed = config.seed;
  auto refined = refine_fap(base, hdp, train, val, config.k, fap_cfg);
  report.iteration0_em = refined.initial_em;
  report.iterations = refined.reports;
  report.final_em = refined.final_fap.val_em.value_or(refined.initial_em);
  report.fap_hash = refined.final_fap.hash();
  report.hdp_unchanged = hdp.hash() == report.hdp_hash;

  for (std::size_t i = 0; i < report.iterations.size(); ++i) {
    const double prev = i == 0 ? report.iteration0_em : report.iterations[i - 1].selected_em;
    if (report.iterations[i].selected_em < prev) {
      report.warnings.push_back("selected EM decreased at iteration " + std::to_string(i + 1));
    }
  }

  ProviderPtr target = std::make_shared<MicroLMProvider>(models.target, std::nullopt, "target");
  ProviderPtr base_proxy = std::make_shared<MicroLMProvider>(models.base, std::nullopt, "base");
  ProviderPtr fap = std::make_shared<MicroLMProvider>(models.base, refined.final_fap, "fap");
  ProviderPtr hdp_p = std::make_shared<MicroLMProvider>(models.base, hdp, "hdp");
  const auto map = build_shared_map(base.vocabulary(), models.target->vocabulary());

  const auto em_for = [&](const char* flags) {
    return steered_em(wire_ablation(parse_ablation(flags), target, base_proxy, fap, hdp_p), map, val,
                      config.decode_max_tokens);
  };
  {
    DecodingConfig dc;
    dc.max_new_tokens = config.decode_max_tokens;
    std::size_t hits = 0;
    for (const auto& e : val) hits += exact_match(decode_plain(*target, e.question, dc).text, e.correct_answer);
    report.target_alone_em = static_cast<double>(hits) / static_cast<double>(val.size());
  }
  report.full_em = em_for("full");
  report.no_negative_em = em_for("no_negative");
  report.no_iterative_em = em_for("no_iterative");
  report.no_guidance_em = em_for("no_guidance");

  report.ordering_ok = report.full_em >= report.no_negative_em && report.no_negative_em >= report.no_iterative_em;
  if (!report.ordering_ok) {
    report.warnings.push_back("ablation ordering violated: full " + std::to_string(report.full_em) +
                              ", no_negative " + std::to_string(report.no_negative_em) + ", no_iterative " +
                              std::to_string(report.no_iterative_em));
  }
  return report;
}

}  // namespace dscc
