// SPDX-License-Identifier: Apache-2.0
#include "dscc/align_train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "dscc/error.hpp"
#include "dscc/evalkit.hpp"
#include "dscc/parallel.hpp"

namespace dscc {

using nlohmann::json;

PromptTriplet build_triplet(std::string_view question) {
  if (question.empty()) throw Error(ErrorCode::EmptyQuestion, "build_triplet: empty question");
  std::string q(question);
  return {q, std::string(kTruthfulPrefix) + q, std::string(kUntruthfulPrefix) + q};
}

PromptTriplet build_triplet(const TrainingExample& example) {
  if (example.question.empty()) {
    throw Error(ErrorCode::EmptyQuestion, "build_triplet: example '" + example.id + "' has an empty question");
  }
  return build_triplet(example.question);
}

namespace {

void check_same_size(const LogitVector& a, const LogitVector& b, const char* what) {
  if (a.vocab_size() != b.vocab_size()) {
    throw Error(ErrorCode::DimensionMismatch, std::string("contrastive_loss: ") + what + " has " +
                                                  std::to_string(b.vocab_size()) + " entries, base has " +
                                                  std::to_string(a.vocab_size()));
  }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Contrastive term for one example with constant base/HDP vectors; writes dL/dl_fap.
double contrastive_term(std::span<const double> base, std::span<const double> hdp, std::span<const double> fap,
                        std::span<double> dfap, LogitSpace space, double weight) {
  if (space == LogitSpace::raw) {
    for (std::size_t i = 0; i < fap.size(); ++i) dfap[i] += weight * 2.0 * (fap[i] - base[i]);
    return weight * (squared_distance(base, fap) - squared_distance(base, hdp));
  }
  const auto pb = softmax(base);
  const auto ph = softmax(hdp);
  const auto pf = softmax(fap);
  // dL/dp = 2 (p - pb); through the softmax Jacobian: p_i (v_i - sum_j p_j v_j).
  std::vector<double> v(pf.size());
  double pv = 0.0;
  for (std::size_t i = 0; i < pf.size(); ++i) {
    v[i] = 2.0 * (pf[i] - pb[i]);
    pv += pf[i] * v[i];
  }
  for (std::size_t i = 0; i < pf.size(); ++i) dfap[i] += weight * pf[i] * (v[i] - pv);
  return weight * (squared_distance(pb, pf) - squared_distance(pb, ph));
}

double cross_entropy(std::span<const double> logits, TokenId target, std::span<double> dlogits, double weight) {
  const auto p = softmax(logits);
  for (std::size_t i = 0; i < p.size(); ++i) dlogits[i] += weight * p[i];
  dlogits[static_cast<std::size_t>(target)] -= weight;
  return -weight * std::log(std::max(p[static_cast<std::size_t>(target)], 1e-300));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) {
  // FNV-1a over the salt, mixed into the user seed.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : salt) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return seed ^ h;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

// Rewrites every term so the batch loss is the mean over examples.
void scale_terms(std::vector<LogitLossTerm>& terms, double weight) {
  for (auto& t : terms) {
    t.fn = [inner = t.fn, weight](std::span<const double> l, std::span<double> dl) {
      std::vector<double> local(dl.size(), 0.0);
      const double v = inner(l, local);
      for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += weight * local[i];
      return weight * v;
    };
  }
}

}  // namespace

double contrastive_loss(const LogitVector& l_base, const LogitVector& l_fap, const LogitVector& l_hdp) {
  check_same_size(l_base, l_fap, "FAP");
  check_same_size(l_base, l_hdp, "HDP");
  const double loss = squared_distance(l_base.values(), l_fap.values()) -
                      squared_distance(l_base.values(), l_hdp.values());
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteResult, "contrastive_loss: non-finite value");
  return loss;
}

std::vector<double> contrastive_loss_grad(const LogitVector& l_base, const LogitVector& l_fap) {
  check_same_size(l_base, l_fap, "FAP");
  std::vector<double> g(l_fap.vocab_size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (l_fap[i] - l_base[i]);
  return g;
}

std::string_view to_string(LogitSpace s) { return s == LogitSpace::softmax ? "softmax" : "raw"; }

LogitSpace parse_logit_space(std::string_view s) {
  if (s == "raw") return LogitSpace::raw;
  if (s == "softmax") return LogitSpace::softmax;
  throw Error(ErrorCode::ConfigError, "unknown logit space '" + std::string(s) + "' (raw|softmax)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::ConfigError, "train: lr must be > 0");
  if (batch_size == 0) throw Error(ErrorCode::ConfigError, "train: batch_size must be >= 1");
  if (rank == 0) throw Error(ErrorCode::ConfigError, "train: rank must be >= 1");
  if (!(alpha > 0.0)) throw Error(ErrorCode::ConfigError, "train: alpha must be > 0");
  if (max_gen_tokens == 0) throw Error(ErrorCode::ConfigError, "train: max_gen_tokens must be >= 1");
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"rank", rank},
          {"alpha", alpha},
          {"max_gen_tokens", max_gen_tokens},
          {"logit_space", to_string(logit_space)},
          {"keep_incoming", keep_incoming},
          {"eval_threads", eval_threads}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.rank = j.value("rank", c.rank);
    c.alpha = j.value("alpha", c.alpha);
    c.max_gen_tokens = j.value("max_gen_tokens", c.max_gen_tokens);
    c.logit_space = parse_logit_space(j.value("logit_space", std::string("raw")));
    c.keep_incoming = j.value("keep_incoming", c.keep_incoming);
    c.eval_threads = j.value("eval_threads", c.eval_threads);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("train config: ") + e.what());
  }
  return c;
}

std::string answer_continuation(std::string_view answer) {
  if (!answer.empty() && std::isspace(static_cast<unsigned char>(answer.front()))) return std::string(answer);
  return " " + std::string(answer);
}

std::vector<LogitLossTerm> sequence_terms(const MicroLM& model, std::string_view prompt, std::string_view answer) {
  std::vector<TokenId> ids = model.encode(prompt);
  if (ids.empty()) throw Error(ErrorCode::EmptyContext, "sequence_terms: empty prompt");
  std::vector<TokenId> targets = model.encode(answer_continuation(answer));
  targets.push_back(model.eos_token_id());
  std::vector<LogitLossTerm> terms;
  terms.reserve(targets.size());
  for (TokenId t : targets) {
    terms.push_back({ids, [t](std::span<const double> l, std::span<double> dl) { return cross_entropy(l, t, dl, 1.0); }});
    ids.push_back(t);
  }
  return terms;
}

AdapterCheckpoint fresh_adapter(const MicroLM& model, const TrainConfig& config, std::string role) {
  AdapterCheckpoint c;
  c.adapter = LowRankAdapter::init(model.d_model(), config.rank, config.alpha, derive_seed(config.seed, role));
  c.role = std::move(role);
  return c;
}

TrainStats train_sft(const MicroLM& model, AdapterCheckpoint& checkpoint,
                     const std::vector<std::pair<std::string, std::string>>& pairs, const TrainConfig& config) {
  config.validate();
  if (checkpoint.frozen) {
    throw Error(ErrorCode::FrozenProxy, "train: checkpoint '" + checkpoint.role + "' is frozen");
  }
  if (pairs.empty()) throw Error(ErrorCode::EmptyTrainSplit, "train: no training pairs");
  std::vector<std::vector<LogitLossTerm>> per_example;
  per_example.reserve(pairs.size());
  for (const auto& [prompt, answer] : pairs) per_example.push_back(sequence_terms(model, prompt, answer));

  Rng rng(derive_seed(config.seed, "sft:" + checkpoint.role));
  TrainStats stats;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch : epoch_batches(pairs.size(), config.batch_size, rng)) {
      AdapterLoss loss;
      for (std::size_t i : batch) {
        auto terms = per_example[i];
        scale_terms(terms, 1.0 / static_cast<double>(batch.size()));
        loss.terms.insert(loss.terms.end(), terms.begin(), terms.end());
      }
      auto g = grad_adapter(model, checkpoint.adapter, loss);
      total += g.loss * static_cast<double>(batch.size());
      checkpoint.adapter.axpy(-config.lr, g.grad);
    }
    stats.epoch_loss.push_back(total / static_cast<double>(pairs.size()));
  }
  return stats;
}

AdapterCheckpoint train_hdp(const MicroLM& base, const Dataset& train, const TrainConfig& config) {
  if (train.empty()) throw Error(ErrorCode::EmptyTrainSplit, "train_hdp: empty training split");
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(train.size());
  for (const auto& e : train) {
    if (e.hallucinated_answer.empty()) {
      throw Error(ErrorCode::SchemaViolation, "train_hdp: example '" + e.id + "' has no hallucinated answer");
    }
    pairs.emplace_back(build_triplet(e).t_minus, e.hallucinated_answer);
  }
  auto hdp = fresh_adapter(base, config, "hdp");
  if (config.epochs > 0) {
    auto stats = train_sft(base, hdp, pairs, config);
    hdp.meta["epoch_loss"] = stats.epoch_loss;
  }
  hdp.frozen = true;
  return hdp;
}

TrainStats pretrain_base(MicroLM& model, const std::vector<std::pair<std::string, std::string>>& pairs,
                         const TrainConfig& config) {
  config.validate();
  if (pairs.empty()) throw Error(ErrorCode::EmptyTrainSplit, "pretrain: no training pairs");
  std::vector<std::vector<LogitLossTerm>> per_example;
  for (const auto& [prompt, answer] : pairs) per_example.push_back(sequence_terms(model, prompt, answer));

  Rng rng(derive_seed(config.seed, "pretrain"));
  TrainStats stats;
  const std::size_t v = model.vocabulary().size();
  std::vector<double> dlogits(v);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch : epoch_batches(pairs.size(), config.batch_size, rng)) {
      auto grad = ModelParams::zeros_like(model.params());
      const double w = 1.0 / static_cast<double>(batch.size());
      for (std::size_t i : batch) {
        for (const auto& term : per_example[i]) {
          auto state = model.forward(term.context, nullptr);
          std::fill(dlogits.begin(), dlogits.end(), 0.0);
          total += term.fn(state.logits, dlogits);
          for (auto& x : dlogits) x *= w;
          model.backward(state, dlogits, nullptr, &grad, nullptr);
        }
      }
      model.mutable_params().axpy(-config.lr, grad);
    }
    stats.epoch_loss.push_back(total / static_cast<double>(pairs.size()));
  }
  return stats;
}

double exact_match_rate(const MicroLM& model, const LowRankAdapter* adapter, const Dataset& data,
                        const std::function<std::string(const TrainingExample&)>& prompt_of,
                        std::size_t max_new_tokens, std::size_t threads) {
  if (data.empty()) return 0.0;
  std::vector<char> hit(data.size(), 0);
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto out = model.generate_greedy(adapter, prompt_of(data[i]), max_new_tokens);
    hit[i] = exact_match(out, data[i].correct_answer) ? 1 : 0;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(data.size());
}

double validation_em(const MicroLM& model, const LowRankAdapter* adapter, const Dataset& val,
                     const TrainConfig& config) {
  return exact_match_rate(
      model, adapter, val, [](const TrainingExample& e) { return build_triplet(e).t_plus; },
      config.max_gen_tokens, config.eval_threads);
}

json IterationReport::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss ? json(*e.train_loss) : json(nullptr)},
                           {"val_em", e.val_em},
                           {"checkpoint_id", e.checkpoint_id},
                           {"hash", e.hash}});
  }
  return {{"iteration", iteration},
          {"epochs", epochs_json},
          {"selected", selected},
          {"selected_id", selected_id},
          {"selected_em", selected_em}};
}

std::size_t select_checkpoint(const std::vector<EpochRecord>& epochs) {
  if (epochs.empty()) throw Error(ErrorCode::InvalidArgument, "select_checkpoint: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < epochs.size(); ++i) {
    if (epochs[i].val_em > epochs[best].val_em) best = i;
  }
  return best;
}

namespace {

struct ContrastiveItem {
  std::vector<TokenId> t_plus;
  LogitVector l_base;  // base on T
  LogitVector l_hdp;   // frozen HDP on T-
};

std::vector<ContrastiveItem> contrastive_items(const MicroLM& base, const LowRankAdapter& hdp, const Dataset& data) {
  std::vector<ContrastiveItem> items;
  items.reserve(data.size());
  for (const auto& e : data) {
    auto tr = build_triplet(e);
    items.push_back({base.encode(tr.t_plus), base.forward_last_token(nullptr, std::string_view(tr.t)),
                     base.forward_last_token(&hdp, std::string_view(tr.t_minus))});
  }
  return items;
}

LogitLossTerm contrastive_loss_term(const ContrastiveItem& item, LogitSpace space, double weight) {
  return {item.t_plus, [&item, space, weight](std::span<const double> l, std::span<double> dl) {
            return contrastive_term(item.l_base.values(), item.l_hdp.values(), l, dl, space, weight);
          }};
}

}  // namespace

double contrastive_objective(const MicroLM& base, const LowRankAdapter& fap, const LowRankAdapter& hdp,
                             const Dataset& data, LogitSpace space) {
  if (data.empty()) return 0.0;
  auto items = contrastive_items(base, hdp, data);
  AdapterLoss loss;
  for (const auto& it : items) loss.terms.push_back(contrastive_loss_term(it, space, 1.0 / static_cast<double>(items.size())));
  return evaluate_adapter_loss(base, fap, loss);
}

AdapterGradient contrastive_gradient(const MicroLM& base, const LowRankAdapter& fap, const LowRankAdapter& hdp,
                                     const Dataset& data, LogitSpace space) {
  if (data.empty()) throw Error(ErrorCode::EmptyTrainSplit, "contrastive_gradient: no examples");
  auto items = contrastive_items(base, hdp, data);
  AdapterLoss loss;
  for (const auto& it : items) loss.terms.push_back(contrastive_loss_term(it, space, 1.0 / static_cast<double>(items.size())));
  return grad_adapter(base, fap, loss);
}

RefineResult refine_fap(const MicroLM& base, const AdapterCheckpoint& hdp, const Dataset& train, const Dataset& val,
                        std::size_t k, const TrainConfig& config, const CheckpointSink& sink,
                        std::optional<AdapterCheckpoint> initial_fap) {
  config.validate();
  if (!hdp.frozen) throw Error(ErrorCode::FrozenProxyMissing, "refine_fap: HDP checkpoint is not frozen");
  if (train.empty()) throw Error(ErrorCode::EmptyTrainSplit, "refine_fap: empty training split");
  if (val.empty()) throw Error(ErrorCode::EmptyValSplit, "refine_fap: empty validation split");
  if (k == 0) throw Error(ErrorCode::ConfigError, "refine_fap: K must be >= 1");

  const auto items = contrastive_items(base, hdp.adapter, train);
  AdapterCheckpoint current = initial_fap ? std::move(*initial_fap) : fresh_adapter(base, config, "fap");
  current.frozen = false;
  current.role = "fap";

  RefineResult result;
  double current_em = validation_em(base, &current.adapter, val, config);
  result.initial_em = current_em;
  Rng rng(derive_seed(config.seed, "refine"));

  for (std::size_t iter = 1; iter <= k; ++iter) {
    IterationReport report;
    report.iteration = static_cast<int>(iter);
    std::vector<LowRankAdapter> candidates;
    const std::string prefix = "k" + std::to_string(iter) + "-e";
    if (config.keep_incoming || config.epochs == 0) {
      report.epochs.push_back({0, std::nullopt, current_em, prefix + "0", current.hash()});
      candidates.push_back(current.adapter);
    }
    LowRankAdapter adapter = current.adapter;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
      double total = 0.0;
      for (const auto& batch : epoch_batches(items.size(), config.batch_size, rng)) {
        AdapterLoss loss;
        const double w = 1.0 / static_cast<double>(batch.size());
        for (std::size_t i : batch) loss.terms.push_back(contrastive_loss_term(items[i], config.logit_space, w));
        auto g = grad_adapter(base, adapter, loss);
        total += g.loss * static_cast<double>(batch.size());
        adapter.axpy(-config.lr, g.grad);
      }
      const double em = validation_em(base, &adapter, val, config);
      EpochRecord rec{epoch, total / static_cast<double>(items.size()), em, prefix + std::to_string(epoch),
                      adapter.content_hash()};
      if (sink) {
        AdapterCheckpoint ckpt{adapter, "fap", static_cast<int>(iter), em, false, json{{"epoch", epoch}}};
        sink(ckpt, rec.checkpoint_id);
      }
      report.epochs.push_back(std::move(rec));
      candidates.push_back(adapter);
    }
    report.selected = select_checkpoint(report.epochs);
    report.selected_id = report.epochs[report.selected].checkpoint_id;
    report.selected_em = report.epochs[report.selected].val_em;

    current.adapter = candidates[report.selected];
    current.iteration = static_cast<int>(iter);
    current.val_em = report.selected_em;
    current.meta["selected_id"] = report.selected_id;
    current_em = report.selected_em;
    result.reports.push_back(std::move(report));
  }
  result.final_fap = std::move(current);
  return result;
}

// ---- ablations ---------------------------------------------------------------

std::string Ablation::name() const {
  if (no_iterative) return "no_iterative";
  if (no_guidance) return "no_guidance";
  if (no_negative) return "no_negative";
  return "full";
}

Ablation parse_ablation(std::string_view flags) {
  Ablation a;
  int count = 0;
  std::size_t start = 0;
  while (start <= flags.size()) {
    auto end = flags.find(',', start);
    if (end == std::string_view::npos) end = flags.size();
    std::string item(flags.substr(start, end - start));
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    std::replace(item.begin(), item.end(), '-', '_');
    if (item == "no_iterative") {
      a.no_iterative = true;
      ++count;
    } else if (item == "no_guidance") {
      a.no_guidance = true;
      ++count;
    } else if (item == "no_negative") {
      a.no_negative = true;
      ++count;
    } else if (!item.empty() && item != "none" && item != "full") {
      throw Error(ErrorCode::ConfigError, "unknown ablation '" + item + "'");
    }
    start = end + 1;
  }
  if (count > 1) {
    throw Error(ErrorCode::ConflictingFlags, "ablations are exclusive; got '" + std::string(flags) + "'");
  }
  return a;
}

Wiring wire_ablation(const Ablation& ablation, ProviderPtr target, ProviderPtr base_proxy, ProviderPtr fap,
                     ProviderPtr hdp) {
  Wiring w{std::move(target), std::move(fap), std::move(hdp), false};
  if (ablation.no_iterative) {
    w.fap = base_proxy;
    w.hdp = base_proxy;
  } else if (ablation.no_negative) {
    w.hdp = base_proxy;
  } else if (ablation.no_guidance) {
    w.fap_generates = true;
  }
  return w;
}

GenerationTrace run_wiring(const Wiring& wiring, const SharedVocabMap& map, std::string_view prompt,
                           const DecodingConfig& config) {
  if (wiring.fap_generates) return decode_plain(*wiring.fap, prompt, config);
  return decode(*wiring.target, *wiring.fap, *wiring.hdp, map, prompt, config);
}

}  // namespace dscc
