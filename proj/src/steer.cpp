// SPDX-License-Identifier: Apache-2.0
#include "dscc/steer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include "dscc/error.hpp"

namespace dscc {

using nlohmann::json;

void DecodingConfig::validate() const {
  if (max_new_tokens < 1) throw Error(ErrorCode::ConfigError, "decode: max_new_tokens must be >= 1");
  if (policy == SamplingPolicy::temperature && !(temperature > 0.0 && std::isfinite(temperature))) {
    throw Error(ErrorCode::ConfigError, "decode: temperature must be a finite value > 0");
  }
  if (!std::isfinite(lambda)) throw Error(ErrorCode::ConfigError, "decode: lambda must be finite");
}

SteeringVector steering_vector(const LogitVector& l_fap, const LogitVector& l_hdp) {
  if (l_fap.vocab_size() != l_hdp.vocab_size()) {
    throw Error(ErrorCode::DimensionMismatch, "steering_vector: FAP has " +
                                                  std::to_string(l_fap.vocab_size()) +
                                                  " logits, HDP has " +
                                                  std::to_string(l_hdp.vocab_size()));
  }
  std::vector<double> g(l_fap.vocab_size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = l_fap[i] - l_hdp[i];
  return SteeringVector(std::move(g));
}

LogitVector adjust_logits(const LogitVector& l_target, const SteeringVector& g_hat, double lambda) {
  if (l_target.vocab_size() != g_hat.vocab_size()) {
    throw Error(ErrorCode::DimensionMismatch, "adjust_logits: target has " +
                                                  std::to_string(l_target.vocab_size()) +
                                                  " logits, steering vector has " +
                                                  std::to_string(g_hat.vocab_size()));
  }
  std::vector<double> out(l_target.vec());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double delta = lambda * g_hat[i];
    if (delta != 0.0) out[i] += delta;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) {
      throw Error(ErrorCode::NonFiniteResult, "adjust_logits: overflow at token id " + std::to_string(i));
    }
  }
  return LogitVector(std::move(out));
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

SampledToken sample_next(const LogitVector& l, const DecodingConfig& config, Rng& rng) {
  if (l.vocab_size() == 0) throw Error(ErrorCode::InvalidArgument, "sample_next: empty logits");
  if (config.policy == SamplingPolicy::greedy) {
    auto vals = l.values();
    auto best = static_cast<TokenId>(std::max_element(vals.begin(), vals.end()) - vals.begin());
    auto p = softmax(vals);
    return {best, p[best]};
  }
  auto p = softmax(l.values(), config.temperature);
  const double u = rng.uniform();
  double cum = 0.0;
  TokenId last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) last_positive = static_cast<TokenId>(i);
    cum += p[i];
    if (u < cum) return {static_cast<TokenId>(i), p[i]};
  }
  // Rounding left cum slightly below 1 and u above it.
  return {last_positive, p[last_positive]};
}

std::string_view to_string(StopReason r) { return r == StopReason::eos ? "eos" : "max_len"; }

namespace {

LogitVector query(const LogitProvider& provider, std::string_view role, std::string_view context,
                  std::size_t step) {
  try {
    auto l = provider.logits(context);
    if (l.vocab_size() != provider.vocabulary().size()) {
      throw Error(ErrorCode::DimensionMismatch, "provider returned " + std::to_string(l.vocab_size()) +
                                                    " logits for vocabulary of size " +
                                                    std::to_string(provider.vocabulary().size()));
    }
    return l;
  } catch (const Error& e) {
    throw Error(e.code(), "decode step " + std::to_string(step) + " (" + std::string(role) + "): " + e.what());
  }
}

}  // namespace

GenerationTrace decode(const LogitProvider& target, const LogitProvider& fap,
                       const LogitProvider& hdp, const SharedVocabMap& map,
                       std::string_view prompt, const DecodingConfig& config) {
  config.validate();
  if (fap.vocabulary().hash() != hdp.vocabulary().hash()) {
    throw Error(ErrorCode::ProxyVocabMismatch, "decode: FAP and HDP vocabularies differ");
  }
  if (map.proxy_size() != fap.vocabulary().size() || map.target_size() != target.vocabulary().size()) {
    throw Error(ErrorCode::DimensionMismatch, "decode: shared map was built for other vocabularies");
  }
  Rng rng(config.seed);
  GenerationTrace trace;
  trace.prompt = std::string(prompt);
  std::string context(prompt);
  for (std::size_t t = 0; t < config.max_new_tokens; ++t) {
    auto l_target = query(target, "target", context, t);
    auto l_fap = query(fap, "fap", context, t);
    auto l_hdp = query(hdp, "hdp", context, t);
    auto g = steering_vector(l_fap, l_hdp);
    auto g_hat = project_steering(g, map);
    auto l_adjusted = adjust_logits(l_target, g_hat, config.lambda);
    auto pick = sample_next(l_adjusted, config, rng);
    if (config.record_trace) {
      trace.steps.push_back({t, context, std::move(l_target), std::move(l_fap), std::move(l_hdp),
                             std::move(g), std::move(g_hat), std::move(l_adjusted), pick.token,
                             pick.probability});
    }
    trace.probabilities.push_back(pick.probability);
    if (pick.token == target.eos_token_id()) {
      trace.stop = StopReason::eos;
      return trace;
    }
    const auto& surface = target.vocabulary().token(pick.token);
    trace.tokens.push_back(pick.token);
    trace.text += surface;
    context += surface;
  }
  trace.stop = StopReason::max_len;
  return trace;
}

GenerationTrace decode_plain(const LogitProvider& target, std::string_view prompt,
                             const DecodingConfig& config) {
  config.validate();
  Rng rng(config.seed);
  GenerationTrace trace;
  trace.prompt = std::string(prompt);
  std::string context(prompt);
  for (std::size_t t = 0; t < config.max_new_tokens; ++t) {
    auto l = query(target, "target", context, t);
    auto pick = sample_next(l, config, rng);
    trace.probabilities.push_back(pick.probability);
    if (pick.token == target.eos_token_id()) {
      trace.stop = StopReason::eos;
      return trace;
    }
    const auto& surface = target.vocabulary().token(pick.token);
    trace.tokens.push_back(pick.token);
    trace.text += surface;
    context += surface;
  }
  trace.stop = StopReason::max_len;
  return trace;
}

std::vector<GenerationTrace> decode_batch(ProviderPtr target, ProviderPtr fap, ProviderPtr hdp,
                                          const SharedVocabMap& map,
                                          std::span<const std::string> prompts,
                                          const DecodingConfig& config, std::size_t threads) {
  target = make_concurrency_safe(std::move(target));
  fap = make_concurrency_safe(std::move(fap));
  hdp = make_concurrency_safe(std::move(hdp));
  std::vector<GenerationTrace> out(prompts.size());
  threads = std::max<std::size_t>(1, std::min(threads, prompts.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      out[i] = decode(*target, *fap, *hdp, map, prompts[i], config);
    }
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < prompts.size(); i = next++) {
        try {
          out[i] = decode(*target, *fap, *hdp, map, prompts[i], config);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

// ---- trace files -------------------------------------------------------------

void write_trace(std::ostream& out, const GenerationTrace& trace, const DecodingConfig& config,
                 const json& providers, const Vocabulary& target_vocab, const SharedVocabMap* map) {
  json header{{"type", "header"},
              {"schema", kTraceSchema},
              {"prompt", trace.prompt},
              {"config",
               {{"max_new_tokens", config.max_new_tokens},
                {"policy", config.policy == SamplingPolicy::greedy ? "greedy" : "temperature"},
                {"temperature", config.temperature},
                {"lambda", config.lambda},
                {"seed", config.seed}}},
              {"providers", providers}};
  if (map) {
    json pairs = json::array();
    for (auto [p, t] : map->pairs()) pairs.push_back({p, t});
    header["map"] = {{"proxy_size", map->proxy_size()},
                     {"target_size", map->target_size()},
                     {"pairs", std::move(pairs)}};
  }
  out << header.dump() << '\n';
  for (const auto& s : trace.steps) {
    json step{{"type", "step"},
              {"step", s.step},
              {"context", s.context},
              {"token", s.token},
              {"token_text", target_vocab.token(s.token)},
              {"probability", s.probability},
              {"l_target", s.l_target.vec()},
              {"l_fap", s.l_fap.vec()},
              {"l_hdp", s.l_hdp.vec()},
              {"g", s.g.vec()},
              {"g_hat", s.g_hat.vec()},
              {"l_adjusted", s.l_adjusted.vec()}};
    out << step.dump() << '\n';
  }
  json end{{"type", "end"}, {"stop", to_string(trace.stop)}, {"tokens", trace.tokens}, {"text", trace.text}};
  out << end.dump() << '\n';
}

LoadedTrace read_trace(std::istream& in) {
  LoadedTrace loaded;
  std::string line;
  bool have_header = false, have_end = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
    const auto type = j.value("type", "");
    try {
      if (type == "header") {
        if (j.value("schema", "") != kTraceSchema) {
          throw Error(ErrorCode::VersionMismatch, "trace: unsupported schema '" + j.value("schema", "") + "'");
        }
        loaded.header = j;
        loaded.trace.prompt = j.at("prompt").get<std::string>();
        loaded.lambda = j.at("config").at("lambda").get<double>();
        if (j.contains("map")) {
          std::vector<SharedVocabMap::Pair> pairs;
          for (const auto& p : j["map"].at("pairs")) pairs.emplace_back(p.at(0).get<TokenId>(), p.at(1).get<TokenId>());
          loaded.map.emplace(std::move(pairs), j["map"].at("proxy_size").get<std::size_t>(),
                             j["map"].at("target_size").get<std::size_t>());
        }
        have_header = true;
      } else if (type == "step") {
        auto vec = [&](const char* k) { return j.at(k).get<std::vector<double>>(); };
        StepRecord s{j.at("step").get<std::size_t>(),
                     j.at("context").get<std::string>(),
                     LogitVector(vec("l_target")),
                     LogitVector(vec("l_fap")),
                     LogitVector(vec("l_hdp")),
                     SteeringVector(vec("g")),
                     SteeringVector(vec("g_hat")),
                     LogitVector(vec("l_adjusted")),
                     j.at("token").get<TokenId>(),
                     j.at("probability").get<double>()};
        loaded.trace.probabilities.push_back(s.probability);
        loaded.trace.steps.push_back(std::move(s));
      } else if (type == "end") {
        loaded.trace.stop = j.at("stop").get<std::string>() == "eos" ? StopReason::eos : StopReason::max_len;
        loaded.trace.tokens = j.at("tokens").get<std::vector<TokenId>>();
        loaded.trace.text = j.at("text").get<std::string>();
        have_end = true;
      } else {
        throw Error(ErrorCode::SchemaViolation, "trace line " + std::to_string(lineno) + ": unknown type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header || !have_end) throw Error(ErrorCode::SchemaViolation, "trace: missing header or end record");
  return loaded;
}

ReplayReport replay_trace(const LoadedTrace& loaded) {
  ReplayReport report;
  for (const auto& s : loaded.trace.steps) {
    ++report.steps;
    bool bad = false;
    auto note = [&](const std::string& what) {
      report.problems.push_back("step " + std::to_string(s.step) + ": " + what);
      bad = true;
    };
    auto g = steering_vector(s.l_fap, s.l_hdp);
    if (!bit_equal(g.values(), s.g.values())) note("g != l_fap - l_hdp");
    if (loaded.map) {
      auto g_hat = project_steering(g, *loaded.map);
      if (!bit_equal(g_hat.values(), s.g_hat.values())) note("g_hat != projection of g");
    }
    auto l_adj = adjust_logits(s.l_target, s.g_hat, loaded.lambda);
    if (!bit_equal(l_adj.values(), s.l_adjusted.values())) note("l_adjusted != l_target + lambda * g_hat");
    auto p = softmax(s.l_adjusted.values(), loaded.header.at("config").value("policy", "greedy") == "greedy"
                                                ? 1.0
                                                : loaded.header.at("config").value("temperature", 1.0));
    if (s.token < 0 || static_cast<std::size_t>(s.token) >= p.size() || p[s.token] != s.probability) {
      note("recorded probability does not match softmax of l_adjusted");
    }
    if (bad) ++report.mismatched_steps;
  }
  return report;
}

}  // namespace dscc
