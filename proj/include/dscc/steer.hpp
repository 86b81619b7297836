// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscc/providers.hpp"
#include "dscc/rng.hpp"
#include "dscc/vocab.hpp"

namespace dscc {

enum class SamplingPolicy { greedy, temperature };

struct DecodingConfig {
  std::size_t max_new_tokens = 128;
  SamplingPolicy policy = SamplingPolicy::greedy;
  double temperature = 1.0;
  /// Steering strength; 1.0 adds the projected steering vector unscaled.
  double lambda = 1.0;
  std::uint64_t seed = 0;
  bool record_trace = false;

  void validate() const;
};

/// g = l_fap - l_hdp, elementwise over the proxy vocabulary.
SteeringVector steering_vector(const LogitVector& l_fap, const LogitVector& l_hdp);

/// l_target + lambda * g_hat. Entries where lambda * g_hat is zero keep l_target's bits.
LogitVector adjust_logits(const LogitVector& l_target, const SteeringVector& g_hat, double lambda);

/// Numerically stable softmax of logits / temperature.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

struct SampledToken {
  TokenId token = -1;
  double probability = 0.0;
};

/// Greedy: argmax with lowest-id tie-break, probability under softmax(l).
/// Temperature: inverse-CDF draw from softmax(l / tau) using one rng.uniform().
SampledToken sample_next(const LogitVector& l_adjusted, const DecodingConfig& config, Rng& rng);

enum class StopReason { eos, max_len };
std::string_view to_string(StopReason r);

struct StepRecord {
  std::size_t step = 0;
  std::string context;
  LogitVector l_target, l_fap, l_hdp;
  SteeringVector g, g_hat;
  LogitVector l_adjusted;
  TokenId token = -1;
  double probability = 0.0;
};

struct GenerationTrace {
  std::string prompt;
  std::vector<TokenId> tokens;   // emitted tokens; excludes a terminating EOS
  std::vector<double> probabilities;
  std::string text;              // detokenized emitted tokens
  StopReason stop = StopReason::max_len;
  std::vector<StepRecord> steps; // populated when record_trace is set
};

/// Steered autoregressive decoding. At each step the three providers see the same
/// raw context text; the sampled target token's surface is appended to it.
GenerationTrace decode(const LogitProvider& target, const LogitProvider& fap,
                       const LogitProvider& hdp, const SharedVocabMap& map,
                       std::string_view prompt, const DecodingConfig& config);

/// Unsteered decoding of a single provider (same sampler and stop rules).
GenerationTrace decode_plain(const LogitProvider& target, std::string_view prompt,
                             const DecodingConfig& config);

/// Decodes several prompts concurrently (up to `threads` jobs). Exclusive providers are
/// serialized. Output order follows `prompts`.
std::vector<GenerationTrace> decode_batch(ProviderPtr target, ProviderPtr fap, ProviderPtr hdp,
                                          const SharedVocabMap& map,
                                          std::span<const std::string> prompts,
                                          const DecodingConfig& config, std::size_t threads = 1);

// ---- trace files -------------------------------------------------------------
//
// JSONL, schema "dscc-trace/1":
//   {"type":"header","schema":..,"prompt":..,"config":{..},"providers":{..}}
//   {"type":"step","step":t,"context":..,"token":id,"token_text":..,"probability":p,
//    "l_target":[..],"l_fap":[..],"l_hdp":[..],"g":[..],"g_hat":[..],"l_adjusted":[..]}
//   {"type":"end","stop":"eos"|"max_len","tokens":[..],"text":..}

inline constexpr const char* kTraceSchema = "dscc-trace/1";

void write_trace(std::ostream& out, const GenerationTrace& trace, const DecodingConfig& config,
                 const nlohmann::json& providers, const Vocabulary& target_vocab,
                 const SharedVocabMap* map);

struct LoadedTrace {
  nlohmann::json header;
  GenerationTrace trace;
  double lambda = 1.0;
  /// Shared map, when the header carries one.
  std::optional<SharedVocabMap> map;
};

LoadedTrace read_trace(std::istream& in);

struct ReplayReport {
  std::size_t steps = 0;
  std::size_t mismatched_steps = 0;
  std::vector<std::string> problems;
  bool ok() const { return mismatched_steps == 0 && problems.empty(); }
};

/// Recomputes g, g_hat and l_adjusted from the recorded l_target/l_fap/l_hdp and compares
/// bit-for-bit. Without a recorded map the projection step is not checked.
ReplayReport replay_trace(const LoadedTrace& trace);

}  // namespace dscc
