// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscc/dataset.hpp"
#include "dscc/micro_lm.hpp"
#include "dscc/providers.hpp"
#include "dscc/steer.hpp"

namespace dscc {

inline constexpr std::string_view kTruthfulPrefix = "Please provide a truthful and accurate answer: ";
inline constexpr std::string_view kUntruthfulPrefix = "Please provide a fictional or untrue answer: ";

struct PromptTriplet {
  std::string t;
  std::string t_plus;
  std::string t_minus;
};

/// Prefixes are prepended byte-for-byte; the question is not normalized. Throws EmptyQuestion.
PromptTriplet build_triplet(const TrainingExample& example);
PromptTriplet build_triplet(std::string_view question);

/// ||l_base - l_fap||^2 - ||l_base - l_hdp||^2. Throws DimensionMismatch.
double contrastive_loss(const LogitVector& l_base, const LogitVector& l_fap, const LogitVector& l_hdp);
/// Gradient of contrastive_loss with respect to l_fap: 2 (l_fap - l_base).
std::vector<double> contrastive_loss_grad(const LogitVector& l_base, const LogitVector& l_fap);

/// Which representation of the final-token prediction enters the contrastive loss.
enum class LogitSpace { raw, softmax };
std::string_view to_string(LogitSpace s);
LogitSpace parse_logit_space(std::string_view s);

struct TrainConfig {
  double lr = 1e-2;
  std::size_t batch_size = 8;
  std::size_t epochs = 3;
  std::uint64_t seed = 0;
  std::size_t rank = 8;
  double alpha = 16.0;
  /// Greedy generation budget when scoring validation exact match.
  std::size_t max_gen_tokens = 32;
  LogitSpace logit_space = LogitSpace::raw;
  /// Also score the adapter an iteration starts from, as an epoch-0 candidate. This makes the
  /// selected EM non-decreasing by construction but can stall training after a dip.
  bool keep_incoming = false;
  std::size_t eval_threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// " " + answer unless the answer already starts with whitespace.
std::string answer_continuation(std::string_view answer);

/// Next-token cross-entropy terms for `prompt` followed by `answer` and EOS.
std::vector<LogitLossTerm> sequence_terms(const MicroLM& model, std::string_view prompt, std::string_view answer);

/// Zero-B adapter (identity to base) with a role-specific seed for A.
AdapterCheckpoint fresh_adapter(const MicroLM& model, const TrainConfig& config, std::string role);

struct TrainStats {
  std::vector<double> epoch_loss;  // mean per-example loss over each epoch
};

/// Supervised fine-tuning of `checkpoint` with cross-entropy on (prompt, answer) pairs.
/// Throws FrozenProxy when the checkpoint is frozen and EmptyTrainSplit when pairs is empty.
TrainStats train_sft(const MicroLM& model, AdapterCheckpoint& checkpoint,
                     const std::vector<std::pair<std::string, std::string>>& pairs,
                     const TrainConfig& config);

/// Cross-entropy on (T-, A_hallucinated); the result is frozen.
AdapterCheckpoint train_hdp(const MicroLM& base, const Dataset& train, const TrainConfig& config);

/// Full-parameter cross-entropy pretraining of the model itself on (prompt, answer) pairs.
TrainStats pretrain_base(MicroLM& model, const std::vector<std::pair<std::string, std::string>>& pairs,
                         const TrainConfig& config);

/// Fraction of examples whose greedy continuation of the prompt exactly matches the correct answer.
double exact_match_rate(const MicroLM& model, const LowRankAdapter* adapter, const Dataset& data,
                        const std::function<std::string(const TrainingExample&)>& prompt_of,
                        std::size_t max_new_tokens, std::size_t threads = 1);

/// Exact match on T+ prompts, the selection criterion for FAP checkpoints.
double validation_em(const MicroLM& model, const LowRankAdapter* adapter, const Dataset& val,
                     const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;          // 0 = the adapter the iteration started from
  std::optional<double> train_loss;
  double val_em = 0.0;
  std::string checkpoint_id;      // "k<iteration>-e<epoch>"
  std::string hash;
};

struct IterationReport {
  int iteration = 0;
  std::vector<EpochRecord> epochs;
  std::size_t selected = 0;       // index into epochs
  std::string selected_id;
  double selected_em = 0.0;

  nlohmann::json to_json() const;
};

/// Index of the first maximal val_em; throws InvalidArgument on an empty list.
std::size_t select_checkpoint(const std::vector<EpochRecord>& epochs);

struct RefineResult {
  AdapterCheckpoint final_fap;
  std::vector<IterationReport> reports;
  double initial_em = 0.0;        // EM of the starting adapter before any iteration
};

using CheckpointSink = std::function<void(const AdapterCheckpoint&, const std::string& id)>;

/// K rounds of contrastive training: base on T, FAP on T+, frozen HDP on T-, final-token
/// logits, gradients into the FAP adapter only. After every epoch the FAP is scored on the
/// validation split; the best candidate seeds the next round.
/// Throws FrozenProxyMissing, EmptyTrainSplit, EmptyValSplit.
RefineResult refine_fap(const MicroLM& base, const AdapterCheckpoint& hdp, const Dataset& train,
                        const Dataset& val, std::size_t k, const TrainConfig& config,
                        const CheckpointSink& sink = {},
                        std::optional<AdapterCheckpoint> initial_fap = std::nullopt);

/// Mean contrastive loss of `fap` over `data` (for monitoring and tests).
double contrastive_objective(const MicroLM& base, const LowRankAdapter& fap, const LowRankAdapter& hdp,
                             const Dataset& data, LogitSpace space = LogitSpace::raw);

/// Analytic gradient of contrastive_objective with respect to the FAP adapter.
AdapterGradient contrastive_gradient(const MicroLM& base, const LowRankAdapter& fap, const LowRankAdapter& hdp,
                                     const Dataset& data, LogitSpace space = LogitSpace::raw);

// ---- ablations ---------------------------------------------------------------

struct Ablation {
  bool no_iterative = false;
  bool no_guidance = false;
  bool no_negative = false;

  bool none() const { return !no_iterative && !no_guidance && !no_negative; }
  std::string name() const;
};

/// Accepts "", "none", "full", "no_iterative", "no_guidance", "no_negative" (also with '-'),
/// comma-separated. More than one toggle throws ConflictingFlags.
Ablation parse_ablation(std::string_view flags);

struct Wiring {
  ProviderPtr target;
  ProviderPtr fap;
  ProviderPtr hdp;
  /// When set, the FAP generates alone and no steering is applied.
  bool fap_generates = false;
};

/// base_proxy is the proxy model with no adapter.
Wiring wire_ablation(const Ablation& ablation, ProviderPtr target, ProviderPtr base_proxy,
                     ProviderPtr fap, ProviderPtr hdp);

GenerationTrace run_wiring(const Wiring& wiring, const SharedVocabMap& map, std::string_view prompt,
                           const DecodingConfig& config);

}  // namespace dscc
