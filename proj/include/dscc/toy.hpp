// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscc/align_train.hpp"
#include "dscc/dataset.hpp"
#include "dscc/micro_lm.hpp"

namespace dscc {

/// Synthetic "where is <entity> located?" facts with one-token city answers. Each entity
/// gets a distinct made-up name; the hallucinated answer is a different city.
Dataset make_planted_facts(std::size_t n, std::size_t n_cities, std::uint64_t seed);

struct ToyConfig {
  std::size_t n_facts = 200;
  std::size_t n_cities = 8;
  std::uint64_t seed = 7;
  double split_ratio = 0.8;

  std::size_t proxy_d = 16;
  std::size_t target_d = 32;
  double init_range = 0.3;
  /// Fraction of facts the target model is taught with the hallucinated answer.
  double target_error_rate = 0.4;

  TrainConfig base_pretrain{.lr = 0.1, .batch_size = 8, .epochs = 300};
  TrainConfig target_pretrain{.lr = 0.1, .batch_size = 8, .epochs = 300};
  TrainConfig hdp{.lr = 0.1};
  /// Raw-logit L2 gradients are large, so the contrastive step is much smaller than for CE.
  TrainConfig fap{.lr = 3e-4};
  std::size_t k = 3;
  std::size_t decode_max_tokens = 8;

  nlohmann::json to_json() const;
  static ToyConfig from_json(const nlohmann::json& j);
};

struct ToyModels {
  std::shared_ptr<MicroLM> base;    // proxy backbone
  std::shared_ptr<MicroLM> target;  // larger model with its own vocabulary
};

/// Builds the proxy and target vocabularies and pretrains both models.
ToyModels build_toy_models(const Dataset& data, const ToyConfig& config);

struct ToyReport {
  double base_em_t = 0.0;          // base greedy EM on raw questions (val)
  double iteration0_em = 0.0;      // FAP selection metric before refinement
  std::vector<IterationReport> iterations;
  double final_em = 0.0;
  bool hdp_unchanged = false;
  std::string hdp_hash;
  std::string fap_hash;

  /// Steered target EM on the validation questions per wiring.
  double target_alone_em = 0.0;
  double full_em = 0.0;
  double no_negative_em = 0.0;
  double no_iterative_em = 0.0;
  double no_guidance_em = 0.0;
  bool ordering_ok = false;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// End-to-end toy run: data, pretraining, HDP, K FAP iterations, ablation decoding.
ToyReport run_toy_experiment(const ToyConfig& config);

}  // namespace dscc
