// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscc/align_train.hpp"
#include "dscc/dataaug.hpp"
#include "dscc/steer.hpp"
#include "dscc/toy.hpp"

namespace dscc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Environment variable naming a config file when --config is absent.
inline constexpr const char* kConfigEnv = "DSCC_CONFIG";

/// Everything a command needs. Serialized as the snapshot written to the run directory;
/// passing that snapshot back with --config repeats the run.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_dir;  // empty: runs/<command>
  double split_ratio = 0.8;
  std::size_t threads = 1;

  struct Paths {
    std::string data, model, pred, specs, trace, in, out, external, prompts;
  } paths;
  std::vector<std::string> prompts;
  std::string split = "val";  // decode input split: train, val or all

  struct Providers {
    std::string target, fap, hdp, base;
  } providers;
  DecodingConfig decoding;
  std::string ablation;

  TrainConfig train;  // FAP refinement
  TrainConfig hdp{.lr = 0.05};
  std::size_t k = 3;

  std::string client = "mock";
  std::string ops = "paraphrase,perturb,external";
  std::size_t concurrency = 4;
  std::size_t paraphrases_per_question = 3;
  std::size_t external_limit = 0;
  HttpGenConfig http;

  std::string scorer_url;
  std::size_t scorer_timeout_ms = 10000;
  std::size_t scorer_min_interval_ms = 0;

  ToyConfig toy;

  nlohmann::json to_json() const;
  /// Rejects unknown keys and wrong types with ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
};

nlohmann::json to_json(const DecodingConfig& c);
DecodingConfig decoding_from_json(const nlohmann::json& j);

/// Runs one command line (arguments after the program name). Output goes to `out`, logs
/// and diagnostics to `err`. Returns kExitOk, kExitRuntime or kExitConfig.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dscc
