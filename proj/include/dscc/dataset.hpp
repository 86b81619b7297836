// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dscc {

enum class Provenance { felm_original, paraphrase, perturbation, external };
enum class Split { unassigned, train, val };

std::string_view to_string(Provenance p);
std::string_view to_string(Split s);
Provenance parse_provenance(std::string_view s);
Split parse_split(std::string_view s);

/// One (Q, A_correct, A_hallucinated) record.
struct TrainingExample {
  std::string id;
  std::string question;
  std::string correct_answer;
  std::string hallucinated_answer;
  Provenance provenance = Provenance::felm_original;
  Split split = Split::unassigned;

  /// True when all three texts are present.
  bool complete() const;
  bool operator==(const TrainingExample&) const = default;
};

using Dataset = std::vector<TrainingExample>;

/// JSONL: {id?, question, correct_answer, hallucinated_answer?, provenance?, split?} per line.
/// Missing ids become the zero-based line index.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
nlohmann::json to_json(const TrainingExample& e);
TrainingExample example_from_json(const nlohmann::json& j, std::string fallback_id);

Dataset select_split(const Dataset& data, Split split);

/// Seeded uniform permutation; the first ceil(ratio * n) examples go to train, the rest to
/// val, with both sides kept non-empty. Throws TooFewExamples when n < 2.
Dataset split_dataset(Dataset data, double ratio = 0.8, std::uint64_t seed = 0);

/// Number of training examples split_dataset assigns for n examples.
std::size_t train_count(std::size_t n, double ratio);

/// Reads a JSONL file line by line (blank lines skipped).
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::vector<nlohmann::json>& rows, const std::filesystem::path& path);

}  // namespace dscc
