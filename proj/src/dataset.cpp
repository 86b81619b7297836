// SPDX-License-Identifier: Apache-2.0
#include "dscc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dscc/error.hpp"
#include "dscc/rng.hpp"

namespace dscc {

using nlohmann::json;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::felm_original: return "felm_original";
    case Provenance::paraphrase: return "paraphrase";
    case Provenance::perturbation: return "perturbation";
    case Provenance::external: return "external";
  }
  return "felm_original";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::unassigned: break;
  }
  return "unassigned";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "felm_original") return Provenance::felm_original;
  if (s == "paraphrase") return Provenance::paraphrase;
  if (s == "perturbation") return Provenance::perturbation;
  if (s == "external") return Provenance::external;
  throw Error(ErrorCode::SchemaViolation, "dataset: unknown provenance '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s.empty() || s == "unassigned") return Split::unassigned;
  throw Error(ErrorCode::SchemaViolation, "dataset: unknown split '" + std::string(s) + "'");
}

bool TrainingExample::complete() const {
  return !question.empty() && !correct_answer.empty() && !hallucinated_answer.empty();
}

json to_json(const TrainingExample& e) {
  json j{{"id", e.id},
         {"question", e.question},
         {"correct_answer", e.correct_answer},
         {"hallucinated_answer", e.hallucinated_answer},
         {"provenance", to_string(e.provenance)}};
  if (e.split != Split::unassigned) j["split"] = to_string(e.split);
  return j;
}

TrainingExample example_from_json(const json& j, std::string fallback_id) {
  TrainingExample e;
  try {
    if (j.contains("id")) {
      e.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else {
      e.id = std::move(fallback_id);
    }
    e.question = j.at("question").get<std::string>();
    e.correct_answer = j.value("correct_answer", "");
    e.hallucinated_answer = j.value("hallucinated_answer", "");
    e.provenance = parse_provenance(j.value("provenance", "felm_original"));
    e.split = parse_split(j.value("split", ""));
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::SchemaViolation, std::string("dataset: ") + ex.what());
  }
  return e;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "jsonl: cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(const std::vector<json>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "jsonl: cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

Dataset load_dataset(const std::filesystem::path& path) {
  Dataset data;
  auto rows = read_jsonl(path);
  for (std::size_t i = 0; i < rows.size(); ++i) data.push_back(example_from_json(rows[i], std::to_string(i)));
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(data.size());
  for (const auto& e : data) rows.push_back(to_json(e));
  write_jsonl(rows, path);
}

Dataset select_split(const Dataset& data, Split split) {
  Dataset out;
  std::copy_if(data.begin(), data.end(), std::back_inserter(out),
               [split](const TrainingExample& e) { return e.split == split; });
  return out;
}

std::size_t train_count(std::size_t n, double ratio) {
  // The small epsilon keeps products such as 0.7 * 10 = 7.000000000000001 from rounding up.
  const double raw = std::ceil(ratio * static_cast<double>(n) - 1e-9);
  auto k = static_cast<std::size_t>(std::max(0.0, raw));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

Dataset split_dataset(Dataset data, double ratio, std::uint64_t seed) {
  if (data.size() < 2) {
    throw Error(ErrorCode::TooFewExamples, "split: need at least 2 examples, got " + std::to_string(data.size()));
  }
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::ConfigError, "split: ratio must be in (0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_train = train_count(data.size(), ratio);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    data[order[rank]].split = rank < n_train ? Split::train : Split::val;
  }
  return data;
}

}  // namespace dscc
