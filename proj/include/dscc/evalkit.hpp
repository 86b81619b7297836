// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscc/dataset.hpp"

namespace dscc {

/// ASCII case-fold, trim, collapse whitespace runs to one space, strip trailing
/// punctuation (. , ! ? ; :) repeatedly.
std::string normalize_answer(std::string_view text);

bool exact_match(std::string_view prediction, std::string_view gold);

enum class MatchMode { word_boundary, substring };
std::string_view to_string(MatchMode m);
MatchMode parse_match_mode(std::string_view s);

struct KeywordSpec {
  std::string id;
  std::vector<std::string> ground_truth;
  std::vector<std::string> hallucination;
  MatchMode mode = MatchMode::word_boundary;

  /// Throws EmptySpec when the ground-truth list is empty and InvalidArgument when a
  /// phrase is empty or appears in both lists (case-insensitively).
  void validate() const;
};

/// Case-insensitive phrase search. In word_boundary mode an alphanumeric phrase edge must
/// not be adjacent to another alphanumeric character.
bool phrase_present(std::string_view text, std::string_view phrase, MatchMode mode);

inline constexpr const char* kFcrFormula = "fcr/1 clamp01((hit_gt - hit_hal) / n_gt)";

struct FcrHits {
  std::size_t gt = 0;
  std::size_t hal = 0;
};

FcrHits count_hits(std::string_view answer, const KeywordSpec& spec);
/// clamp to [0, 1] of (hit_gt - hit_hal) / |ground_truth|.
double fcr_from_hits(std::size_t hit_gt, std::size_t hit_hal, std::size_t n_gt);
double fcr(std::string_view answer, const KeywordSpec& spec);

struct Prediction {
  std::string id;
  std::string prediction;
};

/// JSONL {id, prediction}.
std::vector<Prediction> load_predictions(const std::filesystem::path& path);
void save_predictions(const std::vector<Prediction>& preds, const std::filesystem::path& path);
/// JSONL {id, gt_keywords[], hal_keywords[], mode?}.
std::map<std::string, KeywordSpec> load_keyword_specs(const std::filesystem::path& path);

/// Seam for an external hallucination scorer. Returning nullopt marks the score absent.
class ExternalScorer {
 public:
  virtual ~ExternalScorer() = default;
  virtual std::string name() const = 0;
  virtual std::optional<double> score(std::string_view question, std::string_view answer) const = 0;
};

/// POSTs {"question", "answer"} to `url` and reads {"score": number}. Any failure yields nullopt.
/// Calls are spaced at least `min_interval` apart.
class HttpScorer final : public ExternalScorer {
 public:
  explicit HttpScorer(std::string url,
                      std::chrono::milliseconds timeout = std::chrono::milliseconds(10000),
                      std::chrono::milliseconds min_interval = std::chrono::milliseconds(0));
  ~HttpScorer() override;
  std::string name() const override { return url_; }
  std::optional<double> score(std::string_view question, std::string_view answer) const override;

 private:
  struct Limiter;
  std::string url_;
  std::chrono::milliseconds timeout_;
  std::unique_ptr<Limiter> limiter_;
};

struct EvalRecord {
  std::string id;
  std::string prediction;
  std::string gold;
  bool em = false;
  std::optional<double> fcr;
  std::optional<double> external;

  bool operator==(const EvalRecord&) const = default;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  std::size_t n = 0;
  double accuracy = 0.0;                 // fraction of EM hits
  std::optional<double> mean_fcr;        // over records that have a keyword spec
  std::optional<double> mean_external;   // over records with a present external score
  std::size_t external_missing = 0;
  std::string fcr_formula = kFcrFormula;
  nlohmann::json meta = nlohmann::json::object();

  /// Recomputes n and the aggregates from `records`.
  void recompute();
  bool operator==(const EvalReport&) const = default;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
/// Fixed-width table: one row per example followed by the aggregate row.
std::string render_table(const EvalReport& r);

/// Scores predictions against the dataset's correct answers. Throws IdMismatch when the
/// prediction set is empty, has duplicate ids, or names an id absent from the dataset.
EvalReport evaluate_run(const std::vector<Prediction>& predictions, const Dataset& data,
                        const std::map<std::string, KeywordSpec>& specs,
                        const ExternalScorer* scorer = nullptr, std::size_t threads = 1);

}  // namespace dscc
