// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscc/dataset.hpp"
#include "dscc/error.hpp"

namespace dscc {

inline constexpr std::string_view kTemplateVersion = "augment-templates/1";

/// A generation prompt: system role text plus an instruction with one placeholder slot.
/// The instruction keeps its "Instruction:" label; the system role does not carry a label.
struct AugmentationTemplate {
  std::string_view name;
  std::string_view system_role;
  std::string_view instruction;
  std::string_view slot;
  std::vector<std::string_view> output_labels;

  /// Substitutes `value` verbatim for the slot.
  std::string render(std::string_view value) const;
};

const AugmentationTemplate& paraphrase_template();
const AugmentationTemplate& perturbation_template();
const AugmentationTemplate& external_template();

/// Raised when client output cannot be parsed; carries the raw text.
class ClientOutputError : public Error {
 public:
  ClientOutputError(const std::string& message, std::string raw)
      : Error(ErrorCode::MalformedClientOutput, message), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

struct RetryPolicy {
  int attempts = 1;
  std::chrono::milliseconds backoff{0};  // doubled after each failed attempt
};

class GenClient {
 public:
  virtual ~GenClient() = default;
  /// Must be safe to call concurrently. Throws ClientFailure on transport errors.
  virtual std::string complete(std::string_view system_role, std::string_view instruction) const = 0;
  virtual std::string name() const = 0;
  virtual RetryPolicy retry_policy() const { return {}; }
};

/// Offline client. Prompts whose slot value is the template's own example input get the
/// example output back verbatim; anything else gets a synthetic answer derived from a hash
/// of (seed, prompt). Scripted responses override both. Never retries.
class MockGenClient : public GenClient {
 public:
  explicit MockGenClient(std::uint64_t seed = 0) : seed_(seed) {}

  /// Returns `response` whenever the rendered slot value equals `slot_value`.
  void script(std::string slot_value, std::string response);

  std::string complete(std::string_view system_role, std::string_view instruction) const override;
  std::string name() const override { return "mock"; }
  std::size_t calls() const { return calls_.load(); }

 private:
  std::uint64_t seed_;
  std::map<std::string, std::string, std::less<>> scripted_;
  mutable std::atomic<std::size_t> calls_{0};
};

struct HttpGenConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.7;
  std::chrono::milliseconds timeout{60000};
  std::chrono::milliseconds min_interval{200};
  RetryPolicy retry{3, std::chrono::milliseconds(500)};

  nlohmann::json to_json() const;
  static HttpGenConfig from_json(const nlohmann::json& j);
};

/// OpenAI-compatible chat completions client with a process-wide rate limit.
class HttpGenClient : public GenClient {
 public:
  explicit HttpGenClient(HttpGenConfig config);
  ~HttpGenClient() override;

  std::string complete(std::string_view system_role, std::string_view instruction) const override;
  std::string name() const override { return "http:" + config_.model; }
  RetryPolicy retry_policy() const override { return config_.retry; }

 private:
  struct Limiter;
  HttpGenConfig config_;
  std::unique_ptr<Limiter> limiter_;
};

/// Value after `label` on the single line that starts with it (case-insensitive), with
/// surrounding quotes removed. Throws ClientOutputError when absent, repeated or empty.
std::string parse_labeled(const std::string& raw, std::string_view label);

/// Three distinct paraphrases, none byte-equal to q. Throws EmptyQuestion,
/// MalformedClientOutput, ClientFailure.
std::vector<std::string> paraphrase_question(std::string_view q, const GenClient& client);

/// One hallucinated answer different from a_correct. Throws InvalidArgument on empty input,
/// MalformedClientOutput, ClientFailure.
std::string perturb_answer(std::string_view a_correct, const GenClient& client);

struct SkippedItem {
  std::size_t index = 0;
  std::string op;
  std::string reason;
};

struct SupplementResult {
  Dataset examples;
  std::vector<SkippedItem> skipped;
};

/// One external example per question; malformed items are skipped and logged.
SupplementResult supplement_external(const std::vector<std::string>& questions, const GenClient& client,
                                     std::size_t concurrency = 1);

struct AugmentOps {
  bool paraphrase = true;
  bool perturb = true;
  bool external = true;
};

/// Comma-separated subset of paraphrase, perturb, external. Throws ConfigError.
AugmentOps parse_ops(std::string_view ops);
std::string to_string(const AugmentOps& ops);

struct AugmentConfig {
  AugmentOps ops;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  std::size_t concurrency = 4;
  /// How many of the three paraphrases to keep per question.
  std::size_t paraphrases_per_question = 3;
  /// Cap on external questions used; 0 keeps all.
  std::size_t external_limit = 0;
};

struct AugmentResult {
  Dataset data;
  nlohmann::json manifest;
};

/// Perturbation fills a missing hallucinated answer (the example becomes provenance
/// perturbation) or adds a second example next to one that already has one. Paraphrases
/// inherit both answers. Output order follows input order, then externals; the result is
/// split by seed.
AugmentResult augment(const Dataset& original, const std::vector<std::string>& external_questions,
                      const GenClient& client, const AugmentConfig& config);

/// Reads external questions: JSONL rows with a "question" field, or plain text lines.
std::vector<std::string> load_questions(const std::filesystem::path& path);

}  // namespace dscc
