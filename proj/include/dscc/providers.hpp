// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include <nlohmann/json.hpp>

#include "dscc/micro_lm.hpp"
#include "dscc/vocab.hpp"

namespace dscc {

struct ProviderInfo {
  std::string kind;           // "table", "micro_lm", "remote", ...
  std::string name;
  std::string vocab_hash;
  /// When true, logits() must not be called concurrently; callers serialize.
  bool exclusive = false;
  nlohmann::json extra = nlohmann::json::object();
};

/// Anything that maps a raw text context to next-token logits over a fixed vocabulary.
/// Implementations tokenize the context themselves.
class LogitProvider {
 public:
  virtual ~LogitProvider() = default;

  virtual const Vocabulary& vocabulary() const = 0;
  virtual LogitVector logits(std::string_view context) const = 0;
  virtual TokenId eos_token_id() const = 0;
  virtual ProviderInfo describe() const = 0;
};

using ProviderPtr = std::shared_ptr<const LogitProvider>;

/// Lookup table from exact context text to a stored vector, with an optional fallback.
class TableProvider final : public LogitProvider {
 public:
  TableProvider(VocabularyPtr vocab, TokenId eos, std::string name = "table");

  void set(std::string context, LogitVector logits);
  void set_default(LogitVector logits);

  const Vocabulary& vocabulary() const override { return *vocab_; }
  LogitVector logits(std::string_view context) const override;
  TokenId eos_token_id() const override { return eos_; }
  ProviderInfo describe() const override;

  /// File schema: {"name", "tokens": [...] | "vocab_file": path, "eos_token": str,
  /// "default": [..] (optional), "entries": [{"context": str, "logits": [..]}]}.
  static TableProvider from_json(const nlohmann::json& j,
                                 const std::filesystem::path& base_dir = {});
  static TableProvider load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

 private:
  void check_size(const LogitVector& v) const;

  VocabularyPtr vocab_;
  TokenId eos_;
  std::string name_;
  std::map<std::string, LogitVector, std::less<>> entries_;
  std::optional<LogitVector> default_;
};

/// The micro language model, optionally with a low-rank adapter, as a provider.
class MicroLMProvider final : public LogitProvider {
 public:
  MicroLMProvider(std::shared_ptr<const MicroLM> model,
                  std::optional<AdapterCheckpoint> adapter = std::nullopt,
                  std::string name = "micro_lm");

  const Vocabulary& vocabulary() const override { return model_->vocabulary(); }
  LogitVector logits(std::string_view context) const override;
  TokenId eos_token_id() const override { return model_->eos_token_id(); }
  ProviderInfo describe() const override;

  const MicroLM& model() const { return *model_; }
  const std::optional<AdapterCheckpoint>& adapter() const { return adapter_; }

 private:
  std::shared_ptr<const MicroLM> model_;
  std::optional<AdapterCheckpoint> adapter_;
  std::string name_;
};

struct RemoteOptions {
  std::string base_url;                  // e.g. http://127.0.0.1:8080
  std::string logits_path = "/logits";
  std::string vocab_path = "/vocab";
  std::chrono::milliseconds timeout{5000};
  int max_attempts = 3;
  std::chrono::milliseconds backoff{100};  // doubled after every failed attempt
};

/// Client for the remote logit protocol:
///   GET  {vocab_path}  -> {"tokens": [...], "vocab_hash": str, "eos_token_id": int}
///   POST {logits_path} <- {"context": str, "want": "last_token_logits"}
///                      -> {"logits": [float...], "vocab_hash": str}
/// The vocabulary is fetched once; every response must carry the same hash.
class RemoteProvider final : public LogitProvider {
 public:
  explicit RemoteProvider(RemoteOptions options);

  const Vocabulary& vocabulary() const override { return *vocab_; }
  LogitVector logits(std::string_view context) const override;
  TokenId eos_token_id() const override { return eos_; }
  ProviderInfo describe() const override;

  /// Decodes a /logits response body; exposed for schema tests.
  static LogitVector decode_response(const nlohmann::json& body, std::size_t vocab_size,
                                     const std::string& expected_hash);

 private:
  std::string request(const std::string& method, const std::string& path,
                      const std::string& body) const;

  RemoteOptions options_;
  VocabularyPtr vocab_;
  TokenId eos_ = -1;
};

/// Serves any provider over the remote logit protocol. Runs on a background thread.
class ProviderServer {
 public:
  explicit ProviderServer(ProviderPtr provider);
  ~ProviderServer();
  ProviderServer(const ProviderServer&) = delete;
  ProviderServer& operator=(const ProviderServer&) = delete;

  /// Binds (port 0 picks a free port) and starts serving; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks serving on the calling thread.
  void listen_blocking(const std::string& host, int port);
  void stop();
  std::string url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Wraps an exclusive provider so concurrent callers are serialized.
class SerializedProvider final : public LogitProvider {
 public:
  explicit SerializedProvider(ProviderPtr inner) : inner_(std::move(inner)) {}

  const Vocabulary& vocabulary() const override { return inner_->vocabulary(); }
  LogitVector logits(std::string_view context) const override {
    std::lock_guard lock(mutex_);
    return inner_->logits(context);
  }
  TokenId eos_token_id() const override { return inner_->eos_token_id(); }
  ProviderInfo describe() const override {
    auto info = inner_->describe();
    info.exclusive = false;
    return info;
  }

 private:
  ProviderPtr inner_;
  mutable std::mutex mutex_;
};

/// Returns `p` unchanged if it is concurrency-safe, else a serializing wrapper.
ProviderPtr make_concurrency_safe(ProviderPtr p);

/// Provider spec strings:
///   table:PATH                     TableProvider JSON file
///   micro:MODEL.json[@ADAPTER.json] micro-LM with optional adapter checkpoint
///   http://HOST:PORT[/prefix]      remote provider
ProviderPtr make_provider(const std::string& spec);

}  // namespace dscc
