// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <cmath>

#include "dscc/error.hpp"
#include "dscc/providers.hpp"

namespace dscc {

using nlohmann::json;

namespace {

struct UrlParts {
  std::string scheme_host_port;
  std::string prefix;
};

UrlParts split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "remote provider: malformed URL '" + url + "'");
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

}  // namespace

std::string RemoteProvider::request(const std::string& method, const std::string& path,
                                    const std::string& body) const {
  const auto parts = split_url(options_.base_url);
  const std::string full_path = parts.prefix + path;
  auto backoff = options_.backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= std::max(1, options_.max_attempts); ++attempt) {
    httplib::Client client(parts.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    auto res = method == "GET" ? client.Get(full_path)
                               : client.Post(full_path, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) return res->body;
    if (res) {
      last_error = "HTTP " + std::to_string(res->status) + " from " + full_path + ": " + res->body;
      if (res->status < 500) break;  // client errors are not transient
    } else {
      last_error = "request to " + parts.scheme_host_port + full_path + " failed: " +
                   httplib::to_string(res.error());
    }
    if (attempt < options_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw Error(ErrorCode::Transport, "remote provider: " + last_error);
}

RemoteProvider::RemoteProvider(RemoteOptions options) : options_(std::move(options)) {
  json meta;
  try {
    meta = json::parse(request("GET", options_.vocab_path, ""));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("remote provider: vocabulary is not JSON: ") + e.what());
  }
  if (!meta.is_object() || !meta.contains("tokens") || !meta["tokens"].is_array() ||
      !meta.contains("vocab_hash") || !meta["vocab_hash"].is_string()) {
    throw Error(ErrorCode::SchemaViolation, "remote provider: vocabulary response lacks tokens/vocab_hash");
  }
  try {
    vocab_ = std::make_shared<const Vocabulary>(options_.base_url,
                                                meta["tokens"].get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("remote provider: bad token list: ") + e.what());
  }
  if (vocab_->hash() != meta["vocab_hash"].get<std::string>()) {
    throw Error(ErrorCode::VocabHashMismatch,
                "remote provider: advertised vocab hash does not match the served tokens");
  }
  if (meta.contains("eos_token_id") && meta["eos_token_id"].is_number_integer()) {
    eos_ = meta["eos_token_id"].get<TokenId>();
    vocab_->token(eos_);
  } else {
    throw Error(ErrorCode::SchemaViolation, "remote provider: vocabulary response lacks eos_token_id");
  }
}

LogitVector RemoteProvider::decode_response(const json& body, std::size_t vocab_size,
                                            const std::string& expected_hash) {
  if (!body.is_object() || !body.contains("logits") || !body["logits"].is_array()) {
    throw Error(ErrorCode::SchemaViolation, "remote provider: response lacks a 'logits' array");
  }
  if (!body.contains("vocab_hash") || !body["vocab_hash"].is_string()) {
    throw Error(ErrorCode::SchemaViolation, "remote provider: response lacks 'vocab_hash'");
  }
  if (body["vocab_hash"].get<std::string>() != expected_hash) {
    throw Error(ErrorCode::VocabHashMismatch, "remote provider: vocab hash changed mid-session (" +
                                                  body["vocab_hash"].get<std::string>() + " != " +
                                                  expected_hash + ")");
  }
  const auto& arr = body["logits"];
  if (arr.size() != vocab_size) {
    throw Error(ErrorCode::SchemaViolation, "remote provider: " + std::to_string(arr.size()) +
                                                " logits for vocabulary of size " +
                                                std::to_string(vocab_size));
  }
  std::vector<double> values;
  values.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw Error(ErrorCode::SchemaViolation, "remote provider: non-numeric logit");
    double x = v.get<double>();
    if (!std::isfinite(x)) throw Error(ErrorCode::SchemaViolation, "remote provider: non-finite logit");
    values.push_back(x);
  }
  return LogitVector(std::move(values));
}

LogitVector RemoteProvider::logits(std::string_view context) const {
  json req{{"context", std::string(context)}, {"want", "last_token_logits"}};
  const std::string body = request("POST", options_.logits_path, req.dump());
  json parsed;
  try {
    parsed = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("remote provider: response is not JSON: ") + e.what());
  }
  return decode_response(parsed, vocab_->size(), vocab_->hash());
}

ProviderInfo RemoteProvider::describe() const {
  return {"remote", options_.base_url, vocab_->hash(), false,
          json{{"timeout_ms", options_.timeout.count()}, {"max_attempts", options_.max_attempts}}};
}

// ---- server ------------------------------------------------------------------

struct ProviderServer::Impl {
  ProviderPtr provider;
  httplib::Server server;
  std::thread thread;
  std::string host;
  int port = 0;
};

ProviderServer::ProviderServer(ProviderPtr provider) : impl_(std::make_unique<Impl>()) {
  impl_->provider = make_concurrency_safe(std::move(provider));
  auto& srv = impl_->server;
  auto provider_ptr = impl_->provider;
  srv.Get("/vocab", [provider_ptr](const httplib::Request&, httplib::Response& res) {
    const auto& v = provider_ptr->vocabulary();
    json body{{"tokens", v.tokens()},
              {"vocab_hash", v.hash()},
              {"eos_token_id", provider_ptr->eos_token_id()},
              {"vocab_size", v.size()}};
    res.set_content(body.dump(), "application/json");
  });
  srv.Post("/logits", [provider_ptr](const httplib::Request& req, httplib::Response& res) {
    json in;
    try {
      in = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      res.set_content(json{{"error", "request is not JSON"}}.dump(), "application/json");
      return;
    }
    if (!in.is_object() || !in.contains("context") || !in["context"].is_string() ||
        in.value("want", "") != "last_token_logits") {
      res.status = 400;
      res.set_content(json{{"error", "expected {context: string, want: \"last_token_logits\"}"}}.dump(),
                      "application/json");
      return;
    }
    try {
      auto l = provider_ptr->logits(in["context"].get<std::string>());
      json body{{"logits", l.vec()}, {"vocab_hash", provider_ptr->vocabulary().hash()}};
      res.set_content(body.dump(), "application/json");
    } catch (const Error& e) {
      res.status = e.code() == ErrorCode::UnknownContext ? 404 : 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

ProviderServer::~ProviderServer() { stop(); }

int ProviderServer::start(const std::string& host, int port) {
  impl_->host = host;
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else if (impl_->server.bind_to_port(host, port)) {
    impl_->port = port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port < 0) {
    throw Error(ErrorCode::Transport, "provider server: cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void ProviderServer::listen_blocking(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port;
  if (!impl_->server.listen(host, port)) {
    throw Error(ErrorCode::Transport, "provider server: cannot listen on " + host + ":" + std::to_string(port));
  }
}

void ProviderServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string ProviderServer::url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

}  // namespace dscc
