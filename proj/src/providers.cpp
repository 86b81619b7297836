// SPDX-License-Identifier: Apache-2.0
#include "dscc/providers.hpp"

#include <fstream>

#include "dscc/error.hpp"

namespace dscc {

using nlohmann::json;

TableProvider::TableProvider(VocabularyPtr vocab, TokenId eos, std::string name)
    : vocab_(std::move(vocab)), eos_(eos), name_(std::move(name)) {
  vocab_->token(eos_);
}

void TableProvider::check_size(const LogitVector& v) const {
  if (v.vocab_size() != vocab_->size()) {
    throw Error(ErrorCode::DimensionMismatch, "table provider '" + name_ + "': vector of size " +
                                                  std::to_string(v.vocab_size()) +
                                                  " for vocabulary of size " +
                                                  std::to_string(vocab_->size()));
  }
}

void TableProvider::set(std::string context, LogitVector logits) {
  check_size(logits);
  entries_.insert_or_assign(std::move(context), std::move(logits));
}

void TableProvider::set_default(LogitVector logits) {
  check_size(logits);
  default_ = std::move(logits);
}

LogitVector TableProvider::logits(std::string_view context) const {
  auto it = entries_.find(context);
  if (it != entries_.end()) return it->second;
  if (default_) return *default_;
  throw Error(ErrorCode::UnknownContext,
              "table provider '" + name_ + "' has no entry for context \"" + std::string(context) + "\"");
}

ProviderInfo TableProvider::describe() const {
  return {"table", name_, vocab_->hash(), false,
          json{{"entries", entries_.size()}, {"has_default", default_.has_value()}}};
}

TableProvider TableProvider::from_json(const json& j, const std::filesystem::path& base_dir) {
  VocabularyPtr vocab;
  const std::string name = j.value("name", "table");
  if (j.contains("tokens")) {
    vocab = std::make_shared<const Vocabulary>(name, j.at("tokens").get<std::vector<std::string>>());
  } else if (j.contains("vocab_file")) {
    vocab = std::make_shared<const Vocabulary>(
        load_vocabulary(base_dir / j.at("vocab_file").get<std::string>(), name));
  } else {
    throw Error(ErrorCode::SchemaViolation, "table provider: needs 'tokens' or 'vocab_file'");
  }
  TokenId eos;
  if (j.contains("eos_token_id")) {
    eos = j.at("eos_token_id").get<TokenId>();
  } else {
    auto found = vocab->find(j.value("eos_token", "<eos>"));
    if (!found) throw Error(ErrorCode::SchemaViolation, "table provider: eos token not in vocabulary");
    eos = *found;
  }
  TableProvider table(vocab, eos, name);
  if (j.contains("default") && !j["default"].is_null()) {
    table.set_default(LogitVector(j["default"].get<std::vector<double>>()));
  }
  for (const auto& e : j.value("entries", json::array())) {
    table.set(e.at("context").get<std::string>(), LogitVector(e.at("logits").get<std::vector<double>>()));
  }
  return table;
}

TableProvider TableProvider::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "table provider: cannot open " + path.string());
  try {
    return from_json(json::parse(in), path.parent_path());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, "table provider: " + path.string() + ": " + e.what());
  }
}

json TableProvider::to_json() const {
  json j;
  j["name"] = name_;
  j["tokens"] = vocab_->tokens();
  j["eos_token_id"] = eos_;
  if (default_) j["default"] = default_->vec();
  j["entries"] = json::array();
  for (const auto& [ctx, v] : entries_) j["entries"].push_back({{"context", ctx}, {"logits", v.vec()}});
  return j;
}

MicroLMProvider::MicroLMProvider(std::shared_ptr<const MicroLM> model,
                                 std::optional<AdapterCheckpoint> adapter, std::string name)
    : model_(std::move(model)), adapter_(std::move(adapter)), name_(std::move(name)) {
  if (adapter_ && adapter_->adapter.d_model() != model_->d_model()) {
    throw Error(ErrorCode::DimensionMismatch, "micro_lm provider: adapter width does not match model");
  }
}

LogitVector MicroLMProvider::logits(std::string_view context) const {
  return model_->forward_last_token(adapter_ ? &adapter_->adapter : nullptr, context);
}

ProviderInfo MicroLMProvider::describe() const {
  json extra{{"model_hash", model_->content_hash()}, {"d_model", model_->d_model()}};
  if (adapter_) {
    extra["adapter_hash"] = adapter_->hash();
    extra["adapter_role"] = adapter_->role;
  }
  return {"micro_lm", name_, model_->vocabulary().hash(), false, std::move(extra)};
}

ProviderPtr make_concurrency_safe(ProviderPtr p) {
  if (!p->describe().exclusive) return p;
  return std::make_shared<SerializedProvider>(std::move(p));
}

ProviderPtr make_provider(const std::string& spec) {
  if (spec.rfind("table:", 0) == 0) {
    return std::make_shared<TableProvider>(TableProvider::load(spec.substr(6)));
  }
  if (spec.rfind("micro:", 0) == 0) {
    std::string rest = spec.substr(6);
    std::string model_path = rest;
    std::optional<AdapterCheckpoint> adapter;
    if (auto at = rest.find('@'); at != std::string::npos) {
      model_path = rest.substr(0, at);
      adapter = load_checkpoint(rest.substr(at + 1));
    }
    auto model = std::make_shared<const MicroLM>(load_model(model_path));
    std::string name = adapter && !adapter->role.empty() ? adapter->role : "base";
    return std::make_shared<MicroLMProvider>(std::move(model), std::move(adapter), name);
  }
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    return std::make_shared<RemoteProvider>(RemoteOptions{.base_url = spec});
  }
  throw Error(ErrorCode::ConfigError, "unrecognised provider spec '" + spec +
                                          "' (expected table:, micro: or http(s)://)");
}

}  // namespace dscc
