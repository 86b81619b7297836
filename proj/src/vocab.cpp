// SPDX-License-Identifier: Apache-2.0
#include "dscc/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dscc/error.hpp"
#include "dscc/hash.hpp"

namespace dscc {

Vocabulary::Vocabulary(std::string name, std::vector<std::string> tokens)
    : name_(std::move(name)), tokens_(std::move(tokens)) {
  if (tokens_.size() > static_cast<std::size_t>(INT32_MAX)) {
    throw Error(ErrorCode::InvalidArgument, "vocab: too many tokens");
  }
  index_.reserve(tokens_.size());
  Sha256 h;
  h.update_u64(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) {
      throw Error(ErrorCode::InvalidArgument, "vocab: empty token at id " + std::to_string(i));
    }
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw Error(ErrorCode::InvalidArgument,
                  "vocab: duplicate token '" + escape_token(tokens_[i]) + "' at ids " +
                      std::to_string(it->second) + " and " + std::to_string(i));
    }
    h.update_field(tokens_[i]);
  }
  hash_ = h.hex();
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::InvalidArgument, "vocab: token id " + std::to_string(id) +
                                                " out of range for size " +
                                                std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string escape_token(std::string_view token) {
  std::string out;
  out.reserve(token.size());
  for (unsigned char c : token) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20 || c == 0x7F) {
          static constexpr char kHex[] = "0123456789abcdef";
          out += "\\x";
          out.push_back(kHex[c >> 4]);
          out.push_back(kHex[c & 0xF]);
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  return out;
}

namespace {

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string unescape_token(std::string_view line) {
  std::string out;
  out.reserve(line.size());
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] != '\\') {
      out.push_back(line[i]);
      continue;
    }
    if (i + 1 >= line.size()) throw Error(ErrorCode::InvalidArgument, "vocab: dangling escape");
    char e = line[++i];
    switch (e) {
      case '\\': out.push_back('\\'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 't': out.push_back('\t'); break;
      case 'x': {
        if (i + 2 >= line.size()) {
          throw Error(ErrorCode::InvalidArgument, "vocab: truncated \\x escape");
        }
        int hi = hex_digit(line[i + 1]);
        int lo = hex_digit(line[i + 2]);
        if (hi < 0 || lo < 0) throw Error(ErrorCode::InvalidArgument, "vocab: bad \\x escape");
        out.push_back(static_cast<char>(hi * 16 + lo));
        i += 2;
        break;
      }
      default:
        throw Error(ErrorCode::InvalidArgument, std::string("vocab: unknown escape \\") + e);
    }
  }
  return out;
}

Vocabulary load_vocabulary(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "vocab: cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(unescape_token(line));
  }
  if (name.empty()) name = path.stem().string();
  return Vocabulary(std::move(name), std::move(tokens));
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "vocab: cannot write " + path.string());
  for (const auto& t : vocab.tokens()) out << escape_token(t) << '\n';
}

std::vector<std::string> split_pieces(std::string_view text) {
  auto is_alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    if (text[i] == ' ' && i + 1 < text.size() && !is_space(text[i + 1])) ++i;
    if (is_space(text[i])) {
      // Leave a final ' ' to lead the following word.
      auto leads_word = [&](std::size_t k) {
        return text[k] == ' ' && k + 1 < text.size() && !is_space(text[k + 1]);
      };
      do {
        ++i;
      } while (i < text.size() && is_space(text[i]) && !leads_word(i));
    } else if (is_alnum(text[i])) {
      while (i < text.size() && is_alnum(text[i])) ++i;
    } else {
      while (i < text.size() && !is_alnum(text[i]) && !is_space(text[i])) ++i;
    }
    pieces.emplace_back(text.substr(start, i - start));
  }
  return pieces;
}

Vocabulary build_vocabulary(std::string name, std::span<const std::string> texts,
                            std::span<const std::string> specials) {
  std::vector<std::string> tokens(specials.begin(), specials.end());
  std::set<std::string> seen(tokens.begin(), tokens.end());
  for (const auto& text : texts) {
    for (auto& piece : split_pieces(text)) {
      if (seen.insert(piece).second) tokens.push_back(std::move(piece));
    }
  }
  return Vocabulary(std::move(name), std::move(tokens));
}

Tokenizer::Tokenizer(const Vocabulary& vocab, TokenId unk, std::span<const TokenId> excluded)
    : surfaces_(vocab.tokens()), unk_(unk) {
  vocab.token(unk);  // range check
  std::set<TokenId> skip(excluded.begin(), excluded.end());
  skip.insert(unk);
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    if (skip.count(static_cast<TokenId>(i))) continue;
    matchable_.emplace(surfaces_[i], static_cast<TokenId>(i));
    max_len_ = std::max(max_len_, surfaces_[i].size());
  }
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::string probe;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t len = std::min(max_len_, text.size() - pos);
    bool matched = false;
    for (; len > 0; --len) {
      probe.assign(text.substr(pos, len));
      auto it = matchable_.find(probe);
      if (it != matchable_.end()) {
        ids.push_back(it->second);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      // Collapse a run of uncovered bytes into a single unknown token.
      if (ids.empty() || ids.back() != unk_) ids.push_back(unk_);
      ++pos;
    }
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= surfaces_.size()) {
      throw Error(ErrorCode::InvalidArgument, "tokenizer: id out of range");
    }
    out += surfaces_[id];
  }
  return out;
}

template <typename Tag>
ScoreVector<Tag>::ScoreVector(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error(ErrorCode::NonFiniteResult, "non-finite score at token id " + std::to_string(i));
    }
  }
}

template class ScoreVector<LogitTag>;
template class ScoreVector<SteeringTag>;

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

SharedVocabMap::SharedVocabMap(std::vector<Pair> pairs, std::size_t proxy_size,
                               std::size_t target_size)
    : pairs_(std::move(pairs)),
      proxy_size_(proxy_size),
      target_size_(target_size),
      target_to_proxy_(target_size, -1) {
  std::vector<char> proxy_used(proxy_size, 0);
  std::sort(pairs_.begin(), pairs_.end(),
            [](const Pair& a, const Pair& b) { return a.second < b.second; });
  for (auto [p, t] : pairs_) {
    if (p < 0 || static_cast<std::size_t>(p) >= proxy_size || t < 0 ||
        static_cast<std::size_t>(t) >= target_size) {
      throw Error(ErrorCode::InvalidArgument, "shared map: id out of range");
    }
    if (target_to_proxy_[t] != -1 || proxy_used[p]) {
      throw Error(ErrorCode::InvalidArgument, "shared map: id appears twice");
    }
    target_to_proxy_[t] = p;
    proxy_used[p] = 1;
  }
}

namespace {

std::string normalize_space_marker(const std::string& token) {
  static constexpr std::string_view kSentencePiece = "\xE2\x96\x81";  // U+2581
  static constexpr std::string_view kByteBpe = "\xC4\xA0";            // U+0120
  std::string_view view(token);
  if (view.starts_with(kSentencePiece)) return " " + std::string(view.substr(kSentencePiece.size()));
  if (view.starts_with(kByteBpe)) return " " + std::string(view.substr(kByteBpe.size()));
  return token;
}

}  // namespace

SharedVocabMap build_shared_map(const Vocabulary& proxy, const Vocabulary& target,
                                const SharedMapOptions& options) {
  std::vector<SharedVocabMap::Pair> pairs;
  std::vector<char> target_done(target.size(), 0);
  std::vector<char> proxy_done(proxy.size(), 0);
  for (std::size_t t = 0; t < target.size(); ++t) {
    if (auto p = proxy.find(target.tokens()[t])) {
      pairs.emplace_back(*p, static_cast<TokenId>(t));
      target_done[t] = 1;
      proxy_done[*p] = 1;
    }
  }
  if (options.normalize_space_markers) {
    std::map<std::string, TokenId> by_norm;  // lowest unmatched proxy id per normalized form
    for (std::size_t p = 0; p < proxy.size(); ++p) {
      if (proxy_done[p]) continue;
      by_norm.emplace(normalize_space_marker(proxy.tokens()[p]), static_cast<TokenId>(p));
    }
    for (std::size_t t = 0; t < target.size(); ++t) {
      if (target_done[t]) continue;
      auto it = by_norm.find(normalize_space_marker(target.tokens()[t]));
      if (it == by_norm.end()) continue;
      pairs.emplace_back(it->second, static_cast<TokenId>(t));
      by_norm.erase(it);
    }
  }
  if (pairs.empty() && !options.allow_empty) {
    throw Error(ErrorCode::EmptyIntersection, "vocabularies '" + proxy.name() + "' and '" +
                                                  target.name() + "' share no tokens");
  }
  return SharedVocabMap(std::move(pairs), proxy.size(), target.size());
}

SteeringVector project_steering(const SteeringVector& g, const SharedVocabMap& map) {
  if (g.vocab_size() != map.proxy_size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "project_steering: steering vector has " + std::to_string(g.vocab_size()) +
                    " entries, map expects proxy size " + std::to_string(map.proxy_size()));
  }
  std::vector<double> out(map.target_size(), 0.0);
  for (auto [p, t] : map.pairs()) out[t] = g[p];
  return SteeringVector(std::move(out));
}

std::shared_ptr<const SharedVocabMap> SharedMapCache::get(const Vocabulary& proxy,
                                                          const Vocabulary& target,
                                                          const SharedMapOptions& options) {
  std::string key = proxy.hash() + "|" + target.hash() + "|" +
                    std::to_string(options.allow_empty) +
                    std::to_string(options.normalize_space_markers);
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  auto map = std::make_shared<const SharedVocabMap>(build_shared_map(proxy, target, options));
  entries_.emplace(std::move(key), map);
  return map;
}

std::size_t SharedMapCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

SharedMapCache& SharedMapCache::global() {
  static SharedMapCache cache;
  return cache;
}

}  // namespace dscc
