// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dscc {

using TokenId = std::int32_t;

/// Ordered set of distinct, non-empty token surface byte-strings. Id i maps to tokens()[i].
/// Immutable after construction.
class Vocabulary {
 public:
  Vocabulary(std::string name, std::vector<std::string> tokens);

  const std::string& name() const { return name_; }
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<TokenId> find(std::string_view surface) const;
  /// SHA-256 over the ordered token list; the name is not part of the content.
  const std::string& hash() const { return hash_; }

  bool operator==(const Vocabulary& other) const { return hash_ == other.hash_; }

 private:
  std::string name_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::string hash_;
};

using VocabularyPtr = std::shared_ptr<const Vocabulary>;

// Token file: one token per line. Backslash, newline, carriage return, tab and
// other control bytes are escaped (\\, \n, \r, \t, \xHH); everything else is raw.
std::string escape_token(std::string_view token);
std::string unescape_token(std::string_view line);
Vocabulary load_vocabulary(const std::filesystem::path& path, std::string name = {});
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);

/// Splits text into word-level pieces: an optional single leading space
/// followed by a run of alphanumerics or a run of other non-space bytes.
std::vector<std::string> split_pieces(std::string_view text);

/// Vocabulary made of `specials` (in order, ids 0..) followed by every
/// distinct piece of `texts` in first-seen order.
Vocabulary build_vocabulary(std::string name, std::span<const std::string> texts,
                            std::span<const std::string> specials);

/// Greedy longest-match tokenizer over a vocabulary's surfaces. Bytes that no
/// token covers become `unk`; ids listed in `excluded` never match text.
class Tokenizer {
 public:
  Tokenizer(const Vocabulary& vocab, TokenId unk, std::span<const TokenId> excluded = {});

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> matchable_;
  std::size_t max_len_ = 0;
  TokenId unk_;
};

/// Real-valued score per token id. Every value is finite.
template <typename Tag>
class ScoreVector {
 public:
  ScoreVector() = default;
  explicit ScoreVector(std::vector<double> values);
  static ScoreVector zeros(std::size_t n) { return ScoreVector(std::vector<double>(n, 0.0)); }

  std::size_t vocab_size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& vec() const { return values_; }

  bool operator==(const ScoreVector&) const = default;

 private:
  std::vector<double> values_;
};

struct LogitTag {};
struct SteeringTag {};
using LogitVector = ScoreVector<LogitTag>;
using SteeringVector = ScoreVector<SteeringTag>;

extern template class ScoreVector<LogitTag>;
extern template class ScoreVector<SteeringTag>;

/// Bit-level equality, distinguishing -0.0 from 0.0.
bool bit_equal(std::span<const double> a, std::span<const double> b);

struct SharedMapOptions {
  /// Permit an empty intersection (steering then degenerates to zero).
  bool allow_empty = false;
  /// Treat SentencePiece "▁" and byte-level BPE "Ġ" prefixes as a leading space.
  /// Exact surface matches always win over normalized ones.
  bool normalize_space_markers = false;

  bool operator==(const SharedMapOptions&) const = default;
};

/// Intersection of a proxy and a target vocabulary as (proxy_id, target_id)
/// pairs sorted by target_id.
class SharedVocabMap {
 public:
  using Pair = std::pair<TokenId, TokenId>;

  SharedVocabMap(std::vector<Pair> pairs, std::size_t proxy_size, std::size_t target_size);

  const std::vector<Pair>& pairs() const { return pairs_; }
  std::size_t proxy_size() const { return proxy_size_; }
  std::size_t target_size() const { return target_size_; }
  /// Proxy id feeding target id `t`, or -1 when `t` is not shared.
  TokenId proxy_for_target(TokenId t) const { return target_to_proxy_[t]; }
  bool empty() const { return pairs_.empty(); }

 private:
  std::vector<Pair> pairs_;
  std::size_t proxy_size_;
  std::size_t target_size_;
  std::vector<TokenId> target_to_proxy_;
};

SharedVocabMap build_shared_map(const Vocabulary& proxy, const Vocabulary& target,
                                const SharedMapOptions& options = {});

/// Target-vocabulary vector whose shared entries copy the proxy value and
/// whose non-shared entries are exactly +0.0.
SteeringVector project_steering(const SteeringVector& g, const SharedVocabMap& map);

/// Process-wide cache of shared maps keyed by (proxy hash, target hash, options).
class SharedMapCache {
 public:
  std::shared_ptr<const SharedVocabMap> get(const Vocabulary& proxy, const Vocabulary& target,
                                            const SharedMapOptions& options = {});
  std::size_t size() const;

  static SharedMapCache& global();

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const SharedVocabMap>> entries_;
};

}  // namespace dscc
