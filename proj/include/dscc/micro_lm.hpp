// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscc/vocab.hpp"

namespace dscc {

class Rng;

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  void fill_uniform(Rng& rng, double lo, double hi);
  bool operator==(const Matrix&) const = default;
};

/// Trainable parameters of the base model. Also used as the gradient container.
struct ModelParams {
  Matrix embed;     // vocab x d
  Matrix proj_q;    // d x d, query projection (adapted)
  Matrix proj_v;    // d x d, value projection (adapted)
  Matrix mix;       // d x d
  std::vector<double> mix_bias;  // d
  Matrix out;       // d x vocab

  static ModelParams zeros_like(const ModelParams& p);
  std::size_t parameter_count() const;
  void axpy(double alpha, const ModelParams& x);  // this += alpha * x
};

/// Low-rank update (alpha / rank) * A * B added to proj_q and proj_v.
/// A is d x r, B is r x d.
struct LowRankAdapter {
  std::size_t rank = 8;
  double alpha = 16.0;
  Matrix q_a, q_b, v_a, v_b;

  /// A drawn uniformly in +-1/sqrt(d), B zero, so the adapted model starts equal to the base.
  static LowRankAdapter init(std::size_t d_model, std::size_t rank, double alpha, std::uint64_t seed);
  static LowRankAdapter zeros_like(const LowRankAdapter& a);

  double scale() const { return alpha / static_cast<double>(rank); }
  std::size_t d_model() const { return q_a.rows; }
  std::size_t trainable_parameter_count() const;
  void axpy(double s, const LowRankAdapter& x);  // this += s * x (tensors only)
  double squared_norm() const;
  bool all_finite() const;
  /// Tensors in a fixed order: q_a, q_b, v_a, v_b.
  std::vector<const Matrix*> tensors() const;
  std::vector<Matrix*> tensors();
  std::string content_hash() const;
  bool operator==(const LowRankAdapter&) const = default;
};

struct MicroLMConfig {
  std::size_t d_model = 16;
  double init_range = 0.05;
  std::uint64_t seed = 0;
};

/// Intermediate values of one forward pass, kept for backprop.
struct ForwardState {
  std::vector<TokenId> ids;
  std::vector<double> last_embed;
  std::vector<double> mean_embed;   // mean of the context embeddings
  std::vector<double> q_low;        // B_q * e_last (adapter only)
  std::vector<double> v_low;        // B_v * mean_embed (adapter only)
  std::vector<double> mixed_in;     // query + pooled
  std::vector<double> hidden;       // tanh(mix * mixed_in + mix_bias)
  std::vector<double> logits;
};

/// Single-block autoregressive model:
///   q = Wq e_last,  c = Wv mean(e_1..e_n),  h = tanh(M (q + c) + b),  logits = Out^T h
/// where Wq, Wv are the (optionally adapted) query/value projections.
class MicroLM {
 public:
  static constexpr TokenId kUnkId = 0;
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kEosToken = "<eos>";

  /// `vocab` must hold "<unk>" at id 0 and "<eos>" somewhere.
  static MicroLM init(VocabularyPtr vocab, const MicroLMConfig& config);
  MicroLM(VocabularyPtr vocab, ModelParams params);

  const Vocabulary& vocabulary() const { return *vocab_; }
  const VocabularyPtr& vocabulary_ptr() const { return vocab_; }
  TokenId eos_token_id() const { return eos_; }
  std::size_t d_model() const { return params_.proj_q.rows; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  std::vector<TokenId> encode(std::string_view text) const;

  ForwardState forward(std::span<const TokenId> ids, const LowRankAdapter* adapter) const;

  /// Next-token logits for the last position of `context`.
  LogitVector forward_last_token(const LowRankAdapter* adapter, std::string_view context) const;
  LogitVector forward_last_token(const LowRankAdapter* adapter, std::span<const TokenId> ids) const;

  /// Backpropagates dL/dlogits. Either gradient sink may be null.
  void backward(const ForwardState& state, std::span<const double> dlogits,
                const LowRankAdapter* adapter, ModelParams* base_grad,
                LowRankAdapter* adapter_grad) const;

  /// Greedy continuation of `prompt` until EOS or `max_new_tokens`.
  std::string generate_greedy(const LowRankAdapter* adapter, std::string_view prompt,
                              std::size_t max_new_tokens) const;

  std::string content_hash() const;

 private:
  VocabularyPtr vocab_;
  ModelParams params_;
  TokenId eos_;
  Tokenizer tokenizer_;
};

/// One logit-space loss term: `fn` receives the logits for `context` and writes dL/dlogits.
struct LogitLossTerm {
  std::vector<TokenId> context;
  std::function<double(std::span<const double> logits, std::span<double> dlogits)> fn;
};

/// Loss over adapter parameters: sum of logit terms plus an optional direct parameter term.
struct AdapterLoss {
  std::vector<LogitLossTerm> terms;
  std::function<double(const LowRankAdapter& adapter, LowRankAdapter& grad)> param_term;
};

struct AdapterGradient {
  double loss = 0.0;
  LowRankAdapter grad;
};

/// Analytic gradient of `loss` w.r.t. the adapter tensors; base parameters are held fixed.
/// Throws NonFiniteGradient if any gradient entry is NaN or infinite.
AdapterGradient grad_adapter(const MicroLM& model, const LowRankAdapter& adapter,
                             const AdapterLoss& loss);

/// Loss value only (no backprop).
double evaluate_adapter_loss(const MicroLM& model, const LowRankAdapter& adapter,
                             const AdapterLoss& loss);

// ---- persistence -------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kModelFormatVersion = 1;

struct AdapterCheckpoint {
  LowRankAdapter adapter;
  std::string role;                 // "fap", "hdp", ...
  int iteration = 0;                // k; 0 for the initial or HDP adapter
  std::optional<double> val_em;     // validation exact match in [0, 1]
  bool frozen = false;
  nlohmann::json meta = nlohmann::json::object();

  std::string hash() const { return adapter.content_hash(); }
};

/// JSON container {format, version, rank, alpha, d_model, shapes, tensors, meta, hash}.
void save_checkpoint(const AdapterCheckpoint& checkpoint, const std::filesystem::path& path);
/// Verifies the stored hash (HashMismatch) and, when given, the expected rank (VersionMismatch).
AdapterCheckpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::size_t> expected_rank = std::nullopt);

nlohmann::json checkpoint_to_json(const AdapterCheckpoint& checkpoint);
AdapterCheckpoint checkpoint_from_json(const nlohmann::json& j,
                                       std::optional<std::size_t> expected_rank = std::nullopt);

void save_model(const MicroLM& model, const std::filesystem::path& path);
MicroLM load_model(const std::filesystem::path& path);

}  // namespace dscc
