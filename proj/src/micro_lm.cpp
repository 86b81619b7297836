// SPDX-License-Identifier: Apache-2.0
#include "dscc/micro_lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dscc/error.hpp"
#include "dscc/hash.hpp"
#include "dscc/rng.hpp"

namespace dscc {

using nlohmann::json;

namespace {

// y = M x            (M: rows x cols, x: cols)
void matvec(const Matrix& m, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// y += M^T x         (M: rows x cols, x: rows)
void matvec_t_add(const Matrix& m, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    const double xr = x[r];
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
  }
}

// G += s * a b^T
void outer_add(Matrix& g, double s, std::span<const double> a, std::span<const double> b) {
  for (std::size_t r = 0; r < g.rows; ++r) {
    auto row = g.row(r);
    const double ar = s * a[r];
    for (std::size_t c = 0; c < g.cols; ++c) row[c] += ar * b[c];
  }
}

void axpy_matrix(Matrix& y, double s, const Matrix& x) {
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += s * x.data[i];
}

json matrix_to_json(const Matrix& m) { return json{{"shape", {m.rows, m.cols}}, {"data", m.data}}; }

Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("shape").at(0).get<std::size_t>(), j.at("shape").at(1).get<std::size_t>());
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) {
    throw Error(ErrorCode::SchemaViolation, "matrix data does not match its shape");
  }
  return m;
}

}  // namespace

void Matrix::fill_uniform(Rng& rng, double lo, double hi) {
  for (auto& v : data) v = rng.uniform(lo, hi);
}

ModelParams ModelParams::zeros_like(const ModelParams& p) {
  ModelParams z;
  z.embed = Matrix(p.embed.rows, p.embed.cols);
  z.proj_q = Matrix(p.proj_q.rows, p.proj_q.cols);
  z.proj_v = Matrix(p.proj_v.rows, p.proj_v.cols);
  z.mix = Matrix(p.mix.rows, p.mix.cols);
  z.mix_bias.assign(p.mix_bias.size(), 0.0);
  z.out = Matrix(p.out.rows, p.out.cols);
  return z;
}

std::size_t ModelParams::parameter_count() const {
  return embed.data.size() + proj_q.data.size() + proj_v.data.size() + mix.data.size() +
         mix_bias.size() + out.data.size();
}

void ModelParams::axpy(double alpha, const ModelParams& x) {
  axpy_matrix(embed, alpha, x.embed);
  axpy_matrix(proj_q, alpha, x.proj_q);
  axpy_matrix(proj_v, alpha, x.proj_v);
  axpy_matrix(mix, alpha, x.mix);
  for (std::size_t i = 0; i < mix_bias.size(); ++i) mix_bias[i] += alpha * x.mix_bias[i];
  axpy_matrix(out, alpha, x.out);
}

LowRankAdapter LowRankAdapter::init(std::size_t d_model, std::size_t rank, double alpha,
                                    std::uint64_t seed) {
  if (rank < 1) throw Error(ErrorCode::InvalidArgument, "adapter rank must be >= 1");
  if (d_model < 1) throw Error(ErrorCode::InvalidArgument, "adapter d_model must be >= 1");
  LowRankAdapter a;
  a.rank = rank;
  a.alpha = alpha;
  a.q_a = Matrix(d_model, rank);
  a.q_b = Matrix(rank, d_model);
  a.v_a = Matrix(d_model, rank);
  a.v_b = Matrix(rank, d_model);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  a.q_a.fill_uniform(rng, -bound, bound);
  a.v_a.fill_uniform(rng, -bound, bound);
  return a;
}

LowRankAdapter LowRankAdapter::zeros_like(const LowRankAdapter& a) {
  LowRankAdapter z;
  z.rank = a.rank;
  z.alpha = a.alpha;
  z.q_a = Matrix(a.q_a.rows, a.q_a.cols);
  z.q_b = Matrix(a.q_b.rows, a.q_b.cols);
  z.v_a = Matrix(a.v_a.rows, a.v_a.cols);
  z.v_b = Matrix(a.v_b.rows, a.v_b.cols);
  return z;
}

std::size_t LowRankAdapter::trainable_parameter_count() const {
  return q_a.data.size() + q_b.data.size() + v_a.data.size() + v_b.data.size();
}

void LowRankAdapter::axpy(double s, const LowRankAdapter& x) {
  axpy_matrix(q_a, s, x.q_a);
  axpy_matrix(q_b, s, x.q_b);
  axpy_matrix(v_a, s, x.v_a);
  axpy_matrix(v_b, s, x.v_b);
}

double LowRankAdapter::squared_norm() const {
  double acc = 0.0;
  for (const Matrix* m : tensors()) {
    for (double v : m->data) acc += v * v;
  }
  return acc;
}

bool LowRankAdapter::all_finite() const {
  for (const Matrix* m : tensors()) {
    for (double v : m->data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::vector<const Matrix*> LowRankAdapter::tensors() const { return {&q_a, &q_b, &v_a, &v_b}; }
std::vector<Matrix*> LowRankAdapter::tensors() { return {&q_a, &q_b, &v_a, &v_b}; }

std::string LowRankAdapter::content_hash() const {
  Sha256 h;
  h.update_field("dscc-adapter");
  h.update_u64(kCheckpointFormatVersion);
  h.update_u64(rank);
  h.update(std::span<const double>(&alpha, 1));
  for (const Matrix* m : tensors()) {
    h.update_u64(m->rows);
    h.update_u64(m->cols);
    h.update(std::span<const double>(m->data));
  }
  return h.hex();
}

// ---- model ---------------------------------------------------------------

namespace {

TokenId find_eos(const Vocabulary& vocab) {
  if (vocab.size() < 2 || vocab.token(MicroLM::kUnkId) != MicroLM::kUnkToken) {
    throw Error(ErrorCode::InvalidArgument, "micro_lm: vocabulary must start with <unk>");
  }
  auto eos = vocab.find(MicroLM::kEosToken);
  if (!eos) throw Error(ErrorCode::InvalidArgument, "micro_lm: vocabulary lacks <eos>");
  return *eos;
}

Tokenizer make_tokenizer(const Vocabulary& vocab, TokenId eos) {
  const TokenId excluded[] = {eos};
  return Tokenizer(vocab, MicroLM::kUnkId, excluded);
}

}  // namespace

MicroLM::MicroLM(VocabularyPtr vocab, ModelParams params)
    : vocab_(std::move(vocab)),
      params_(std::move(params)),
      eos_(find_eos(*vocab_)),
      tokenizer_(make_tokenizer(*vocab_, eos_)) {
  const std::size_t v = vocab_->size();
  const std::size_t d = params_.proj_q.rows;
  const bool ok = d > 0 && params_.embed.rows == v && params_.embed.cols == d &&
                  params_.proj_q.cols == d && params_.proj_v.rows == d &&
                  params_.proj_v.cols == d && params_.mix.rows == d && params_.mix.cols == d &&
                  params_.mix_bias.size() == d && params_.out.rows == d && params_.out.cols == v;
  if (!ok) throw Error(ErrorCode::DimensionMismatch, "micro_lm: parameter shapes are inconsistent");
}

MicroLM MicroLM::init(VocabularyPtr vocab, const MicroLMConfig& config) {
  const std::size_t v = vocab->size();
  const std::size_t d = config.d_model;
  ModelParams p;
  p.embed = Matrix(v, d);
  p.proj_q = Matrix(d, d);
  p.proj_v = Matrix(d, d);
  p.mix = Matrix(d, d);
  p.mix_bias.assign(d, 0.0);
  p.out = Matrix(d, v);
  Rng rng(config.seed);
  const double a = config.init_range;
  p.embed.fill_uniform(rng, -a, a);
  p.proj_q.fill_uniform(rng, -a, a);
  p.proj_v.fill_uniform(rng, -a, a);
  p.mix.fill_uniform(rng, -a, a);
  for (auto& b : p.mix_bias) b = rng.uniform(-a, a);
  p.out.fill_uniform(rng, -a, a);
  return MicroLM(std::move(vocab), std::move(p));
}

std::vector<TokenId> MicroLM::encode(std::string_view text) const { return tokenizer_.encode(text); }

ForwardState MicroLM::forward(std::span<const TokenId> ids, const LowRankAdapter* adapter) const {
  if (ids.empty()) throw Error(ErrorCode::EmptyContext, "micro_lm: empty context");
  const std::size_t d = d_model();
  const std::size_t vsize = vocab_->size();
  if (adapter && adapter->d_model() != d) {
    throw Error(ErrorCode::DimensionMismatch, "micro_lm: adapter width " +
                                                  std::to_string(adapter->d_model()) +
                                                  " != model width " + std::to_string(d));
  }
  ForwardState s;
  s.ids.assign(ids.begin(), ids.end());
  s.mean_embed.assign(d, 0.0);
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vsize) {
      throw Error(ErrorCode::InvalidArgument, "micro_lm: token id out of range");
    }
    auto e = params_.embed.row(id);
    for (std::size_t j = 0; j < d; ++j) s.mean_embed[j] += e[j];
  }
  const double inv_n = 1.0 / static_cast<double>(ids.size());
  for (auto& v : s.mean_embed) v *= inv_n;
  auto last = params_.embed.row(ids.back());
  s.last_embed.assign(last.begin(), last.end());

  std::vector<double> query(d), pooled(d);
  matvec(params_.proj_q, s.last_embed, query);
  matvec(params_.proj_v, s.mean_embed, pooled);
  if (adapter) {
    const double scale = adapter->scale();
    const std::size_t r = adapter->rank;
    s.q_low.assign(r, 0.0);
    s.v_low.assign(r, 0.0);
    matvec(adapter->q_b, s.last_embed, s.q_low);
    matvec(adapter->v_b, s.mean_embed, s.v_low);
    std::vector<double> dq(d), dv(d);
    matvec(adapter->q_a, s.q_low, dq);
    matvec(adapter->v_a, s.v_low, dv);
    for (std::size_t j = 0; j < d; ++j) {
      query[j] += scale * dq[j];
      pooled[j] += scale * dv[j];
    }
  }
  s.mixed_in.resize(d);
  for (std::size_t j = 0; j < d; ++j) s.mixed_in[j] = query[j] + pooled[j];
  s.hidden.resize(d);
  matvec(params_.mix, s.mixed_in, s.hidden);
  for (std::size_t j = 0; j < d; ++j) s.hidden[j] = std::tanh(s.hidden[j] + params_.mix_bias[j]);
  s.logits.assign(vsize, 0.0);
  matvec_t_add(params_.out, s.hidden, s.logits);
  return s;
}

LogitVector MicroLM::forward_last_token(const LowRankAdapter* adapter,
                                        std::string_view context) const {
  if (context.empty()) throw Error(ErrorCode::EmptyContext, "micro_lm: empty context");
  auto ids = encode(context);
  return forward_last_token(adapter, ids);
}

LogitVector MicroLM::forward_last_token(const LowRankAdapter* adapter,
                                        std::span<const TokenId> ids) const {
  return LogitVector(forward(ids, adapter).logits);
}

void MicroLM::backward(const ForwardState& s, std::span<const double> dlogits,
                       const LowRankAdapter* adapter, ModelParams* base_grad,
                       LowRankAdapter* adapter_grad) const {
  const std::size_t d = d_model();
  if (dlogits.size() != vocab_->size()) {
    throw Error(ErrorCode::DimensionMismatch, "micro_lm: dlogits size mismatch");
  }
  if (adapter_grad && !adapter) {
    throw Error(ErrorCode::InvalidArgument, "micro_lm: adapter gradient requested without adapter");
  }
  // logits = Out^T h
  std::vector<double> dhidden(d, 0.0);
  matvec(params_.out, dlogits, dhidden);
  if (base_grad) outer_add(base_grad->out, 1.0, s.hidden, dlogits);

  std::vector<double> dz(d);
  for (std::size_t j = 0; j < d; ++j) dz[j] = dhidden[j] * (1.0 - s.hidden[j] * s.hidden[j]);
  if (base_grad) {
    outer_add(base_grad->mix, 1.0, dz, s.mixed_in);
    for (std::size_t j = 0; j < d; ++j) base_grad->mix_bias[j] += dz[j];
  }
  // u = q + c, so dq = dc = du
  std::vector<double> du(d, 0.0);
  matvec_t_add(params_.mix, dz, du);

  std::vector<double> d_last(d, 0.0), d_mean(d, 0.0);
  matvec_t_add(params_.proj_q, du, d_last);
  matvec_t_add(params_.proj_v, du, d_mean);
  if (base_grad) {
    outer_add(base_grad->proj_q, 1.0, du, s.last_embed);
    outer_add(base_grad->proj_v, 1.0, du, s.mean_embed);
  }
  if (adapter) {
    const double scale = adapter->scale();
    const std::size_t r = adapter->rank;
    // query += scale * A_q (B_q e_last)
    std::vector<double> dq_low(r, 0.0), dv_low(r, 0.0);
    matvec_t_add(adapter->q_a, du, dq_low);
    matvec_t_add(adapter->v_a, du, dv_low);
    for (std::size_t a = 0; a < r; ++a) {
      dq_low[a] *= scale;
      dv_low[a] *= scale;
    }
    if (adapter_grad) {
      outer_add(adapter_grad->q_a, scale, du, s.q_low);
      outer_add(adapter_grad->v_a, scale, du, s.v_low);
      outer_add(adapter_grad->q_b, 1.0, dq_low, s.last_embed);
      outer_add(adapter_grad->v_b, 1.0, dv_low, s.mean_embed);
    }
    if (base_grad) {
      matvec_t_add(adapter->q_b, dq_low, d_last);
      matvec_t_add(adapter->v_b, dv_low, d_mean);
    }
  }
  if (base_grad) {
    auto last = base_grad->embed.row(s.ids.back());
    for (std::size_t j = 0; j < d; ++j) last[j] += d_last[j];
    const double inv_n = 1.0 / static_cast<double>(s.ids.size());
    for (TokenId id : s.ids) {
      auto row = base_grad->embed.row(id);
      for (std::size_t j = 0; j < d; ++j) row[j] += inv_n * d_mean[j];
    }
  }
}

std::string MicroLM::generate_greedy(const LowRankAdapter* adapter, std::string_view prompt,
                                     std::size_t max_new_tokens) const {
  std::vector<TokenId> ids = encode(prompt);
  if (ids.empty()) throw Error(ErrorCode::EmptyContext, "micro_lm: empty prompt");
  std::string out;
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    auto state = forward(ids, adapter);
    const auto& l = state.logits;
    auto best = static_cast<TokenId>(std::max_element(l.begin(), l.end()) - l.begin());
    if (best == eos_) break;
    out += vocab_->token(best);
    ids.push_back(best);
  }
  return out;
}

std::string MicroLM::content_hash() const {
  Sha256 h;
  h.update_field("dscc-microlm");
  h.update_u64(kModelFormatVersion);
  h.update_field(vocab_->hash());
  for (const Matrix* m : {&params_.embed, &params_.proj_q, &params_.proj_v, &params_.mix}) {
    h.update(std::span<const double>(m->data));
  }
  h.update(std::span<const double>(params_.mix_bias));
  h.update(std::span<const double>(params_.out.data));
  return h.hex();
}

// ---- adapter gradients -----------------------------------------------------

double evaluate_adapter_loss(const MicroLM& model, const LowRankAdapter& adapter,
                             const AdapterLoss& loss) {
  double total = 0.0;
  std::vector<double> scratch(model.vocabulary().size());
  for (const auto& term : loss.terms) {
    auto state = model.forward(term.context, &adapter);
    total += term.fn(state.logits, scratch);
  }
  if (loss.param_term) {
    auto scratch_grad = LowRankAdapter::zeros_like(adapter);
    total += loss.param_term(adapter, scratch_grad);
  }
  return total;
}

AdapterGradient grad_adapter(const MicroLM& model, const LowRankAdapter& adapter,
                             const AdapterLoss& loss) {
  AdapterGradient out{0.0, LowRankAdapter::zeros_like(adapter)};
  std::vector<double> dlogits(model.vocabulary().size());
  for (const auto& term : loss.terms) {
    auto state = model.forward(term.context, &adapter);
    std::fill(dlogits.begin(), dlogits.end(), 0.0);
    out.loss += term.fn(state.logits, dlogits);
    model.backward(state, dlogits, &adapter, nullptr, &out.grad);
  }
  if (loss.param_term) out.loss += loss.param_term(adapter, out.grad);
  if (!out.grad.all_finite() || !std::isfinite(out.loss)) {
    throw Error(ErrorCode::NonFiniteGradient, "micro_lm: non-finite adapter gradient or loss");
  }
  return out;
}

// ---- persistence -------------------------------------------------------------

json checkpoint_to_json(const AdapterCheckpoint& c) {
  const auto& a = c.adapter;
  json j;
  j["format"] = "dscc-adapter";
  j["version"] = kCheckpointFormatVersion;
  j["rank"] = a.rank;
  j["alpha"] = a.alpha;
  j["scale"] = a.scale();
  j["d_model"] = a.d_model();
  j["shapes"] = {{"q_a", {a.q_a.rows, a.q_a.cols}},
                 {"q_b", {a.q_b.rows, a.q_b.cols}},
                 {"v_a", {a.v_a.rows, a.v_a.cols}},
                 {"v_b", {a.v_b.rows, a.v_b.cols}}};
  j["tensors"] = {{"q_a", a.q_a.data}, {"q_b", a.q_b.data}, {"v_a", a.v_a.data}, {"v_b", a.v_b.data}};
  json meta = c.meta;
  meta["role"] = c.role;
  meta["iteration"] = c.iteration;
  meta["val_em"] = c.val_em ? json(*c.val_em) : json(nullptr);
  meta["frozen"] = c.frozen;
  j["meta"] = std::move(meta);
  j["hash"] = c.hash();
  return j;
}

AdapterCheckpoint checkpoint_from_json(const json& j, std::optional<std::size_t> expected_rank) {
  if (j.value("format", "") != "dscc-adapter") {
    throw Error(ErrorCode::VersionMismatch, "checkpoint: not a dscc-adapter container");
  }
  const int version = j.value("version", -1);
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint: format version " +
                                                std::to_string(version) + ", this build reads " +
                                                std::to_string(kCheckpointFormatVersion));
  }
  const auto rank = j.at("rank").get<std::size_t>();
  if (expected_rank && rank != *expected_rank) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint: adapter rank " + std::to_string(rank) +
                                                " does not match configured rank " +
                                                std::to_string(*expected_rank));
  }
  AdapterCheckpoint c;
  auto& a = c.adapter;
  a.rank = rank;
  a.alpha = j.at("alpha").get<double>();
  const auto& shapes = j.at("shapes");
  const auto& tensors = j.at("tensors");
  auto read = [&](const char* name) {
    Matrix m(shapes.at(name).at(0).get<std::size_t>(), shapes.at(name).at(1).get<std::size_t>());
    m.data = tensors.at(name).get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols) {
      throw Error(ErrorCode::HashMismatch, std::string("checkpoint: tensor ") + name +
                                               " does not match its shape");
    }
    return m;
  };
  a.q_a = read("q_a");
  a.q_b = read("q_b");
  a.v_a = read("v_a");
  a.v_b = read("v_b");
  if (a.q_a.cols != rank || a.q_b.rows != rank || a.v_a.cols != rank || a.v_b.rows != rank) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint: tensor shapes disagree with rank");
  }
  const auto stored = j.at("hash").get<std::string>();
  if (stored != a.content_hash()) {
    throw Error(ErrorCode::HashMismatch, "checkpoint: content hash " + a.content_hash() +
                                             " does not match stored " + stored);
  }
  c.meta = j.value("meta", json::object());
  c.role = c.meta.value("role", "");
  c.iteration = c.meta.value("iteration", 0);
  if (c.meta.contains("val_em") && !c.meta["val_em"].is_null()) {
    c.val_em = c.meta["val_em"].get<double>();
  }
  c.frozen = c.meta.value("frozen", false);
  for (const char* k : {"role", "iteration", "val_em", "frozen"}) c.meta.erase(k);
  return c;
}

void save_checkpoint(const AdapterCheckpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "checkpoint: cannot write " + path.string());
  out << checkpoint_to_json(checkpoint).dump(1) << '\n';
}

AdapterCheckpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::size_t> expected_rank) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "checkpoint: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    // An unparsable container cannot pass the integrity check either.
    throw Error(ErrorCode::HashMismatch, "checkpoint: " + path.string() + " is corrupt: " + e.what());
  }
  try {
    return checkpoint_from_json(j, expected_rank);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::HashMismatch, "checkpoint: " + path.string() + " is corrupt: " + e.what());
  }
}

void save_model(const MicroLM& model, const std::filesystem::path& path) {
  const auto& p = model.params();
  json j;
  j["format"] = "dscc-microlm";
  j["version"] = kModelFormatVersion;
  j["vocab_name"] = model.vocabulary().name();
  j["tokens"] = model.vocabulary().tokens();
  j["d_model"] = model.d_model();
  j["params"] = {{"embed", matrix_to_json(p.embed)},   {"proj_q", matrix_to_json(p.proj_q)},
                 {"proj_v", matrix_to_json(p.proj_v)}, {"mix", matrix_to_json(p.mix)},
                 {"mix_bias", p.mix_bias},             {"out", matrix_to_json(p.out)}};
  j["hash"] = model.content_hash();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "model: cannot write " + path.string());
  out << j.dump() << '\n';
}

MicroLM load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "model: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::HashMismatch, "model: " + path.string() + " is corrupt: " + e.what());
  }
  if (j.value("format", "") != "dscc-microlm" || j.value("version", -1) != kModelFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "model: unsupported container in " + path.string());
  }
  auto vocab = std::make_shared<const Vocabulary>(j.value("vocab_name", "micro"),
                                                  j.at("tokens").get<std::vector<std::string>>());
  const auto& jp = j.at("params");
  ModelParams p;
  p.embed = matrix_from_json(jp.at("embed"));
  p.proj_q = matrix_from_json(jp.at("proj_q"));
  p.proj_v = matrix_from_json(jp.at("proj_v"));
  p.mix = matrix_from_json(jp.at("mix"));
  p.mix_bias = jp.at("mix_bias").get<std::vector<double>>();
  p.out = matrix_from_json(jp.at("out"));
  MicroLM model(std::move(vocab), std::move(p));
  if (model.content_hash() != j.at("hash").get<std::string>()) {
    throw Error(ErrorCode::HashMismatch, "model: content hash mismatch in " + path.string());
  }
  return model;
}

}  // namespace dscc
