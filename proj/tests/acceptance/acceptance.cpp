// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 1 when a hard criterion
// fails; soft criteria are reported but do not change the status.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dscc/align_train.hpp"
#include "dscc/dataaug.hpp"
#include "dscc/evalkit.hpp"
#include "dscc/micro_lm.hpp"
#include "dscc/providers.hpp"
#include "dscc/steer.hpp"
#include "dscc/toy.hpp"
#include "support/latex_rows.hpp"

using namespace dscc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int number;
  std::string name;
  double budget_s;  // 0: no time limit
  bool soft;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

VocabularyPtr numbered_vocab(const std::string& name, std::size_t n, std::size_t first_word = 0) {
  std::vector<std::string> tokens{MicroLM::kUnkToken, MicroLM::kEosToken};
  for (std::size_t i = 0; tokens.size() < n; ++i) tokens.push_back(" w" + std::to_string(first_word + i));
  return std::make_shared<const Vocabulary>(name, std::move(tokens));
}

VocabularyPtr plain_vocab(const std::string& name, std::size_t n) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < n; ++i) tokens.push_back(name + std::to_string(i));
  return std::make_shared<const Vocabulary>(name, std::move(tokens));
}

std::vector<double> uniform_vec(std::mt19937_64& e, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(e);
  return v;
}

// Random adapter with non-zero B so it changes the forward pass.
LowRankAdapter random_adapter(std::size_t d, std::uint64_t seed, double range = 0.3) {
  auto a = LowRankAdapter::init(d, 4, 8.0, seed);
  std::mt19937_64 e(seed ^ 0x9e3779b97f4a7c15ULL);
  for (Matrix* m : a.tensors()) m->data = uniform_vec(e, m->data.size(), -range, range);
  return a;
}

// Random injective proxy<->target pairing, sorted by target id.
SharedVocabMap random_map(std::mt19937_64& e, std::size_t np, std::size_t nt) {
  std::vector<TokenId> ps(np), ts(nt);
  std::iota(ps.begin(), ps.end(), 0);
  std::iota(ts.begin(), ts.end(), 0);
  std::shuffle(ps.begin(), ps.end(), e);
  std::shuffle(ts.begin(), ts.end(), e);
  const std::size_t m = std::uniform_int_distribution<std::size_t>(0, std::min(np, nt))(e);
  std::vector<SharedVocabMap::Pair> pairs;
  for (std::size_t i = 0; i < m; ++i) pairs.emplace_back(ps[i], ts[i]);
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  return SharedVocabMap(std::move(pairs), np, nt);
}

// Brute-force composition: scan the pair list for every target id.
std::vector<double> oracle_adjusted(const std::vector<double>& lt, const std::vector<double>& lf,
                                    const std::vector<double>& lh, const SharedVocabMap& map, double lambda) {
  std::vector<double> out(lt.size());
  for (std::size_t t = 0; t < lt.size(); ++t) {
    double g_hat = 0.0;
    for (const auto& [p, tt] : map.pairs()) {
      if (static_cast<std::size_t>(tt) == t) g_hat = lf[p] - lh[p];
    }
    out[t] = lt[t] + lambda * g_hat;
  }
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string random_prompt(std::mt19937_64& e, std::size_t n_words) {
  std::uniform_int_distribution<std::size_t> len(1, 6), word(0, n_words - 1);
  std::string s;
  for (std::size_t i = 0, n = len(e); i < n; ++i) s += " w" + std::to_string(word(e));
  return s;
}

// ---------------------------------------------------------------------------------------------

Outcome zero_steering() {
  auto tv = numbered_vocab("target", 64);
  auto pv = numbered_vocab("proxy", 64, 20);  // shares " w20".." w61" and the specials
  auto target = std::make_shared<MicroLM>(MicroLM::init(tv, {.d_model = 16, .init_range = 0.5, .seed = 11}));
  auto proxy = std::make_shared<MicroLM>(MicroLM::init(pv, {.d_model = 8, .init_range = 0.5, .seed = 12}));
  AdapterCheckpoint ck{random_adapter(8, 13), "fap", 1, std::nullopt, false, {}};
  MicroLMProvider t(target);
  MicroLMProvider same(proxy, ck);
  MicroLMProvider twin(proxy, ck);
  const auto map = build_shared_map(*pv, *tv);

  DecodingConfig cfg;
  cfg.max_new_tokens = 16;
  cfg.lambda = 1.7;
  std::mt19937_64 e(1);
  std::size_t tokens = 0;
  for (int i = 0; i < 100; ++i) {
    const auto prompt = random_prompt(e, 62);
    const auto plain = decode_plain(t, prompt, cfg);
    for (const LogitProvider* hdp : {static_cast<const LogitProvider*>(&same), static_cast<const LogitProvider*>(&twin)}) {
      const auto steered = decode(t, same, *hdp, map, prompt, cfg);
      if (steered.tokens != plain.tokens || steered.probabilities != plain.probabilities || steered.stop != plain.stop) {
        return {false, "prompt '" + prompt + "' diverged"};
      }
    }
    tokens += plain.tokens.size();
  }
  return {true, "100 prompts, " + std::to_string(tokens) + " tokens, identical tokens and probabilities"};
}

struct Instance {
  std::vector<double> lt, lf, lh;
  SharedVocabMap map;
  double lambda;
};

std::vector<Instance> random_instances() {
  std::mt19937_64 e(2024);
  std::uniform_int_distribution<std::size_t> size(1, 32);
  std::uniform_real_distribution<double> lam(-4.0, 4.0);
  std::vector<Instance> out;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t nt = size(e), np = size(e);
    auto map = random_map(e, np, nt);
    out.push_back({uniform_vec(e, nt, -20, 20), uniform_vec(e, np, -20, 20), uniform_vec(e, np, -20, 20),
                   std::move(map), lam(e)});
  }
  return out;
}

Outcome composition_oracle() {
  double worst = 0.0;
  std::size_t traced = 0;
  for (const auto& in : random_instances()) {
    const auto expect = oracle_adjusted(in.lt, in.lf, in.lh, in.map, in.lambda);
    const auto g_hat = project_steering(steering_vector(LogitVector(in.lf), LogitVector(in.lh)), in.map);
    const auto direct = adjust_logits(LogitVector(in.lt), g_hat, in.lambda);
    worst = std::max(worst, max_abs_diff(direct.values(), expect));

    // Same instance through the decoding loop, read back from the step trace.
    auto tv = plain_vocab("t", in.lt.size());
    auto pv = plain_vocab("p", in.lf.size());
    TableProvider target(tv, 0), fap(pv, 0), hdp(pv, 0);
    target.set_default(LogitVector(in.lt));
    fap.set_default(LogitVector(in.lf));
    hdp.set_default(LogitVector(in.lh));
    DecodingConfig cfg;
    cfg.max_new_tokens = 1;
    cfg.lambda = in.lambda;
    cfg.record_trace = true;
    const auto tr = decode(target, fap, hdp, in.map, "q", cfg);
    if (tr.steps.size() != 1) return {false, "trace has " + std::to_string(tr.steps.size()) + " steps"};
    worst = std::max(worst, max_abs_diff(tr.steps[0].l_adjusted.values(), expect));
    ++traced;
  }
  const bool ok = worst <= 1e-12;
  return {ok, "1000 instances (" + std::to_string(traced) + " also via decode), max |diff| = " + fmt("%.3g", worst)};
}

Outcome projection_properties() {
  std::mt19937_64 e(77);
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  double leak = 0.0, lin = 0.0, copy = 0.0;
  for (const auto& in : random_instances()) {
    const SteeringVector g(uniform_vec(e, in.lf.size(), -20, 20));
    const SteeringVector h(uniform_vec(e, in.lf.size(), -20, 20));
    const auto gh = project_steering(g, in.map);
    std::vector<bool> shared(in.lt.size(), false);
    for (const auto& [p, t] : in.map.pairs()) {
      shared[t] = true;
      copy = std::max(copy, std::abs(gh[t] - g[p]));
    }
    for (std::size_t t = 0; t < shared.size(); ++t) {
      if (!shared[t]) leak += std::abs(gh[t]);
    }
    const double a = coef(e), b = coef(e);
    std::vector<double> mix(g.vocab_size());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * g[i] + b * h[i];
    const auto pm = project_steering(SteeringVector(mix), in.map);
    const auto ph = project_steering(h, in.map);
    for (std::size_t t = 0; t < pm.vocab_size(); ++t) lin = std::max(lin, std::abs(pm[t] - (a * gh[t] + b * ph[t])));
  }
  const bool ok = leak == 0.0 && lin <= 1e-12 && copy == 0.0;
  return {ok, "sum |g_hat| off-map = " + fmt("%g", leak) + ", linearity max |diff| = " + fmt("%.3g", lin) +
                  ", shared copy max |diff| = " + fmt("%g", copy)};
}

// Loss computed from scratch: three forward passes and explicit squared distances.
double reference_loss(const MicroLM& m, const LowRankAdapter& fap, const LowRankAdapter& hdp, const PromptTriplet& tr,
                      LogitSpace space) {
  auto prob = [](std::span<const double> l) {
    const double mx = *std::max_element(l.begin(), l.end());
    std::vector<double> p(l.size());
    double z = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) z += (p[i] = std::exp(l[i] - mx));
    for (auto& x : p) x /= z;
    return p;
  };
  auto b = m.forward_last_token(nullptr, std::string_view(tr.t)).vec();
  auto f = m.forward_last_token(&fap, std::string_view(tr.t_plus)).vec();
  auto h = m.forward_last_token(&hdp, std::string_view(tr.t_minus)).vec();
  if (space == LogitSpace::softmax) {
    b = prob(b);
    f = prob(f);
    h = prob(h);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) s += (b[i] - f[i]) * (b[i] - f[i]) - (b[i] - h[i]) * (b[i] - h[i]);
  return s;
}

Outcome gradient_check() {
  const char* names[] = {"Alvo", "Bruk", "Cim", "Dax", "Eon", "Fip", "Gol", "Hux"};
  const char* cities[] = {"Rome", "Oslo", "Lima", "Kiev", "Doha"};
  std::mt19937_64 e(5);
  std::uniform_int_distribution<std::size_t> pick_name(0, 7), pick_city(0, 4);
  std::vector<std::string> texts;
  for (const auto* n : names) {
    const auto tr = build_triplet(std::string("Where is ") + n + "?");
    texts.insert(texts.end(), {tr.t_plus, tr.t_minus});
  }
  for (const auto* c : cities) texts.push_back(answer_continuation(c));
  std::vector<std::string> specials{MicroLM::kUnkToken, MicroLM::kEosToken};
  auto vocab = std::make_shared<const Vocabulary>(build_vocabulary("gc", texts, specials));

  const double h = 1e-5;
  double worst_rel = 0.0, worst_abs = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto m = MicroLM::init(vocab, {.d_model = 8, .init_range = 0.3, .seed = static_cast<std::uint64_t>(100 + i)});
    const auto fap = random_adapter(8, 200 + i);
    const auto hdp = random_adapter(8, 300 + i);
    TrainingExample ex{"x", std::string("Where is ") + names[pick_name(e)] + "?", cities[pick_city(e)],
                       cities[pick_city(e)]};
    const auto space = i % 2 == 0 ? LogitSpace::raw : LogitSpace::softmax;
    const auto analytic = contrastive_gradient(m, fap, hdp, Dataset{ex}, space);
    const auto tr = build_triplet(ex);

    auto probe = fap;
    auto tp = probe.tensors();
    auto ta = analytic.grad.tensors();
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t t = 0; t < tp.size(); ++t) {
      for (std::size_t j = 0; j < tp[t]->data.size(); ++j) {
        const double orig = tp[t]->data[j];
        tp[t]->data[j] = orig + h;
        const double up = reference_loss(m, probe, hdp, tr, space);
        tp[t]->data[j] = orig - h;
        const double down = reference_loss(m, probe, hdp, tr, space);
        tp[t]->data[j] = orig;
        const double fd = (up - down) / (2 * h);
        const double d = ta[t]->data[j] - fd;
        diff2 += d * d;
        ref2 += fd * fd;
        worst_abs = std::max(worst_abs, std::abs(d));
      }
    }
    const double rel = std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12);
    worst_rel = std::max(worst_rel, rel);
  }
  return {worst_rel <= 1e-4, "50 triplets (raw and softmax), max relative error " + fmt("%.3g", worst_rel) +
                                 ", max elementwise |diff| " + fmt("%.3g", worst_abs)};
}

Outcome lora_identity() {
  auto vocab = numbered_vocab("v", 64);
  const auto m = MicroLM::init(vocab, {.d_model = 16, .init_range = 0.5, .seed = 21});
  const auto zero_b = LowRankAdapter::init(16, 8, 16.0, 22);
  for (const Matrix* b : {&zero_b.q_b, &zero_b.v_b}) {
    if (std::any_of(b->data.begin(), b->data.end(), [](double x) { return x != 0.0; })) {
      return {false, "init produced non-zero B"};
    }
  }
  std::mt19937_64 e(23);
  for (int i = 0; i < 100; ++i) {
    const auto ctx = random_prompt(e, 62);
    if (!bit_equal(m.forward_last_token(&zero_b, std::string_view(ctx)).values(),
                   m.forward_last_token(nullptr, std::string_view(ctx)).values())) {
      return {false, "context '" + ctx + "' differs"};
    }
  }
  return {true, "100 contexts bit-identical"};
}

// Target argmax is the hallucinatory token h; the proxies push factual token f by `margin`.
// Arithmetic oracle: f wins iff lambda * margin > gap.
Outcome planted_flip() {
  std::size_t flipped = 0, held = 0;
  auto run = [&](std::size_t nt, std::size_t np, TokenId f_t, TokenId h_t, TokenId f_p,
                 std::vector<std::pair<TokenId, TokenId>> pairs, std::vector<double> lt, double lambda, double margin,
                 std::mt19937_64& e) -> std::optional<std::string> {
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    SharedVocabMap map(pairs, np, nt);
    auto base = uniform_vec(e, np, -1, 1);
    auto lh = base;
    auto lf = base;
    lf[f_p] += margin;
    TableProvider target(plain_vocab("t", nt), 0), fap(plain_vocab("p", np), 0), hdp(plain_vocab("p", np), 0);
    target.set_default(LogitVector(lt));
    fap.set_default(LogitVector(lf));
    hdp.set_default(LogitVector(lh));
    DecodingConfig cfg;
    cfg.max_new_tokens = 1;
    cfg.lambda = lambda;
    const auto tr = decode(target, fap, hdp, map, "Where is it?", cfg);
    const double gap = lt[h_t] - lt[f_t];
    const TokenId expect = lambda * margin > gap ? f_t : h_t;
    if (tr.tokens.size() != 1 || tr.tokens[0] != expect) {
      return "expected token " + std::to_string(expect) + " (gap " + fmt("%g", gap) + ", steer " +
             fmt("%g", lambda * margin) + ")";
    }
    (expect == f_t ? flipped : held) += 1;
    return std::nullopt;
  };

  std::mt19937_64 e(31);
  // Canonical case: target ids {eos, toronto, sanfrancisco, city}; proxy order differs.
  if (auto err = run(4, 4, 2, 1, 1, {{0, 0}, {2, 1}, {1, 2}}, {0.0, 2.0, 1.5, 0.5}, 1.0, 3.0, e)) {
    return {false, "canonical: " + *err};
  }
  std::uniform_real_distribution<double> frac(0.05, 0.95), lam(0.5, 2.0), gapd(0.1, 5.0);
  for (int i = 0; i < 200; ++i) {
    const std::size_t nt = 3 + e() % 14, np = 3 + e() % 14;
    std::vector<TokenId> ts(nt - 1), ps(np - 1);  // id 0 is EOS on both sides
    std::iota(ts.begin(), ts.end(), 1);
    std::iota(ps.begin(), ps.end(), 1);
    std::shuffle(ts.begin(), ts.end(), e);
    std::shuffle(ps.begin(), ps.end(), e);
    const TokenId f_t = ts[0], h_t = ts[1], f_p = ps[0], h_p = ps[1];
    std::vector<std::pair<TokenId, TokenId>> pairs{{f_p, f_t}, {h_p, h_t}};
    auto lt = uniform_vec(e, nt, -10, -5);
    const double gap = gapd(e);
    lt[f_t] = 0.0;
    lt[h_t] = gap;
    const double lambda = lam(e);
    const bool flip = i % 2 == 0;
    const double margin = gap / lambda * (flip ? 1.0 + frac(e) : 1.0 - frac(e));
    if (auto err = run(nt, np, f_t, h_t, f_p, pairs, lt, lambda, margin, e)) {
      return {false, "instance " + std::to_string(i) + ": " + *err};
    }
  }
  return {true, "canonical + 200 random: " + std::to_string(flipped) + " flipped, " + std::to_string(held) +
                    " held, all as predicted"};
}

// The toy experiment is shared by criteria 7 and 8.
const ToyReport& toy_report() {
  static const ToyReport r = run_toy_experiment(ToyConfig{});
  return r;
}

Outcome refinement_trend() {
  const auto& r = toy_report();
  std::ostringstream s;
  s << "EM k0=" << fmt("%.3f", r.iteration0_em);
  bool monotone = true;
  for (std::size_t i = 0; i < r.iterations.size(); ++i) {
    s << " k" << r.iterations[i].iteration << "=" << fmt("%.3f", r.iterations[i].selected_em);
    if (i > 0 && r.iterations[i].selected_em < r.iterations[i - 1].selected_em) monotone = false;
  }
  if (r.iterations.size() != 3) return {false, s.str() + " (expected 3 iterations)"};
  const double gain = r.iterations.back().selected_em - r.iteration0_em;
  s << ", gain " << fmt("%+.3f", gain);
  return {monotone && gain >= 0.10 - 1e-12, s.str()};
}

Outcome ablation_ordering() {
  const auto& r = toy_report();
  const bool ordered = r.full_em >= r.no_negative_em && r.no_negative_em >= r.no_iterative_em;
  std::string detail = "full=" + fmt("%.3f", r.full_em) + " no_negative=" + fmt("%.3f", r.no_negative_em) +
                       " no_iterative=" + fmt("%.3f", r.no_iterative_em);
  if (ordered != r.ordering_ok) return {false, detail + "; report flag disagrees"};
  if (!ordered && r.warnings.empty()) return {false, detail + "; violation not flagged in report"};
  return {ordered, detail + (ordered ? "" : "; flagged in report")};
}

// Inverse-CDF sampler over long-double probabilities, driven by a bare mt19937_64.
std::vector<TokenId> oracle_sample(const std::vector<std::vector<double>>& steps, double temperature,
                                   std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::vector<TokenId> out;
  for (const auto& l : steps) {
    const long double mx = *std::max_element(l.begin(), l.end());
    std::vector<long double> p(l.size());
    long double z = 0;
    for (std::size_t i = 0; i < l.size(); ++i) z += (p[i] = std::exp((l[i] - mx) / temperature));
    const long double u = static_cast<long double>(eng() >> 11) / 9007199254740992.0L;
    long double cum = 0;
    TokenId pick = static_cast<TokenId>(l.size() - 1);
    for (std::size_t i = 0; i < l.size(); ++i) {
      cum += p[i] / z;
      if (u < cum) {
        pick = static_cast<TokenId>(i);
        break;
      }
    }
    out.push_back(pick);
  }
  return out;
}

Outcome softmax_sampling() {
  std::mt19937_64 e(41);
  std::uniform_real_distribution<double> scale_exp(-2.0, 4.0), temp(0.05, 5.0);
  double worst_sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double scale = std::pow(10.0, scale_exp(e));  // up to 1e4
    const auto l = uniform_vec(e, 1 + e() % 64, -scale, scale);
    const auto p = softmax(l, temp(e));
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
  }

  auto tv = numbered_vocab("target", 64);
  auto pv = numbered_vocab("proxy", 48, 10);
  auto target = std::make_shared<MicroLM>(MicroLM::init(tv, {.d_model = 16, .init_range = 0.5, .seed = 42}));
  auto proxy = std::make_shared<MicroLM>(MicroLM::init(pv, {.d_model = 8, .init_range = 0.5, .seed = 43}));
  MicroLMProvider t(target);
  MicroLMProvider fap(proxy, AdapterCheckpoint{random_adapter(8, 44), "fap", 1, std::nullopt, false, {}});
  MicroLMProvider hdp(proxy, AdapterCheckpoint{random_adapter(8, 45), "hdp", 0, std::nullopt, true, {}});
  const auto map = build_shared_map(*pv, *tv);

  std::size_t runs = 0, sampled = 0;
  for (int i = 0; i < 40; ++i) {
    DecodingConfig cfg;
    cfg.policy = SamplingPolicy::temperature;
    cfg.temperature = 0.5 + 0.05 * i;
    cfg.max_new_tokens = 12;
    cfg.seed = 1000 + static_cast<std::uint64_t>(i);
    cfg.record_trace = true;
    const auto prompt = random_prompt(e, 62);
    const auto a = decode(t, fap, hdp, map, prompt, cfg);
    const auto b = decode(t, fap, hdp, map, prompt, cfg);
    if (a.tokens != b.tokens || a.probabilities != b.probabilities) return {false, "same seed, different output"};

    std::vector<std::vector<double>> steps;
    std::vector<TokenId> chosen;
    for (const auto& s : a.steps) {
      const auto p = softmax(s.l_adjusted.values(), cfg.temperature);
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
      steps.push_back(s.l_adjusted.vec());
      chosen.push_back(s.token);
    }
    if (oracle_sample(steps, cfg.temperature, cfg.seed) != chosen) {
      return {false, "seed " + std::to_string(cfg.seed) + ": sampled tokens differ from inverse-CDF oracle"};
    }
    ++runs;
    sampled += chosen.size();
  }

  // Fixed point of the engine every conforming standard library must produce.
  std::mt19937_64 reference;
  reference.discard(9999);
  const bool engine_ok = reference() == 9981545732273789042ULL;
  const bool ok = worst_sum <= 1e-6 && engine_ok;
  return {ok, "max |sum p - 1| = " + fmt("%.3g", worst_sum) + "; " + std::to_string(runs) + " seeded runs (" +
                  std::to_string(sampled) + " draws) repeat and match the oracle sampler; mt19937_64 check " +
                  (engine_ok ? "ok" : "FAILED")};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome augmentation_goldens() {
  const fs::path dir = fs::path(DSCC_TEST_DATA_DIR) / "golden" / "templates";
  const std::pair<const char*, const AugmentationTemplate*> cases[] = {
      {"paraphrase.tex", &paraphrase_template()},
      {"perturbation.tex", &perturbation_template()},
      {"external.tex", &external_template()},
  };
  for (const auto& [file, t] : cases) {
    if (!fs::exists(dir / file)) return {false, std::string("missing golden ") + file};
    const auto r = dscc::testing::render_latex_rows(read_file(dir / file));
    if (r.system_role != t->system_role || r.instruction != t->instruction) {
      return {false, std::string(file) + " does not match the rendered table"};
    }
  }

  MockGenClient mock;
  const std::vector<std::string> para{"Which city serves as the capital of France?", "Can you name the French capital?",
                                      "France's government is headquartered in which metropolis?"};
  if (paraphrase_question("What is the capital city of France?", mock) != para) return {false, "paraphrase example"};
  if (perturb_answer("Steve Jobs was born in San Francisco, California, in 1955.", mock) !=
      "Steve Jobs was born in Los Angeles, California, in 1955.") {
    return {false, "perturbation example"};
  }
  const auto ext = supplement_external({"What do people use to cut paper?"}, mock);
  if (ext.examples.size() != 1 || ext.examples[0].correct_answer != "People typically use scissors to cut paper." ||
      ext.examples[0].hallucinated_answer !=
          "People typically use a knife to cut paper, as it provides a cleaner edge.") {
    return {false, "external example"};
  }

  Dataset d(847);
  for (std::size_t i = 0; i < d.size(); ++i) d[i].id = std::to_string(i);
  const auto s = split_dataset(d, 0.8, 0);
  const std::size_t n_train = select_split(s, Split::train).size(), n_val = select_split(s, Split::val).size();
  const std::size_t expect = (8 * 847 + 9) / 10;  // integer ceiling
  if (n_train != expect || n_val != 847 - expect) {
    return {false, "split " + std::to_string(n_train) + "/" + std::to_string(n_val)};
  }
  return {true, "3 templates byte-match, 3 worked examples reproduced, split 847 -> " + std::to_string(n_train) + "/" +
                    std::to_string(n_val)};
}

Outcome fcr_suite() {
  KeywordSpec spec{"s", {"Paris", "France"}, {"Lyon"}};
  const std::pair<const char*, double> hand[] = {
      {"Paris is the capital of France.", 1.0},
      {"Lyon.", 0.0},
      {"The capital is Paris.", 0.5},
      {"Paris, France, not Lyon.", 0.5},
      {"Nothing relevant.", 0.0},
  };
  for (const auto& [text, v] : hand) {
    if (fcr(text, spec) != v) return {false, std::string("'") + text + "' scored " + fmt("%g", fcr(text, spec))};
  }

  // Adding a ground-truth phrase never lowers the score; adding a hallucination phrase never raises it.
  std::mt19937_64 e(51);
  std::size_t checks = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n_gt = 1 + e() % 5, n_hal = e() % 5;
    KeywordSpec s{std::to_string(i), {}, {}};
    for (std::size_t j = 0; j < n_gt; ++j) s.ground_truth.push_back("gt" + std::to_string(j) + "x" + std::to_string(i));
    for (std::size_t j = 0; j < n_hal; ++j) s.hallucination.push_back("hal" + std::to_string(j) + "x" + std::to_string(i));
    std::vector<std::string> words;
    for (const auto& p : s.ground_truth) {
      if (e() % 2) words.push_back(p);
    }
    for (const auto& p : s.hallucination) {
      if (e() % 2) words.push_back(p);
    }
    auto text_of = [](const std::vector<std::string>& w) {
      std::string t = "Answer:";
      for (const auto& x : w) t += " " + x;
      return t;
    };
    const double base = fcr(text_of(words), s);
    if (base < 0.0 || base > 1.0) return {false, "score out of range"};
    for (const auto& p : s.ground_truth) {
      auto w = words;
      w.push_back(p);
      if (fcr(text_of(w), s) < base) return {false, "ground-truth phrase lowered the score"};
      ++checks;
    }
    for (const auto& p : s.hallucination) {
      auto w = words;
      w.push_back(p);
      if (fcr(text_of(w), s) > base) return {false, "hallucination phrase raised the score"};
      ++checks;
    }
    for (std::size_t g = 0; g < n_gt; ++g) {
      for (std::size_t h = 0; h + 1 <= n_hal; ++h) {
        if (fcr_from_hits(g + 1, h, n_gt) < fcr_from_hits(g, h, n_gt) ||
            fcr_from_hits(g, h + 1, n_gt) > fcr_from_hits(g, h, n_gt)) {
          return {false, "fcr_from_hits not monotone"};
        }
        ++checks;
      }
    }
  }
  return {true, "5 hand examples exact; " + std::to_string(checks) + " monotonicity checks over 1000 specs"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "zero-steering equivalence", 5, false, zero_steering},
      {2, "composition oracle", 10, false, composition_oracle},
      {3, "projection zeros and linearity", 0, false, projection_properties},
      {4, "contrastive gradient check", 30, false, gradient_check},
      {5, "zero-B adapter identity", 0, false, lora_identity},
      {6, "planted-fact steering flip", 0, false, planted_flip},
      {7, "iterative refinement trend", 300, false, refinement_trend},
      {8, "ablation ordering", 0, true, ablation_ordering},
      {9, "softmax and seeded sampling", 0, false, softmax_sampling},
      {10, "augmentation goldens", 0, false, augmentation_goldens},
      {11, "FCR unit suite", 0, false, fcr_suite},
  };
  int hard_failures = 0, soft_failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over time budget of " + fmt("%g", c.budget_s) + " s";
    }
    const char* status = o.pass ? "PASS" : (c.soft ? "FAIL (soft)" : "FAIL");
    std::cout << status << "  [" << c.number << "] " << c.name << " (" << fmt("%.2f", secs) << " s): " << o.detail
              << std::endl;
    if (!o.pass) ++(c.soft ? soft_failures : hard_failures);
  }
  std::cout << "summary: " << criteria.size() - hard_failures - soft_failures << "/" << criteria.size() << " passed";
  if (soft_failures) std::cout << ", " << soft_failures << " soft failure(s) flagged";
  std::cout << std::endl;
  return hard_failures == 0 ? 0 : 1;
}
