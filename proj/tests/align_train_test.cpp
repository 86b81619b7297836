// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "dscc/align_train.hpp"
#include "dscc/error.hpp"

using namespace dscc;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no dscc::Error thrown";
  return ErrorCode::InvalidArgument;
}

Dataset tiny_facts() {
  Dataset d;
  const char* names[] = {"Alvo", "Bruk", "Cim", "Dax", "Eon", "Fip"};
  const char* good[] = {"Rome", "Oslo", "Lima", "Rome", "Oslo", "Lima"};
  const char* bad[] = {"Oslo", "Lima", "Rome", "Lima", "Rome", "Oslo"};
  for (int i = 0; i < 6; ++i) {
    d.push_back({std::to_string(i), std::string("Where is ") + names[i] + "?", good[i], bad[i]});
  }
  return d;
}

std::shared_ptr<MicroLM> tiny_model(const Dataset& data, std::uint64_t seed = 1) {
  std::vector<std::string> texts;
  for (const auto& e : data) {
    auto tr = build_triplet(e);
    texts.insert(texts.end(), {tr.t_plus, tr.t_minus, answer_continuation(e.correct_answer),
                               answer_continuation(e.hallucinated_answer)});
  }
  std::vector<std::string> specials{MicroLM::kUnkToken, MicroLM::kEosToken};
  auto vocab = std::make_shared<const Vocabulary>(build_vocabulary("tiny", texts, specials));
  MicroLMConfig cfg;
  cfg.d_model = 8;
  cfg.seed = seed;
  return std::make_shared<MicroLM>(MicroLM::init(vocab, cfg));
}

TrainConfig small_config() {
  TrainConfig c;
  c.rank = 4;
  c.alpha = 8.0;
  c.batch_size = 3;
  c.epochs = 2;
  c.max_gen_tokens = 4;
  c.seed = 5;
  return c;
}

double token_probability(const MicroLM& m, const LowRankAdapter* a, const std::string& ctx, const std::string& tok) {
  auto l = m.forward_last_token(a, std::string_view(ctx));
  auto p = softmax(l.values());
  return p[static_cast<std::size_t>(*m.vocabulary().find(tok))];
}

}  // namespace

TEST(BuildTriplet, PrefixesAreByteExact) {
  auto tr = build_triplet("What is 2+2?");
  EXPECT_EQ(tr.t, "What is 2+2?");
  EXPECT_EQ(tr.t_plus, "Please provide a truthful and accurate answer: What is 2+2?");
  EXPECT_EQ(tr.t_minus, "Please provide a fictional or untrue answer: What is 2+2?");
  EXPECT_EQ(build_triplet("X").t, "X");
  auto ws = build_triplet("Why? \t ");
  EXPECT_EQ(ws.t, "Why? \t ");
  EXPECT_EQ(ws.t_plus.substr(ws.t_plus.size() - 7), "Why? \t ");
  EXPECT_EQ(ws.t_minus.substr(ws.t_minus.size() - 7), "Why? \t ");
  EXPECT_EQ(code_of([] { build_triplet(""); }), ErrorCode::EmptyQuestion);
}

TEST(ContrastiveLoss, HandValues) {
  EXPECT_EQ(contrastive_loss(LogitVector({1.0, 0.0}), LogitVector({0.0, 1.0}), LogitVector({2.0, 0.0})), 1.0);
  LogitVector b({0.5, -1.0, 3.0}), h({1.0, 1.0, 1.0});
  EXPECT_EQ(contrastive_loss(b, b, h), -(0.25 + 4.0 + 4.0));
  EXPECT_EQ(contrastive_loss(b, b, b), 0.0);
  EXPECT_EQ(code_of([&] { contrastive_loss(b, LogitVector({1.0}), h); }), ErrorCode::DimensionMismatch);
}

TEST(ContrastiveLoss, AntisymmetricUnderRoleSwap) {
  Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(10);
    std::vector<double> b(n), x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = rng.uniform(-5, 5);
      x[i] = rng.uniform(-5, 5);
      y[i] = rng.uniform(-5, 5);
    }
    EXPECT_EQ(contrastive_loss(LogitVector(b), LogitVector(x), LogitVector(y)),
              -contrastive_loss(LogitVector(b), LogitVector(y), LogitVector(x)));
  }
}

TEST(ContrastiveLoss, GradientMatchesFiniteDifferenceOfLoss) {
  LogitVector b({0.3, -0.2, 1.1}), f({1.0, 0.5, -0.7}), h({0.0, 0.0, 0.0});
  auto g = contrastive_loss_grad(b, f);
  for (std::size_t i = 0; i < 3; ++i) {
    auto plus = f.vec(), minus = f.vec();
    plus[i] += 1e-6;
    minus[i] -= 1e-6;
    const double fd = (contrastive_loss(b, LogitVector(plus), h) - contrastive_loss(b, LogitVector(minus), h)) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-6);
  }
}

TEST(TrainHdp, ZeroEpochsIsIdentityAndFrozen) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  auto cfg = small_config();
  cfg.epochs = 0;
  auto hdp = train_hdp(*model, data, cfg);
  EXPECT_TRUE(hdp.frozen);
  EXPECT_EQ(hdp.adapter, fresh_adapter(*model, cfg, "hdp").adapter);
  auto q = build_triplet(data[0]).t_minus;
  EXPECT_TRUE(bit_equal(model->forward_last_token(&hdp.adapter, std::string_view(q)).values(),
                        model->forward_last_token(nullptr, std::string_view(q)).values()));
}

TEST(TrainHdp, RaisesHallucinatedTokenProbabilityAndFreezes) {
  Dataset one(12, tiny_facts()[0]);
  auto model = tiny_model(tiny_facts());
  auto cfg = small_config();
  cfg.epochs = 10;
  cfg.lr = 0.05;
  auto hdp = train_hdp(*model, one, cfg);
  const auto ctx = build_triplet(one[0]).t_minus;
  EXPECT_GT(token_probability(*model, &hdp.adapter, ctx, " Oslo"), token_probability(*model, nullptr, ctx, " Oslo"));
  std::vector<std::pair<std::string, std::string>> pairs{{ctx, "Oslo"}};
  EXPECT_EQ(code_of([&] { train_sft(*model, hdp, pairs, cfg); }), ErrorCode::FrozenProxy);
  EXPECT_EQ(code_of([&] { train_hdp(*model, Dataset{}, cfg); }), ErrorCode::EmptyTrainSplit);
}

TEST(RefineFap, DegenerateLoopReturnsStartingAdapter) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  auto cfg = small_config();
  auto hdp = train_hdp(*model, data, cfg);
  cfg.epochs = 0;
  auto r = refine_fap(*model, hdp, data, data, 1, cfg);
  EXPECT_EQ(r.final_fap.adapter, fresh_adapter(*model, cfg, "fap").adapter);
  ASSERT_EQ(r.reports.size(), 1u);
  EXPECT_EQ(r.reports[0].selected_em, validation_em(*model, nullptr, data, cfg));
}

TEST(RefineFap, ErrorPaths) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  auto cfg = small_config();
  auto hdp = fresh_adapter(*model, cfg, "hdp");
  EXPECT_EQ(code_of([&] { refine_fap(*model, hdp, data, data, 1, cfg); }), ErrorCode::FrozenProxyMissing);
  hdp.frozen = true;
  EXPECT_EQ(code_of([&] { refine_fap(*model, hdp, data, Dataset{}, 1, cfg); }), ErrorCode::EmptyValSplit);
  EXPECT_EQ(code_of([&] { refine_fap(*model, hdp, Dataset{}, data, 1, cfg); }), ErrorCode::EmptyTrainSplit);
}

TEST(RefineFap, SelectionContractAndHdpImmutability) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  auto cfg = small_config();
  cfg.lr = 0.05;
  cfg.keep_incoming = true;
  auto hdp = train_hdp(*model, data, cfg);
  const auto hdp_hash = hdp.hash();
  int sunk = 0;
  auto r = refine_fap(*model, hdp, data, data, 3, cfg, [&](const AdapterCheckpoint& c, const std::string& id) {
    ++sunk;
    EXPECT_EQ(c.role, "fap");
    EXPECT_EQ(id.rfind("k", 0), 0u);
  });
  EXPECT_EQ(hdp.hash(), hdp_hash);
  EXPECT_EQ(sunk, 3 * 2);
  ASSERT_EQ(r.reports.size(), 3u);
  double prev = r.initial_em;
  for (const auto& rep : r.reports) {
    ASSERT_EQ(rep.epochs.size(), 3u);  // incoming + two epochs
    std::size_t best = 0;
    for (std::size_t i = 0; i < rep.epochs.size(); ++i) {
      if (rep.epochs[i].val_em > rep.epochs[best].val_em) best = i;
    }
    EXPECT_EQ(rep.selected, best);
    EXPECT_EQ(rep.selected_id, rep.epochs[best].checkpoint_id);
    EXPECT_GE(rep.selected_em, prev);
    prev = rep.selected_em;
  }
  EXPECT_EQ(r.final_fap.hash(), r.reports.back().epochs[r.reports.back().selected].hash);
}

TEST(RefineFap, DefaultCandidatesAreTheIterationEpochs) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  auto cfg = small_config();
  auto hdp = train_hdp(*model, data, cfg);
  auto r = refine_fap(*model, hdp, data, data, 2, cfg);
  for (const auto& rep : r.reports) {
    ASSERT_EQ(rep.epochs.size(), cfg.epochs);
    EXPECT_EQ(rep.epochs.front().epoch, 1u);
    EXPECT_EQ(rep.selected, select_checkpoint(rep.epochs));
  }
}

TEST(SelectCheckpoint, TiesGoToEarliest) {
  std::vector<EpochRecord> e{{0, {}, 0.5, "a", ""}, {1, {}, 0.7, "b", ""}, {2, {}, 0.7, "c", ""}};
  EXPECT_EQ(select_checkpoint(e), 1u);
}

TEST(RefineFap, SmallStepDoesNotIncreaseBatchLoss) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  auto cfg = small_config();
  auto hdp = train_hdp(*model, data, cfg);
  for (auto space : {LogitSpace::raw, LogitSpace::softmax}) {
    auto fap = fresh_adapter(*model, cfg, "fap");
    // A non-trivial starting point so the gradient reaches both A and B.
    fap.adapter.q_b.fill_uniform(*std::make_unique<Rng>(4), -0.3, 0.3);
    auto one = cfg;
    one.epochs = 1;
    one.batch_size = data.size();
    one.lr = 1e-4;
    one.logit_space = space;
    one.keep_incoming = false;
    const double before = contrastive_objective(*model, fap.adapter, hdp.adapter, data, space);
    auto r = refine_fap(*model, hdp, data, data, 1, one, {}, fap);
    const double after = contrastive_objective(*model, r.final_fap.adapter, hdp.adapter, data, space);
    EXPECT_LE(after, before) << to_string(space);
    EXPECT_LT(after, before) << to_string(space);
  }
}

TEST(RefineFap, DeterministicForFixedSeed) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  auto cfg = small_config();
  auto hdp = train_hdp(*model, data, cfg);
  auto a = refine_fap(*model, hdp, data, data, 2, cfg);
  auto b = refine_fap(*model, hdp, data, data, 2, cfg);
  EXPECT_EQ(a.final_fap.hash(), b.final_fap.hash());
}

TEST(PretrainBase, LowersCrossEntropy) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& e : data) pairs.emplace_back(e.question, e.correct_answer);
  TrainConfig cfg;
  cfg.lr = 0.5;
  cfg.epochs = 30;
  cfg.batch_size = 2;
  auto stats = pretrain_base(*model, pairs, cfg);
  ASSERT_EQ(stats.epoch_loss.size(), 30u);
  EXPECT_LT(stats.epoch_loss.back(), stats.epoch_loss.front());
}

TEST(Ablation, Parsing) {
  EXPECT_TRUE(parse_ablation("").none());
  EXPECT_TRUE(parse_ablation("full").none());
  EXPECT_TRUE(parse_ablation("no-iterative").no_iterative);
  EXPECT_TRUE(parse_ablation("no_negative").no_negative);
  EXPECT_EQ(code_of([] { parse_ablation("no_guidance,no_negative"); }), ErrorCode::ConflictingFlags);
  EXPECT_EQ(code_of([] { parse_ablation("bogus"); }), ErrorCode::ConfigError);
}

TEST(Ablation, WiringSubstitutions) {
  auto data = tiny_facts();
  auto model = tiny_model(data);
  auto cfg = small_config();
  cfg.lr = 0.05;
  auto hdp_ckpt = train_hdp(*model, data, cfg);
  auto fap_ckpt = fresh_adapter(*model, cfg, "fap");
  fap_ckpt.adapter.q_b.fill_uniform(*std::make_unique<Rng>(8), -0.2, 0.2);
  ProviderPtr base = std::make_shared<MicroLMProvider>(model);
  ProviderPtr fap = std::make_shared<MicroLMProvider>(model, fap_ckpt);
  ProviderPtr hdp = std::make_shared<MicroLMProvider>(model, hdp_ckpt);
  auto map = build_shared_map(model->vocabulary(), model->vocabulary());
  DecodingConfig dc;
  dc.max_new_tokens = 3;
  dc.record_trace = true;
  const std::string prompt = data[1].question;

  auto ni = wire_ablation(parse_ablation("no_iterative"), base, base, fap, hdp);
  for (const auto& s : run_wiring(ni, map, prompt, dc).steps) {
    for (double v : s.g.values()) EXPECT_EQ(v, 0.0);
  }
  auto nn = wire_ablation(parse_ablation("no_negative"), base, base, fap, hdp);
  for (const auto& s : run_wiring(nn, map, prompt, dc).steps) {
    auto expect = steering_vector(fap->logits(s.context), base->logits(s.context));
    EXPECT_TRUE(bit_equal(s.g.values(), expect.values()));
  }
  auto ng = wire_ablation(parse_ablation("no_guidance"), base, base, fap, hdp);
  EXPECT_EQ(run_wiring(ng, map, prompt, dc).tokens, decode_plain(*fap, prompt, dc).tokens);
  auto full = wire_ablation(parse_ablation(""), base, base, fap, hdp);
  EXPECT_EQ(full.hdp, hdp);
  EXPECT_EQ(full.fap, fap);
  EXPECT_FALSE(full.fap_generates);
}
