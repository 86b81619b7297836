// SPDX-License-Identifier: Apache-2.0
#include "dscc/micro_lm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dscc/error.hpp"
#include "dscc/rng.hpp"

namespace dscc {
namespace {

VocabularyPtr tiny_vocab() {
  // 16 tokens: <unk>, <eos>, then 14 word pieces.
  return std::make_shared<const Vocabulary>(
      "tiny", std::vector<std::string>{"<unk>", "<eos>", "Q", " a", " b", " c", " d", " e", " f",
                                       " g", " h", "?", " yes", " no", " x", " y"});
}

MicroLM tiny_model(std::uint64_t seed = 3) {
  return MicroLM::init(tiny_vocab(), {.d_model = 8, .init_range = 0.05, .seed = seed});
}

LowRankAdapter random_adapter(std::size_t d, std::size_t r, std::uint64_t seed) {
  auto a = LowRankAdapter::init(d, r, 16.0, seed);
  Rng rng(seed + 100);
  a.q_b.fill_uniform(rng, -0.3, 0.3);
  a.v_b.fill_uniform(rng, -0.3, 0.3);
  return a;
}

double max_rel_error(const LowRankAdapter& analytic, const LowRankAdapter& numeric) {
  auto ta = analytic.tensors();
  auto tn = numeric.tensors();
  double worst = 0.0;
  for (std::size_t t = 0; t < ta.size(); ++t) {
    for (std::size_t i = 0; i < ta[t]->data.size(); ++i) {
      const double a = ta[t]->data[i];
      const double n = tn[t]->data[i];
      const double denom = std::max({std::abs(a), std::abs(n), 1e-6});
      worst = std::max(worst, std::abs(a - n) / denom);
    }
  }
  return worst;
}

// Central finite differences of `loss_value` over every adapter entry.
template <typename F>
LowRankAdapter finite_difference(const LowRankAdapter& at, F&& loss_value, double h = 1e-5) {
  auto grad = LowRankAdapter::zeros_like(at);
  auto probe = at;
  auto tp = probe.tensors();
  auto tg = grad.tensors();
  for (std::size_t t = 0; t < tp.size(); ++t) {
    for (std::size_t i = 0; i < tp[t]->data.size(); ++i) {
      const double orig = tp[t]->data[i];
      tp[t]->data[i] = orig + h;
      const double up = loss_value(probe);
      tp[t]->data[i] = orig - h;
      const double down = loss_value(probe);
      tp[t]->data[i] = orig;
      tg[t]->data[i] = (up - down) / (2 * h);
    }
  }
  return grad;
}

TEST(MicroLM, ForwardIsDeterministicAndVocabSized) {
  auto m = tiny_model();
  auto a = m.forward_last_token(nullptr, "Q a b?");
  auto b = m.forward_last_token(nullptr, "Q a b?");
  EXPECT_EQ(a.vocab_size(), 16u);
  EXPECT_TRUE(bit_equal(a.values(), b.values()));
}

TEST(MicroLM, EmptyContextIsRejected) {
  auto m = tiny_model();
  try {
    m.forward_last_token(nullptr, "");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyContext);
  }
}

TEST(MicroLM, OutOfVocabularyMapsToUnk) {
  auto m = tiny_model();
  EXPECT_EQ(m.encode("Q zz"), (std::vector<TokenId>{2, 0}));
  EXPECT_NO_THROW(m.forward_last_token(nullptr, "@@@"));
}

TEST(MicroLM, ZeroInitAdapterIsIdentity) {
  auto m = tiny_model();
  auto adapter = LowRankAdapter::init(8, 8, 16.0, 9);
  for (const char* ctx : {"Q", "Q a b c?", " yes no", "zz Q h"}) {
    auto base = m.forward_last_token(nullptr, ctx);
    auto adapted = m.forward_last_token(&adapter, ctx);
    EXPECT_TRUE(bit_equal(base.values(), adapted.values())) << ctx;
  }
}

// Golden vector recorded from the first verified build (d=8, vocab=16, seed 3).
TEST(MicroLM, GoldenForwardRegression) {
  auto m = tiny_model(3);
  auto l = m.forward_last_token(nullptr, "Q a b?");
  const std::vector<double> golden = {
#include "golden/micro_lm_forward.inc"
  };
  ASSERT_EQ(l.vocab_size(), golden.size());
  for (std::size_t i = 0; i < golden.size(); ++i) EXPECT_DOUBLE_EQ(l[i], golden[i]) << i;
}

TEST(MicroLM, ParameterEfficiency) {
  auto a = LowRankAdapter::init(16, 8, 16.0, 1);
  EXPECT_EQ(a.trainable_parameter_count(), 2u * (16 * 8 + 8 * 16));
  EXPECT_DOUBLE_EQ(a.scale(), 2.0);
}

TEST(GradAdapter, ConstantLossGivesZeroGradient) {
  auto m = tiny_model();
  auto adapter = random_adapter(8, 4, 2);
  AdapterLoss loss;
  loss.terms.push_back({m.encode("Q a"), [](std::span<const double>, std::span<double>) { return 3.5; }});
  auto g = grad_adapter(m, adapter, loss);
  EXPECT_EQ(g.loss, 3.5);
  EXPECT_EQ(g.grad.squared_norm(), 0.0);
}

TEST(GradAdapter, SquaredNormOfAGivesTwoA) {
  auto m = tiny_model();
  auto adapter = random_adapter(8, 4, 2);
  AdapterLoss loss;
  loss.param_term = [](const LowRankAdapter& a, LowRankAdapter& g) {
    double v = 0.0;
    for (std::size_t i = 0; i < a.q_a.data.size(); ++i) {
      v += a.q_a.data[i] * a.q_a.data[i] + a.v_a.data[i] * a.v_a.data[i];
      g.q_a.data[i] += 2 * a.q_a.data[i];
      g.v_a.data[i] += 2 * a.v_a.data[i];
    }
    return v;
  };
  auto g = grad_adapter(m, adapter, loss);
  for (std::size_t i = 0; i < adapter.q_a.data.size(); ++i) {
    EXPECT_DOUBLE_EQ(g.grad.q_a.data[i], 2 * adapter.q_a.data[i]);
    EXPECT_DOUBLE_EQ(g.grad.v_a.data[i], 2 * adapter.v_a.data[i]);
  }
  EXPECT_EQ(g.grad.q_b.data, std::vector<double>(g.grad.q_b.data.size(), 0.0));
}

TEST(GradAdapter, CrossEntropyMatchesFiniteDifferences) {
  auto m = tiny_model(7);
  auto adapter = random_adapter(8, 3, 5);
  const TokenId target = 12;
  auto ce = [target](std::span<const double> l, std::span<double> dl) {
    double mx = *std::max_element(l.begin(), l.end());
    double z = 0.0;
    for (double v : l) z += std::exp(v - mx);
    for (std::size_t i = 0; i < l.size(); ++i) dl[i] = std::exp(l[i] - mx) / z;
    dl[target] -= 1.0;
    return -(l[target] - mx - std::log(z));
  };
  AdapterLoss loss;
  loss.terms.push_back({m.encode("Q a b c?"), ce});
  loss.terms.push_back({m.encode(" d e"), ce});
  auto analytic = grad_adapter(m, adapter, loss);
  auto numeric =
      finite_difference(adapter, [&](const LowRankAdapter& a) { return evaluate_adapter_loss(m, a, loss); });
  EXPECT_LT(max_rel_error(analytic.grad, numeric), 1e-4);
}

TEST(GradAdapter, NonFiniteGradientIsReported) {
  auto m = tiny_model();
  auto adapter = random_adapter(8, 2, 1);
  AdapterLoss loss;
  loss.terms.push_back({m.encode("Q"), [](std::span<const double>, std::span<double> dl) {
                          dl[0] = std::nan("");
                          return 0.0;
                        }});
  try {
    grad_adapter(m, adapter, loss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
  }
}

TEST(BaseBackward, MatchesFiniteDifferencesOnEmbeddings) {
  auto m = tiny_model(4);
  auto ids = m.encode("Q a b");
  auto state = m.forward(ids, nullptr);
  std::vector<double> dl(16, 0.0);
  dl[5] = 1.0;  // loss = logits[5]
  auto grad = ModelParams::zeros_like(m.params());
  m.backward(state, dl, nullptr, &grad, nullptr);
  const double h = 1e-6;
  for (TokenId tok : {2, 3, 4}) {
    for (std::size_t j = 0; j < 8; ++j) {
      auto probe = m;
      probe.mutable_params().embed(tok, j) += h;
      double up = probe.forward_last_token(nullptr, ids)[5];
      probe.mutable_params().embed(tok, j) -= 2 * h;
      double down = probe.forward_last_token(nullptr, ids)[5];
      EXPECT_NEAR(grad.embed(tok, j), (up - down) / (2 * h), 1e-7);
    }
  }
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / "dscc_ckpt_test";
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  auto m = tiny_model();
  AdapterCheckpoint c{random_adapter(8, 8, 3), "fap", 2, 0.625, false, {{"note", "x"}}};
  save_checkpoint(c, dir_ / "a.json");
  auto loaded = load_checkpoint(dir_ / "a.json", 8);
  EXPECT_EQ(loaded.hash(), c.hash());
  EXPECT_EQ(loaded.role, "fap");
  EXPECT_EQ(loaded.iteration, 2);
  EXPECT_EQ(loaded.val_em, 0.625);
  EXPECT_EQ(loaded.meta["note"], "x");
  auto before = m.forward_last_token(&c.adapter, "Q a b?");
  auto after = m.forward_last_token(&loaded.adapter, "Q a b?");
  EXPECT_TRUE(bit_equal(before.values(), after.values()));
}

TEST_F(CheckpointTest, CorruptedTensorIsHashMismatch) {
  AdapterCheckpoint c{random_adapter(8, 8, 3), "fap", 1, std::nullopt, false, {}};
  auto j = checkpoint_to_json(c);
  j["tensors"]["q_b"][3] = j["tensors"]["q_b"][3].get<double>() + 1e-3;
  std::ofstream(dir_ / "bad.json") << j.dump();
  try {
    load_checkpoint(dir_ / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HashMismatch);
  }
  std::ofstream(dir_ / "trunc.json") << j.dump().substr(0, 100);
  try {
    load_checkpoint(dir_ / "trunc.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HashMismatch);
  }
}

TEST_F(CheckpointTest, DifferentRankIsVersionMismatch) {
  AdapterCheckpoint c{random_adapter(8, 4, 3), "fap", 1, std::nullopt, false, {}};
  save_checkpoint(c, dir_ / "r4.json");
  try {
    load_checkpoint(dir_ / "r4.json", 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VersionMismatch);
    EXPECT_NE(std::string(e.what()).find("rank 4"), std::string::npos);
  }
}

TEST_F(CheckpointTest, ModelRoundTrip) {
  auto m = tiny_model(8);
  save_model(m, dir_ / "m.json");
  auto loaded = load_model(dir_ / "m.json");
  EXPECT_EQ(loaded.content_hash(), m.content_hash());
  EXPECT_TRUE(bit_equal(loaded.forward_last_token(nullptr, "Q b").values(),
                        m.forward_last_token(nullptr, "Q b").values()));
}

}  // namespace
}  // namespace dscc
