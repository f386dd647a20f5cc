#include <gtest/gtest.h>

#include "hublab/model.hpp"
#include "hublab/ops.hpp"
#include "hublab/optim.hpp"
#include "test_util.hpp"

using namespace hublab;
using hublab::testing::grad_check;
using hublab::testing::random_tensor;
using hublab::testing::weighted_sum;

namespace {
constexpr double kTol = 1e-3;
}

TEST(TensorTest, FromRejectsSizeMismatch) {
  EXPECT_THROW(Tensor::from({2, 3}, std::vector<float>(5)), DimensionError);
}

TEST(TensorTest, BackwardRequiresScalar) {
  auto x = random_tensor({2, 2}, 1);
  EXPECT_THROW(scale(x, 2.0f).backward(), UsageError);
}

TEST(TensorTest, GraphIsConsumedOnce) {
  auto x = random_tensor({3}, 1);
  auto y = sum(scale(x, 3.0f));
  y.backward();
  EXPECT_THROW(y.backward(), UsageError);
}

TEST(TensorTest, GradientsAccumulateAcrossUses) {
  auto x = Tensor::from({2}, {1.0f, 2.0f}, true);
  sum(add(x, x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 2.0f);
}

TEST(TensorTest, NoGradGuardSkipsRecording) {
  auto x = random_tensor({2, 2}, 3);
  Tensor y;
  {
    NoGradGuard g;
    y = sum(x);
  }
  EXPECT_TRUE(grad_mode_enabled());
  EXPECT_FALSE(y.requires_grad());
}

TEST(OpsTest, MatmulMatchesTripleLoop) {
  auto a = random_tensor({5, 7}, 11, 1.0, false);
  auto b = random_tensor({7, 3}, 12, 1.0, false);
  auto c = matmul(a, b);
  auto bt = random_tensor({3, 7}, 13, 1.0, false);
  auto d = matmul_nt(a, bt);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0, t = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        s += static_cast<double>(a.data()[i * 7 + k]) * b.data()[k * 3 + j];
        t += static_cast<double>(a.data()[i * 7 + k]) * bt.data()[j * 7 + k];
      }
      EXPECT_NEAR(c.data()[i * 3 + j], s, 1e-5);
      EXPECT_NEAR(d.data()[i * 3 + j], t, 1e-5);
    }
  }
}

TEST(OpsTest, MatmulRejectsInnerMismatch) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimensionError);
}

TEST(OpsTest, SoftmaxRowsSumToOne) {
  auto y = softmax(random_tensor({4, 9}, 5, 10.0, false));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += y.data()[r * 9 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(OpsTest, CrossEntropyOfUniformLogitsIsLogV) {
  auto logits = Tensor::zeros({3, 17});
  std::vector<TokenId> t = {0, 5, 16};
  EXPECT_NEAR(cross_entropy(logits, t).item(), std::log(17.0), 1e-6);
}

TEST(OpsTest, EmbeddingRejectsOutOfRangeIds) {
  std::vector<TokenId> ids = {0, 4};
  EXPECT_THROW(embedding(Tensor::zeros({4, 2}), ids), IndexError);
}

TEST(OpsTest, CheckFiniteNamesTheTensor) {
  auto x = Tensor::from({2}, {1.0f, std::nanf("")});
  try {
    check_finite(x, "probe");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("probe"), std::string::npos);
  }
}

TEST(GradCheckTest, Matmul) {
  EXPECT_LT(grad_check([](const auto& in) { return weighted_sum(matmul(in[0], in[1]), 1); },
                       {random_tensor({3, 4}, 1), random_tensor({4, 5}, 2)}),
            kTol);
}

TEST(GradCheckTest, MatmulNt) {
  EXPECT_LT(grad_check([](const auto& in) { return weighted_sum(matmul_nt(in[0], in[1]), 1); },
                       {random_tensor({3, 4}, 1), random_tensor({5, 4}, 2)}),
            kTol);
}

TEST(GradCheckTest, AddMulScale) {
  EXPECT_LT(grad_check([](const auto& in) { return weighted_sum(scale(mul(add(in[0], in[1]), in[1]), -1.5f), 3); },
                       {random_tensor({2, 5}, 4), random_tensor({2, 5}, 5)}),
            kTol);
}

TEST(GradCheckTest, AddTiledRows) {
  EXPECT_LT(grad_check([](const auto& in) { return weighted_sum(add_tiled_rows(in[0], in[1], 3), 6); },
                       {random_tensor({6, 4}, 7), random_tensor({5, 4}, 8)}),
            kTol);
}

TEST(GradCheckTest, SumAndMean) {
  EXPECT_LT(grad_check([](const auto& in) { return add(sum(mul(in[0], in[0])), mean(in[0])); },
                       {random_tensor({3, 3}, 9)}),
            kTol);
}

TEST(GradCheckTest, Softmax) {
  EXPECT_LT(grad_check([](const auto& in) { return weighted_sum(softmax(in[0]), 10); }, {random_tensor({3, 6}, 11)}),
            kTol);
}

TEST(GradCheckTest, RmsNorm) {
  EXPECT_LT(grad_check([](const auto& in) { return weighted_sum(rms_norm(in[0], in[1], 1e-5f), 12); },
                       {random_tensor({4, 6}, 13), random_tensor({6}, 14)}),
            kTol);
}

TEST(GradCheckTest, Gelu) {
  EXPECT_LT(grad_check([](const auto& in) { return weighted_sum(gelu(in[0]), 15); }, {random_tensor({4, 5}, 16, 2.0)}),
            kTol);
}

TEST(GradCheckTest, Embedding) {
  std::vector<TokenId> ids = {3, 0, 3, 1};
  EXPECT_LT(grad_check([&](const auto& in) { return weighted_sum(embedding(in[0], ids), 17); },
                       {random_tensor({5, 3}, 18)}),
            kTol);
}

TEST(GradCheckTest, CrossEntropy) {
  std::vector<TokenId> t = {2, 0, 4};
  EXPECT_LT(grad_check([&](const auto& in) { return cross_entropy(in[0], t); }, {random_tensor({3, 5}, 19)}), kTol);
}

TEST(GradCheckTest, CausalAttention) {
  EXPECT_LT(grad_check([](const auto& in) { return weighted_sum(causal_attention(in[0], 2, 2), 20); },
                       {random_tensor({2 * 4, 3 * 6}, 21)}),
            kTol);
}

TEST(GradCheckTest, FullTwoLayerModel) {
  const auto cfg = hublab::testing::tiny_config();
  auto p = hublab::testing::spread_parameters(cfg, 3, 5.0f);
  std::vector<TokenId> in = {1, 4, 7, 2, 9, 3, 0, 5};
  std::vector<TokenId> tg = {4, 7, 2, 9, 3, 0, 5, 6};
  std::vector<Tensor> params;
  for (auto& [name, t] : p.named()) params.push_back(t);
  EXPECT_LT(hublab::testing::directional_grad_check([&](const auto&) { return lm_loss(p, cfg, in, tg, 2); }, params,
                                                    4, 0.2),
            kTol);
}

TEST(GradCheckTest, FullModelEmbeddingsElementwise) {
  const auto cfg = hublab::testing::tiny_config();
  auto p = hublab::testing::spread_parameters(cfg, 3, 5.0f);
  std::vector<TokenId> in = {1, 4, 7, 2, 9, 3, 0, 5};
  std::vector<TokenId> tg = {4, 7, 2, 9, 3, 0, 5, 6};
  EXPECT_LT(grad_check([&](const auto&) { return lm_loss(p, cfg, in, tg, 2); }, {p.tok_emb, p.unembed}, 2e-2), kTol);
}

TEST(AdamWTest, ZeroLearningRateLeavesParameters) {
  std::vector<float> p = {1.0f, -2.0f}, g = {0.5f, 0.1f};
  AdamWState s;
  AdamWHyper hp;
  hp.lr = 0.0f;
  hp.weight_decay = 0.1f;
  adamw_step(p, g, s, hp, 1);
  EXPECT_EQ(p[0], 1.0f);
  EXPECT_EQ(p[1], -2.0f);
}

TEST(AdamWTest, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps').
  std::vector<float> p = {0.0f}, g = {0.25f};
  AdamWState s;
  AdamWHyper hp;
  hp.lr = 0.1f;
  adamw_step(p, g, s, hp, 1);
  EXPECT_NEAR(p[0], -0.1, 1e-6);
}
