// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dflow/grad_check.hpp"
#include "dflow/models.hpp"
#include "dflow/optimizer.hpp"
#include "grad_suite.hpp"
#include "test_util.hpp"

namespace dflow {
namespace {

using testing::random_tensor;

VelocityConfig small_velocity() {
  VelocityConfig c;
  c.data_dim = 6;
  c.width = 8;
  c.blocks = 3;
  c.time_dim = 4;
  c.embed_dim = 4;
  c.num_classes = 3;
  c.lora_rank = 2;
  return c;
}

TEST(Lora, ForwardMatchesMergedWeight) {
  // y = x (W + s B A)^T + b computed densely.
  const auto x = random_tensor({2, 5}, 1);
  const auto w = random_tensor({3, 5}, 2);
  const auto b = random_tensor({3}, 3);
  const auto a = random_tensor({2, 5}, 4);
  const auto bb = random_tensor({3, 2}, 5);
  const float s = 0.75f;
  Tape tape;
  const Var va = tape.constant(a), vb = tape.constant(bb);
  const Tensor y =
      lora_forward<float>(tape.constant(x), tape.constant(w), tape.constant(b), &va, &vb, s).value();
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = b[o];
      for (std::size_t k = 0; k < 5; ++k) {
        double merged = w.at(o, k);
        for (std::size_t r = 0; r < 2; ++r) merged += s * double(bb.at(o, r)) * a.at(r, k);
        acc += merged * x.at(i, k);
      }
      EXPECT_NEAR(y.at(i, o), acc, 1e-5);
    }
  }
}

TEST(Lora, AttachIsZeroInitializedAndRankCapped) {
  ParamStore s;
  std::mt19937_64 rng(1);
  init_linear(s, "fc", 3, 10, rng);
  EXPECT_EQ(attach_lora(s, "fc", 8, rng), 3u);
  for (float v : s.get("fc.lora_B").data()) EXPECT_EQ(v, 0.0f);
  EXPECT_TRUE(is_lora_param("fc.lora_A"));
  EXPECT_FALSE(is_lora_param("fc.W"));
}

TEST(Velocity, ZeroAdapterModelEqualsBase) {
  VelocityModel m(small_velocity(), 7);
  const auto x = random_tensor({4, 6}, 8);
  std::vector<Tensor> base;
  for (float t : {0.0f, 0.1f, 0.7f}) base.push_back(m.evaluate(x, t, m.null_class(), false));
  m.attach_lora(9);
  std::size_t i = 0;
  for (float t : {0.0f, 0.1f, 0.7f}) {
    for (int c = 0; c < 3; ++c) {
      const Tensor adapted = m.evaluate(x, t, c, true);
      for (std::size_t k = 0; k < adapted.size(); ++k) ASSERT_EQ(adapted[k], base[i][k]);
    }
    ++i;
  }
}

TEST(Lora, HandExampleAndZeroScale) {
  Tape tape;
  const Var x = tape.constant(Tensor({1, 2}, {3.0f, 5.0f}));
  const Var w = tape.constant(Tensor::zeros({2, 2}));
  const Var b = tape.constant(Tensor::zeros({2}));
  const Var a = tape.constant(Tensor({1, 2}, {1.0f, 0.0f}));
  const Var bb = tape.constant(Tensor({2, 1}, {0.0f, 1.0f}));
  const Var y = lora_forward<float>(x, w, b, &a, &bb, 1.0f);
  EXPECT_EQ(y.value()[0], 0.0f);
  EXPECT_EQ(y.value()[1], 3.0f);

  const Var w2 = tape.constant(random_tensor({2, 2}, 1));
  const Var b2 = tape.constant(random_tensor({2}, 2));
  const Var ra = tape.constant(random_tensor({1, 2}, 3));
  const Var rb = tape.constant(random_tensor({2, 1}, 4));
  const Var base = lora_forward<float>(x, w2, b2, nullptr, nullptr, 1.0f);
  const Var zero = lora_forward<float>(x, w2, b2, &ra, &rb, 0.0f);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(base.value()[i], zero.value()[i]);
}

TEST(CrossAttention, DegenerateConditionsReturnValueProjection) {
  Tape tape;
  const auto wq = random_tensor({3, 4}, 1), wk = random_tensor({2, 4}, 2), wv = random_tensor({2, 4}, 3);
  const auto e = random_tensor({1, 2}, 4);
  std::vector<float> ewv(4, 0.0f);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < 2; ++i) ewv[j] += e[i] * wv.at(i, j);
  for (std::uint64_t seed : {5u, 6u}) {
    const Var single = cross_attention<float>(tape.constant(random_tensor({1, 3}, seed)), tape.constant(e),
                                              tape.constant(wq), tape.constant(wk), tape.constant(wv), 1);
    std::vector<float> twice(e.data().begin(), e.data().end());
    twice.insert(twice.end(), e.data().begin(), e.data().end());
    const Var doubled = cross_attention<float>(tape.constant(random_tensor({1, 3}, seed)),
                                               tape.constant(Tensor({2, 2}, twice)), tape.constant(wq),
                                               tape.constant(wk), tape.constant(wv), 2);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(single.value()[j], ewv[j], 1e-6);
      EXPECT_NEAR(doubled.value()[j], ewv[j], 1e-6);
    }
  }
}

TEST(CrossAttention, MatchesScalarFormula) {
  const auto z = random_tensor<double>({1, 3}, 1);
  const auto e = random_tensor<double>({2, 2}, 2);
  const auto wq = random_tensor<double>({3, 4}, 3), wk = random_tensor<double>({2, 4}, 4);
  const auto wv = random_tensor<double>({2, 4}, 5);
  BasicTape<double> tape;
  const auto out = cross_attention<double>(tape.constant(z), tape.constant(e), tape.constant(wq),
                                           tape.constant(wk), tape.constant(wv), 2);
  double q[4] = {}, k[2][4] = {}, v[2][4] = {};
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 3; ++i) q[j] += z[i] * wq.at(i, j);
    for (int r = 0; r < 2; ++r) {
      for (int i = 0; i < 2; ++i) {
        k[r][j] += e.at(r, i) * wk.at(i, j);
        v[r][j] += e.at(r, i) * wv.at(i, j);
      }
    }
  }
  double s[2] = {};
  for (int r = 0; r < 2; ++r) {
    for (int j = 0; j < 4; ++j) s[r] += q[j] * k[r][j];
    s[r] /= 2.0;  // sqrt(d) with d = 4
  }
  const double m = std::max(s[0], s[1]);
  const double a0 = std::exp(s[0] - m) / (std::exp(s[0] - m) + std::exp(s[1] - m));
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(out.value()[j], a0 * v[0][j] + (1 - a0) * v[1][j], 1e-12);
}

TEST(Velocity, OutputShapeMatchesInput) {
  for (std::size_t d : {256u, 2u}) {
    VelocityConfig c;
    c.data_dim = d;
    c.width = 16;
    c.blocks = 1;
    const VelocityModel m(c, 1);
    const Tensor x = d == 256 ? random_tensor({16, 16}, 2) : random_tensor({2}, 2);
    EXPECT_EQ(m.evaluate(x, 0.3f, 0, false).size(), d);
  }
}

TEST(Velocity, SingleAdapterEntryChangesOutput) {
  VelocityModel m(small_velocity(), 3);
  m.attach_lora(4);
  const auto x = random_tensor({2, 6}, 5);
  const Tensor before = m.evaluate(x, 0.2f, 1, true);
  Tensor b = m.params().get("block0.dense.lora_B");
  std::vector<float> d(b.data().begin(), b.data().end());
  d[0] = 1e-2f;
  m.params().set("block0.dense.lora_B", Tensor(b.shape(), d));
  const Tensor after = m.evaluate(x, 0.2f, 1, true);
  double diff = 0.0;
  for (std::size_t k = 0; k < before.size(); ++k) diff += std::fabs(after[k] - before[k]);
  EXPECT_GT(diff, 0.0);
}

TEST(Classifier, ZeroFinalLayerGivesUniformLogits) {
  ClassifierConfig c;
  c.arch = ClassifierArch::mlp;
  c.input_dim = 16;
  c.num_classes = 5;
  c.hidden = 8;
  Classifier f(c, 2);
  f.params().set("fc3.W", Tensor::zeros({5, 8}));
  f.params().set("fc3.b", Tensor::zeros({5}));
  const auto x = random_tensor({3, 16}, 3, 0.0, 1.0);
  const Tensor l = f.logits(x);
  for (float v : l.data()) EXPECT_EQ(v, 0.0f);
  Tape tape;
  const std::vector<int> t{0, 2, 4};
  const Var ce = ops::softmax_cross_entropy<float>(tape.constant(l), std::span<const int>(t));
  EXPECT_NEAR(ce.value().item(), std::log(5.0), 1e-6);
  std::vector<float> dup(x.data().begin(), x.data().begin() + 16);
  dup.insert(dup.end(), x.data().begin(), x.data().begin() + 16);
  const Tensor twin = Classifier(c, 2).logits(Tensor({2, 16}, dup));
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(twin.at(0, k), twin.at(1, k));
}

TEST(Velocity, TrainableSetsFollowPhase) {
  VelocityModel m(small_velocity(), 1);
  EXPECT_TRUE(m.params().trainable("in.W"));
  EXPECT_FALSE(m.params().trainable("embed.classes"));
  m.attach_lora(2);
  EXPECT_FALSE(m.params().trainable("in.W"));
  EXPECT_TRUE(m.params().trainable("in.lora_B"));
  EXPECT_TRUE(m.params().trainable("embed.classes"));
  m.train_adapters(false);
  EXPECT_FALSE(m.params().trainable("embed.classes"));
  m.remove_lora();
  EXPECT_FALSE(m.has_lora());
}

TEST(Velocity, AdapterUpdateChangesOnlyConditionedOutput) {
  VelocityModel m(small_velocity(), 3);
  m.attach_lora(4);
  const auto x = random_tensor({2, 6}, 5);
  const Tensor before = m.evaluate(x, 0.2f, m.null_class(), false);
  m.params().set("out.lora_B", random_tensor({6, 2}, 6));
  const Tensor base_after = m.evaluate(x, 0.2f, m.null_class(), false);
  const Tensor adapted = m.evaluate(x, 0.2f, 1, true);
  double diff = 0.0;
  for (std::size_t k = 0; k < before.size(); ++k) {
    EXPECT_EQ(before[k], base_after[k]);
    diff += std::fabs(adapted[k] - before[k]);
  }
  EXPECT_GT(diff, 0.0);
}

TEST(Velocity, TimeFeaturesBounded) {
  VelocityModel m(small_velocity(), 1);
  const std::vector<float> t{0.0f, 0.5f, 1.0f};
  const Tensor f = m.time_features<float>(t);
  EXPECT_EQ(f.shape(), (Shape{3, 4}));
  for (float v : f.data()) EXPECT_LE(std::fabs(v), 1.0f);
  EXPECT_EQ(f.at(0, 2), 1.0f);  // cos(0)
}

TEST(Velocity, ConfigMetadataRoundTrip) {
  const auto c = small_velocity();
  const auto back = VelocityConfig::from_meta(c.to_meta());
  EXPECT_EQ(back.width, c.width);
  EXPECT_EQ(back.blocks, c.blocks);
  EXPECT_EQ(back.lora_rank, c.lora_rank);
  EXPECT_EQ(back.lora_alpha, c.lora_alpha);
}

class VelocityGrad : public ::testing::TestWithParam<std::uint64_t> {};

// Every parameter tensor of an adapted 3-block model, probed one at a time.
TEST_P(VelocityGrad, ParameterGradientsMatchCentralDifferences) {
  for (const auto& c : testing::velocity_grad_cases(GetParam())) {
    EXPECT_LE(grad_check(c.fn, c.point, 1e-4).max_rel_error, 1e-4) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, VelocityGrad, ::testing::Range<std::uint64_t>(0, 5));

TEST(Classifier, OutputShapesAndArgmax) {
  for (auto arch : {ClassifierArch::mlp, ClassifierArch::conv}) {
    ClassifierConfig c;
    c.arch = arch;
    c.input_dim = 64;
    c.height = 8;
    c.width = 8;
    c.num_classes = 5;
    c.hidden = 16;
    const Classifier f(c, 11);
    const auto x = random_tensor({3, 64}, 12, 0.0, 1.0);
    const Tensor l = f.logits(x);
    EXPECT_EQ(l.shape(), (Shape{3, 5}));
    const auto pred = f.predict(x);
    for (std::size_t i = 0; i < 3; ++i) {
      int best = 0;
      for (int k = 1; k < 5; ++k)
        if (l.at(i, k) > l.at(i, best)) best = k;
      EXPECT_EQ(pred[i], best);
    }
  }
}

TEST(Classifier, SmoothnessFollowsActivation) {
  ClassifierConfig c;
  c.activation = Activation::silu;
  EXPECT_TRUE(Classifier(c, 1).smooth());
  c.activation = Activation::relu;
  EXPECT_FALSE(Classifier(c, 1).smooth());
  EXPECT_EQ(parse_arch("mlp"), ClassifierArch::mlp);
  EXPECT_THROW(parse_arch("resnet"), std::invalid_argument);
}

TEST(Classifier, ConvGradientMatchesCentralDifferences) {
  ClassifierConfig c;
  c.arch = ClassifierArch::conv;
  c.activation = Activation::silu;
  c.input_dim = 16;
  c.height = 4;
  c.width = 4;
  c.num_classes = 3;
  c.hidden = 6;
  c.conv1 = 2;
  c.conv2 = 3;
  const Classifier f(c, 5);
  const std::vector<int> tg{1, 2};
  ScalarFn<double> loss = [&](BasicTape<double>& tape, BasicVar<double> x) {
    ParamBinding<double> p(tape, f.params(), true);
    return ops::softmax_cross_entropy<double>(f.forward<double>(p, x), tg);
  };
  EXPECT_LE(grad_check(loss, random_tensor<double>({2, 16}, 6, 0.0, 1.0), 1e-6).max_rel_error, 1e-4);
}

TEST(Optimizer, SgdAndAdamFirstStep) {
  ParamStore s;
  s.add("w", Tensor({2}, {1.0f, -1.0f}));
  NamedGrads g{{"w", Tensor({2}, {0.5f, -2.0f})}};
  Optimizer sgd(OptimizerKind::sgd);
  sgd.step(s, g, 0.1f);
  EXPECT_FLOAT_EQ(s.get("w")[0], 0.95f);
  EXPECT_FLOAT_EQ(s.get("w")[1], -0.8f);
  // Adam's bias-corrected first step moves each coordinate by ~lr * sign(g).
  ParamStore a;
  a.add("w", Tensor({2}, {1.0f, -1.0f}));
  Optimizer adam(OptimizerKind::adam);
  adam.step(a, g, 0.1f);
  EXPECT_NEAR(a.get("w")[0], 0.9f, 1e-5);
  EXPECT_NEAR(a.get("w")[1], -0.9f, 1e-5);
  EXPECT_EQ(adam.step_count(), 1u);
}

TEST(Optimizer, ReferenceSteps) {
  ParamStore s;
  s.add("p", Tensor({1}, {1.0f}));
  Optimizer sgd(OptimizerKind::sgd);
  sgd.step(s, {{"p", Tensor({1}, {2.0f})}}, 0.1f);
  EXPECT_FLOAT_EQ(s.get("p")[0], 0.8f);
  const ParamStore before = s;
  sgd.step(s, {{"p", Tensor({1}, {2.0f})}}, 0.0f);
  EXPECT_TRUE(s.bit_equal(before));
  ParamStore a;
  a.add("p", Tensor({1}, {1.0f}));
  Optimizer adam(OptimizerKind::adam);
  adam.step(a, {{"p", Tensor({1}, {1.0f})}}, 0.01f);
  EXPECT_NEAR(a.get("p")[0], 0.99f, 1e-6);
}

TEST(Optimizer, FrozenParameterRejected) {
  ParamStore s;
  s.add("w", Tensor({1}, {1.0f}), false);
  Optimizer sgd(OptimizerKind::sgd);
  EXPECT_THROW(sgd.step(s, {{"w", Tensor({1}, {1.0f})}}, 0.1f), std::exception);
}

}  // namespace
}  // namespace dflow
