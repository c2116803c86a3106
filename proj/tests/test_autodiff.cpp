// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dflow/grad_check.hpp"
#include "dflow/ops.hpp"
#include "grad_suite.hpp"
#include "test_util.hpp"

namespace dflow {
namespace {

using testing::random_tensor;
using testing::V64;

TEST(Tensor, RejectsNonFiniteValues) {
  EXPECT_THROW(Tensor({2}, {1.0f, std::nanf("")}), NonFiniteError);
  EXPECT_THROW(Tensor({1}, {INFINITY}), NonFiniteError);
  EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
}

TEST(Tensor, SliceAndReshapeKeepValues) {
  const Tensor t({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor s = t.slice_rows(1, 3);
  EXPECT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_EQ(s[0], 3.0f);
  EXPECT_EQ(t.reshaped({6})[5], 6.0f);
  EXPECT_THROW(t.reshaped({4}), ShapeError);
}

TEST(Ops, MatmulMatchesNaiveTripleLoop) {
  const auto a = random_tensor({4, 5}, 1);
  const auto b = random_tensor({5, 3}, 2);
  Tape tape;
  const Tensor c = ops::matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += double(a.at(i, k)) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), acc, 1e-6);
    }
  }
}

TEST(Ops, GemmTransposeFlagsAgree) {
  const auto a = random_tensor({3, 4}, 3);
  const auto b = random_tensor({5, 4}, 4);
  std::vector<float> c1(15), c2(15);
  kernels::gemm<float>(false, true, 3, 5, 4, a.data().data(), b.data().data(), c1.data(), false);
  Tape tape;
  const Tensor ref = ops::matmul_nt(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(c1[i], ref[i], 1e-6);
  kernels::gemm<float>(false, true, 3, 5, 4, a.data().data(), b.data().data(), c2.data(), false);
  kernels::gemm<float>(false, true, 3, 5, 4, a.data().data(), b.data().data(), c2.data(), true);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(c2[i], 2 * ref[i], 1e-6);
}

TEST(Ops, CrossEntropyHandValue) {
  // logits (1, 2, 3), target 2: log(e + e^2 + e^3) - 3
  const double expect = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  Tape tape;
  const Var logits = tape.leaf(Tensor({1, 3}, {1, 2, 3}));
  const int target = 2;
  const Var loss = ops::softmax_cross_entropy<float>(logits, std::span<const int>(&target, 1));
  EXPECT_NEAR(loss.value().item(), expect, 1e-6);
  const auto g = tape.backward(loss).at(logits.id);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(g[0], std::exp(1.0) / z, 1e-6);
  EXPECT_NEAR(g[1], std::exp(2.0) / z, 1e-6);
  EXPECT_NEAR(g[2], std::exp(3.0) / z - 1.0, 1e-6);
}

TEST(Ops, CrossEntropyPinnedValue) {
  Tape tape;
  const int target = 1;
  const Var loss = ops::softmax_cross_entropy<float>(tape.constant(Tensor({1, 3}, {1, 2, 3})),
                                                     std::span<const int>(&target, 1));
  EXPECT_NEAR(loss.value().item(), 1.40760596444438030, 1e-6);
}

TEST(Ops, CrossEntropyIsStableForLargeLogits) {
  Tape tape;
  const int target = 0;
  const Var loss = ops::softmax_cross_entropy<float>(tape.constant(Tensor({1, 2}, {1000.0f, 0.0f})),
                                                     std::span<const int>(&target, 1));
  EXPECT_NEAR(loss.value().item(), 0.0f, 1e-6);
}

TEST(Ops, ClipBoxGradientIsZeroAtTiesAndOutside) {
  Tape tape;
  const Var x = tape.leaf(Tensor({4}, {-2.0f, 0.0f, 0.5f, 1.0f}));
  const Tensor lo = Tensor::full({4}, 0.0f);
  const Tensor hi = Tensor::full({4}, 1.0f);
  const Var y = ops::clip_box(x, lo, hi);
  EXPECT_EQ(y.value()[0], 0.0f);
  EXPECT_EQ(y.value()[3], 1.0f);
  const auto g = tape.backward(ops::sum(y)).at(x.id);
  EXPECT_EQ(g[0], 0.0f);  // outside
  EXPECT_EQ(g[1], 0.0f);  // tie with lo
  EXPECT_EQ(g[2], 1.0f);  // interior
  EXPECT_EQ(g[3], 0.0f);  // tie with hi
}

TEST(Ops, Conv2dMatchesDirectSum) {
  ops::ConvGeometry g{2, 3, 5, 4, 3};
  const auto x = random_tensor({2, 2 * 5 * 4}, 5);
  const auto w = random_tensor({3, 2 * 9}, 6);
  const auto b = random_tensor({3}, 7);
  Tape tape;
  const Tensor y = ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), g).value();
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t co = 0; co < 3; ++co) {
      for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < 2; ++ci) {
            for (int dr = -1; dr <= 1; ++dr) {
              for (int dc = -1; dc <= 1; ++dc) {
                const int rr = int(r) + dr, cc = int(c) + dc;
                if (rr < 0 || rr >= 5 || cc < 0 || cc >= 4) continue;
                acc += double(w.at(co, ci * 9 + (dr + 1) * 3 + (dc + 1))) * x.at(n, ci * 20 + rr * 4 + cc);
              }
            }
          }
          EXPECT_NEAR(y.at(n, co * 20 + r * 4 + c), acc, 1e-5);
        }
      }
    }
  }
}

TEST(Ops, AvgPoolAveragesQuads) {
  Tape tape;
  const Tensor x({1, 16}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  const Tensor y = ops::avgpool2(tape.constant(x), 1, 4, 4).value();
  ASSERT_EQ(y.size(), 4u);
  EXPECT_FLOAT_EQ(y[0], (1 + 2 + 5 + 6) / 4.0f);
  EXPECT_FLOAT_EQ(y[3], (11 + 12 + 15 + 16) / 4.0f);
}

TEST(Ops, GatherScattersGradientBack) {
  Tape tape;
  const Var table = tape.leaf(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  const std::vector<int> idx{2, 0, 2};
  const Var rows = ops::gather_rows(table, std::span<const int>(idx));
  EXPECT_EQ(rows.value().at(0, 1), 6.0f);
  const auto g = tape.backward(ops::sum(rows)).at(table.id);
  EXPECT_EQ(g.at(0, 0), 1.0f);
  EXPECT_EQ(g.at(1, 0), 0.0f);
  EXPECT_EQ(g.at(2, 1), 2.0f);
}

TEST(Ops, AttentionWeightsAreRowStochastic) {
  const auto q = random_tensor({3, 4}, 8);
  const auto k = random_tensor({6, 4}, 9);
  const auto w = ops::attention_weights(q, k, 2);
  for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(w.at(b, 0) + w.at(b, 1), 1.0f, 1e-6);
}

TEST(Autodiff, UnusedLeafGetsZeroGradient) {
  Tape tape;
  const Var a = tape.leaf(Tensor({2}, {1, 2}));
  const Var b = tape.leaf(Tensor({2}, {3, 4}));
  const auto g = tape.backward(ops::sum(a));
  EXPECT_EQ(g.at(b.id)[0], 0.0f);
  EXPECT_EQ(g.at(a.id)[1], 1.0f);
}

TEST(Autodiff, NonScalarLossRejected) {
  Tape tape;
  const Var a = tape.leaf(Tensor({2}, {1, 2}));
  EXPECT_THROW(tape.backward(a), ShapeError);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  // d/dx sum(x*x + x) = 2x + 1
  Tape tape;
  const Var x = tape.leaf(Tensor({3}, {1, -2, 0.5f}));
  const auto g = tape.backward(ops::sum(ops::add(ops::mul(x, x), x))).at(x.id);
  EXPECT_FLOAT_EQ(g[0], 3.0f);
  EXPECT_FLOAT_EQ(g[1], -3.0f);
  EXPECT_FLOAT_EQ(g[2], 2.0f);
}

class PrimitiveGrad : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PrimitiveGrad, CentralDifferencesAgree) {
  for (const auto& c : testing::primitive_grad_cases(GetParam())) {
    EXPECT_LE(grad_check(c.fn, c.point, 1e-3).max_rel_error, 1e-4) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGrad, ::testing::Range<std::uint64_t>(0, 20));

TEST(Autodiff, SquareAtThree) {
  Tape tape;
  const Var x = tape.leaf(Tensor({1}, {3.0f}));
  EXPECT_EQ(tape.backward(ops::sum(ops::mul(x, x))).at(x.id)[0], 6.0f);
}

TEST(Autodiff, BackwardIsBitDeterministic) {
  const auto w = random_tensor({4, 3}, 1);
  const auto x = random_tensor({5, 4}, 2);
  auto grads = [&] {
    Tape tape;
    const Var wv = tape.leaf(w);
    const Var y = ops::tanh(ops::matmul(tape.constant(x), wv));
    const auto g = tape.backward(ops::mean(ops::mul(y, y))).at(wv.id);
    return std::vector<float>(g.data().begin(), g.data().end());
  };
  EXPECT_EQ(grads(), grads());
}

TEST(Ops, CrossEntropyEndpoints) {
  Tape tape;
  const int t0 = 3, t1 = 1;
  const Var uniform = ops::softmax_cross_entropy<float>(tape.constant(Tensor::full({1, 8}, 0.7f)),
                                                        std::span<const int>(&t0, 1));
  EXPECT_NEAR(uniform.value().item(), std::log(8.0), 1e-6);
  const Var saturated = ops::softmax_cross_entropy<float>(tape.constant(Tensor({1, 2}, {0.0f, 100.0f})),
                                                          std::span<const int>(&t1, 1));
  EXPECT_NEAR(saturated.value().item(), 0.0, 1e-6);
}

TEST(Ops, ClipBoxScalarCases) {
  Tape tape;
  const Var x = tape.leaf(Tensor({2}, {0.5f, 0.2f}));
  const Var y = ops::clip_box(x, Tensor::full({2}, 0.0f), Tensor::full({2}, 0.4f));
  EXPECT_EQ(y.value()[0], 0.4f);
  EXPECT_EQ(y.value()[1], 0.2f);
  const auto g = tape.backward(ops::sum(y)).at(x.id);
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[1], 1.0f);
}

TEST(Ops, ClipBoxMixedVector) {
  Tape tape;
  const Var x = tape.leaf(Tensor({3}, {-0.1f, 0.05f, 0.9f}));
  const Var y = ops::clip_box(x, Tensor::full({3}, 0.0f), Tensor::full({3}, 0.5f));
  EXPECT_EQ(y.value()[0], 0.0f);
  EXPECT_EQ(y.value()[1], 0.05f);
  EXPECT_EQ(y.value()[2], 0.5f);
  const auto g = tape.backward(ops::sum(y)).at(x.id);
  EXPECT_EQ(std::vector<float>(g.data().begin(), g.data().end()), (std::vector<float>{0.0f, 1.0f, 0.0f}));
  // Brute-force per-coordinate finite differences away from the kinks.
  const std::vector<double> xs{-0.1, 0.05, 0.9};
  for (std::size_t i = 0; i < 3; ++i) {
    auto clip = [](double v) { return std::min(std::max(v, 0.0), 0.5); };
    const double fd = (clip(xs[i] + 1e-3) - clip(xs[i] - 1e-3)) / 2e-3;
    EXPECT_NEAR(g[i], fd, 1e-9);
  }
}

TEST(Ops, ClipBoxMaskCountsInteriorCoordinates) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> grid(-4, 12);
  for (int trial = 0; trial < 100; ++trial) {
    // Values on a coarse grid so exact ties with the bounds occur often.
    std::vector<float> v(32), lo(32), hi(32);
    std::size_t interior = 0;
    for (std::size_t i = 0; i < 32; ++i) {
      v[i] = grid(rng) / 8.0f;
      lo[i] = grid(rng) / 16.0f;
      hi[i] = lo[i] + 0.25f;
      interior += lo[i] < v[i] && v[i] < hi[i];
    }
    Tape tape;
    const Var x = tape.leaf(Tensor({32}, v));
    const auto g = tape.backward(ops::sum(ops::clip_box(x, Tensor({32}, lo), Tensor({32}, hi)))).at(x.id);
    double total = 0.0;
    for (float m : g.data()) {
      EXPECT_TRUE(m == 0.0f || m == 1.0f);
      total += m;
    }
    EXPECT_EQ(total, static_cast<double>(interior));
  }
}

TEST(GradCheck, ReferenceFunctions) {
  const auto a = random_tensor<double>({6}, 3);
  ScalarFn<double> linear = [a](BasicTape<double>& t, V64 x) { return ops::sum(ops::mul(x, t.constant(a))); };
  EXPECT_LE(grad_check(linear, random_tensor<double>({6}, 4), 1e-3).max_rel_error, 1e-7);

  ScalarFn<double> sine = [](BasicTape<double>& tape, V64 x) {
    const auto& v = x.value();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::sin(v[i]);
    V64 out = tape.record(Tensor64(v.shape(), std::move(y)), {x.id},
                          [v](const std::vector<double>& go, std::span<std::vector<double>* const> in) {
                            for (std::size_t i = 0; i < go.size(); ++i) (*in[0])[i] += go[i] * std::cos(v[i]);
                          });
    return ops::sum(out);
  };
  const auto r = grad_check(sine, Tensor64({1}, {0.7}), 1e-3);
  EXPECT_LE(r.max_rel_error, 1e-5);
  EXPECT_NEAR(r.analytic, std::cos(0.7), 1e-15);

  ScalarFn<double> clipped = [](BasicTape<double>&, V64 x) {
    return ops::sum(ops::clip_box(x, Tensor64::full({2}, 0.0), Tensor64::full({2}, 0.4)));
  };
  EXPECT_LE(grad_check(clipped, Tensor64({2}, {0.5, 0.9}), 1e-3).max_rel_error, 1e-7);
}

TEST(GradCheck, TwoLayerTanhNetEveryParameter) {
  const auto x = random_tensor<double>({4, 3}, 5);
  const auto w1 = random_tensor<double>({3, 5}, 6), w2 = random_tensor<double>({5, 2}, 7);
  auto net = [&](BasicTape<double>& t, V64 a, V64 b) {
    const V64 h = ops::tanh(ops::matmul(t.constant(x), a));
    const V64 y = ops::tanh(ops::matmul(h, b));
    return ops::mean(ops::mul(y, y));
  };
  ScalarFn<double> f1 = [&](BasicTape<double>& t, V64 a) { return net(t, a, t.constant(w2)); };
  ScalarFn<double> f2 = [&](BasicTape<double>& t, V64 b) { return net(t, t.constant(w1), b); };
  EXPECT_LE(grad_check(f1, w1, 1e-3).max_rel_error, 1e-4);
  EXPECT_LE(grad_check(f2, w2, 1e-3).max_rel_error, 1e-4);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A primitive with a deliberately wrong backward must be caught.
  ScalarFn<double> bad = [](BasicTape<double>& tape, V64 x) {
    const auto& v = x.value();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[i] * v[i];
    V64 out = tape.record(Tensor64(v.shape(), std::move(y)), {x.id},
                          [v](const std::vector<double>& go, std::span<std::vector<double>* const> in) {
                            for (std::size_t i = 0; i < go.size(); ++i) (*in[0])[i] += go[i] * v[i];
                          });
    return ops::sum(out);
  };
  EXPECT_GT(grad_check(bad, random_tensor<double>({5}, 1, 0.5, 1.0), 1e-6).max_rel_error, 0.1);
}

}  // namespace
}  // namespace dflow
