// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dflow/data.hpp"
#include "dflow/errors.hpp"
#include "dflow/flow.hpp"
#include "dflow/training.hpp"
#include "test_util.hpp"

namespace dflow {
namespace {

std::vector<std::size_t> class_counts(const Dataset& d) {
  std::vector<std::size_t> c(d.num_classes, 0);
  for (int l : d.labels) ++c.at(static_cast<std::size_t>(l));
  return c;
}

TEST(Shapes, GeometryRangeAndBalance) {
  const Dataset d = generate_shapes(3, 203);
  EXPECT_EQ(d.size(), 203u);
  EXPECT_EQ(d.dim(), 256u);
  EXPECT_EQ(d.num_classes, 8u);
  for (float v : d.images.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  const auto c = class_counts(d);
  const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
  EXPECT_LE(*hi - *lo, 1u);
}

TEST(Shapes, BalancedIntensityRange) {
  const Dataset d = generate_shapes(8, 800);
  for (std::size_t c : class_counts(d)) EXPECT_EQ(c, 100u);
  double mean = 0.0;
  for (float v : d.images.data()) mean += v;
  mean /= static_cast<double>(d.images.size());
  EXPECT_GE(mean, 0.05);
  EXPECT_LE(mean, 0.6);
}

TEST(Shapes, SeedDeterminesContent) {
  const Dataset a = generate_shapes(5, 40);
  const Dataset b = generate_shapes(5, 40);
  const Dataset c = generate_shapes(6, 40);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_TRUE(std::equal(a.images.data().begin(), a.images.data().end(), b.images.data().begin()));
  EXPECT_FALSE(std::equal(a.images.data().begin(), a.images.data().end(), c.images.data().begin()));
}

TEST(Shapes, ClassesDifferOnAverage) {
  // Class-mean images are pairwise distinct.
  const Dataset d = generate_shapes(1, 800);
  std::vector<std::vector<double>> mean(8, std::vector<double>(256, 0.0));
  const auto counts = class_counts(d);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t p = 0; p < 256; ++p) mean[d.labels[i]][p] += d.images.at(i, p) / counts[d.labels[i]];
  for (int a = 0; a < 8; ++a) {
    for (int b = a + 1; b < 8; ++b) {
      double dist = 0.0;
      for (std::size_t p = 0; p < 256; ++p) dist += std::fabs(mean[a][p] - mean[b][p]);
      EXPECT_GT(dist / 256, 0.005) << shape_class_name(a) << " vs " << shape_class_name(b);
    }
  }
}

TEST(Gmm, ComponentMeansOnCircle) {
  const Dataset d = generate_gmm2d(2, 8000);
  EXPECT_EQ(d.height, 1u);
  EXPECT_EQ(d.width, 2u);
  std::vector<double> mx(8, 0), my(8, 0);
  const auto counts = class_counts(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    mx[d.labels[i]] += d.images.at(i, 0) / counts[d.labels[i]];
    my[d.labels[i]] += d.images.at(i, 1) / counts[d.labels[i]];
  }
  for (int k = 0; k < 8; ++k) EXPECT_NEAR(std::hypot(mx[k], my[k]), 2.0, 0.05);
}

TEST(Split, DisjointAndComplete) {
  const Dataset d = generate_shapes(4, 100);
  const auto [train, hold] = split_dataset(d, 0.2f, 9);
  EXPECT_EQ(train.size() + hold.size(), 100u);
  EXPECT_EQ(hold.size(), 20u);
  // Pixel sums identify samples; the multiset must be preserved.
  auto sums = [](const Dataset& x) {
    std::vector<double> s;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double acc = 0;
      for (std::size_t p = 0; p < x.dim(); ++p) acc += x.images.at(i, p);
      s.push_back(acc);
    }
    return s;
  };
  auto all = sums(d), parts = sums(train);
  const auto h = sums(hold);
  parts.insert(parts.end(), h.begin(), h.end());
  std::sort(all.begin(), all.end());
  std::sort(parts.begin(), parts.end());
  EXPECT_EQ(all, parts);
}

TEST(Split, PartitionSizes) {
  const Dataset d = generate_shapes(4, 23);
  const auto p = partition(d, 5);
  ASSERT_EQ(p.size(), 5u);
  std::size_t total = 0;
  for (const auto& x : p) {
    EXPECT_GE(x.size(), 4u);
    EXPECT_LE(x.size(), 5u);
    total += x.size();
  }
  EXPECT_EQ(total, 23u);
  EXPECT_THROW(partition(d, 0), std::invalid_argument);
}

TEST(Cache, RoundTripAndTruncation) {
  const auto dir = testing::scratch_dir("data_cache");
  const Dataset d = generate_gmm2d(1, 50);
  save_dataset(d, dir / "d.dfds");
  const Dataset back = load_dataset(dir / "d.dfds");
  EXPECT_EQ(back.kind, d.kind);
  EXPECT_EQ(back.seed, d.seed);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_TRUE(std::equal(d.images.data().begin(), d.images.data().end(), back.images.data().begin()));
  const auto bytes = testing::read_text(dir / "d.dfds");
  std::ofstream(dir / "t.dfds", std::ios::binary) << bytes.substr(0, bytes.size() - 10);
  EXPECT_THROW(load_dataset(dir / "t.dfds"), std::runtime_error);
}

TEST(Training, FlowMatchingLossDecreases) {
  const Dataset d = generate_gmm2d(3, 512);
  VelocityModel m(velocity_config_for(d), 1);
  TrainConfig tc;
  tc.epochs = 8;
  tc.lr = 3e-3f;
  tc.seed = 2;
  const auto r = pretrain_flow_matching(m, d, tc);
  ASSERT_EQ(r.epoch_loss.size(), 8u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  for (const auto& [n, p] : m.params().items()) EXPECT_FALSE(p.trainable) << n;
}

TEST(Training, ClassifierLearnsGaussianMixture) {
  const Dataset d = generate_gmm2d(5, 2000);
  TrainConfig tc;
  tc.epochs = 15;
  tc.seed = 3;
  const auto r = train_classifier(classifier_config_for(d, ClassifierArch::mlp), d, tc);
  EXPECT_GE(r.test_accuracy, 0.95);
  const auto again = train_classifier(classifier_config_for(d, ClassifierArch::mlp), d, tc);
  EXPECT_EQ(again.test_accuracy, r.test_accuracy);
}

TEST(Training, SmallConvLearnsShapes) {
  const Dataset d = generate_shapes(2, 8000);
  TrainConfig tc;
  tc.epochs = 10;
  tc.seed = 4;
  const auto r = train_classifier(classifier_config_for(d, ClassifierArch::conv), d, tc);
  EXPECT_GE(r.test_accuracy, 0.9);
}

TEST(Training, ZeroEpochsLeavesVelocityUnchanged) {
  const Dataset d = generate_gmm2d(3, 64);
  VelocityModel m(velocity_config_for(d), 1);
  const ParamStore before = m.params();
  TrainConfig tc;
  tc.epochs = 0;
  const auto r = pretrain_flow_matching(m, d, tc);
  EXPECT_TRUE(r.epoch_loss.empty());
  EXPECT_TRUE(m.params().bit_equal(before));
}

TEST(Training, ZeroOutputLossIsNoisePlusDataEnergy) {
  const Dataset d = generate_gmm2d(6, 4096);
  VelocityModel m(velocity_config_for(d), 1);
  m.params().set("out.W", Tensor::zeros(m.params().get("out.W").shape()));
  m.params().set("out.b", Tensor::zeros(m.params().get("out.b").shape()));
  TrainConfig tc;
  tc.epochs = 1;
  tc.lr = 0.0f;
  tc.seed = 8;
  const auto r = pretrain_flow_matching(m, d, tc);
  // E|z - x0|^2 per coordinate = 1 + E[x0^2] for independent standard normal z.
  double energy = 0.0;
  for (float v : d.images.data()) energy += static_cast<double>(v) * v;
  const double expected = 1.0 + energy / static_cast<double>(d.images.size());
  EXPECT_NEAR(r.epoch_loss.at(0), expected, 0.05 * expected);
}

TEST(Training, SinglePointDataGeneratesThatPoint) {
  const std::vector<float> star{0.7f, -0.4f};
  Dataset d;
  d.kind = DatasetKind::gmm2d;
  d.num_classes = 1;
  d.height = 1;
  d.width = 2;
  std::vector<float> px;
  for (int i = 0; i < 1024; ++i) px.insert(px.end(), star.begin(), star.end());
  d.images = Tensor({1024, 2}, px);
  d.labels.assign(1024, 0);
  VelocityModel m(velocity_config_for(d), 2);
  TrainConfig tc;
  tc.epochs = 30;
  tc.lr = 3e-3f;
  tc.seed = 5;
  pretrain_flow_matching(m, d, tc);
  const auto field = model_field(m, m.null_class(), false);
  int close = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = reverse_integrate(field, standard_normal({1, 2}, seed), FlowSchedule(1.0f, 64)).state;
    close += std::hypot(x[0] - star[0], x[1] - star[1]) <= 0.2;
  }
  EXPECT_GE(close, 18);
}

TEST(Training, GeneratedSamplesAreClassifiable) {
  const Dataset d = generate_gmm2d(7, 2048);
  VelocityModel m(velocity_config_for(d), 3);
  TrainConfig tc;
  tc.epochs = 10;
  tc.lr = 3e-3f;
  tc.seed = 6;
  pretrain_flow_matching(m, d, tc);
  const auto f = train_classifier(classifier_config_for(d, ClassifierArch::mlp), d, tc).model;
  const Tensor x = reverse_integrate(model_field(m, std::vector<int>(64, m.null_class()), false),
                                     standard_normal({64, 2}, 9), FlowSchedule(1.0f, 64))
                       .state;
  const Tensor l = f.logits(x);
  double spread = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    float lo = l.at(i, 0), hi = l.at(i, 0);
    for (std::size_t k = 1; k < 8; ++k) {
      lo = std::min(lo, l.at(i, k));
      hi = std::max(hi, l.at(i, k));
    }
    spread += (hi - lo) / 64.0;
  }
  EXPECT_GT(spread, 1.0);
}

TEST(Training, DivergenceRestoresLastGoodParameters) {
  const Dataset d = generate_gmm2d(3, 128);
  VelocityModel m(velocity_config_for(d), 1);
  TrainConfig tc;
  tc.epochs = 5;
  tc.lr = 1e30f;
  tc.optimizer = OptimizerKind::sgd;
  EXPECT_THROW(pretrain_flow_matching(m, d, tc), DivergenceError);
  for (const auto& [n, p] : m.params().items())
    for (float v : p.value.data()) ASSERT_TRUE(std::isfinite(v)) << n;
}

TEST(Training, ConfigValidation) {
  TrainConfig tc;
  tc.eval_fraction = 0.0f;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
  tc.eval_fraction = 0.2f;
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace dflow
