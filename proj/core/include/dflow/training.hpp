// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dflow/data.hpp"
#include "dflow/models.hpp"
#include "dflow/optimizer.hpp"

namespace dflow {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  float lr = 2e-3f;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  float eval_fraction = 0.2f;

  void validate() const;
};

struct PretrainResult {
  std::vector<double> epoch_loss;
  std::size_t updates = 0;
};

// Conditional flow matching with the null condition: t ~ U(0,1),
// z ~ N(0, I), regress v(x_t, t) onto z - x0 (per-element mean squared
// error). On a non-finite loss the parameters of the last good step are
// restored and DivergenceError is thrown. Base parameters are frozen after.
PretrainResult pretrain_flow_matching(VelocityModel& model, const Dataset& data, const TrainConfig& cfg);

struct ClassifierResult {
  Classifier model;
  double test_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

ClassifierResult train_classifier(const ClassifierConfig& arch, const Dataset& train,
                                  const Dataset& test, const TrainConfig& cfg);
// Splits `data` by cfg.eval_fraction (seeded by cfg.seed) first.
ClassifierResult train_classifier(const ClassifierConfig& arch, const Dataset& data,
                                  const TrainConfig& cfg);

double accuracy(const Classifier& f, const Dataset& data);

// Classifier configuration matching a dataset's geometry.
ClassifierConfig classifier_config_for(const Dataset& data, ClassifierArch arch,
                                       Activation act = Activation::relu);
VelocityConfig velocity_config_for(const Dataset& data);

}  // namespace dflow
