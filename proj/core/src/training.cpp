// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/training.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dflow/errors.hpp"
#include "dflow/flow.hpp"

namespace dflow {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr >= 0.0f)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(eval_fraction > 0.0f && eval_fraction <= 0.5f)) {
    throw std::invalid_argument("eval split fraction must lie in (0, 0.5]");
  }
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

PretrainResult pretrain_flow_matching(VelocityModel& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.dim() != model.config().data_dim) throw ShapeError("dataset dim does not match velocity model");
  PretrainResult res;
  model.train_base();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<float> unif(0.0f, 1.0f);
  Optimizer opt(cfg.optimizer);
  const std::size_t d = data.dim();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(data.size(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const std::size_t bsz = idx.size();
      const Tensor x0 = data.rows(idx);
      std::vector<float> t(bsz);
      for (float& v : t) v = unif(rng);
      const Tensor z = standard_normal({bsz, d}, rng);
      const Tensor xt = marginal_sample_rows(x0, t, z);
      std::vector<float> target(bsz * d);
      for (std::size_t i = 0; i < target.size(); ++i) target[i] = z[i] - x0[i];

      const ParamStore last_good = model.params();
      try {
        Tape tape;
        ParamBinding<float> p(tape, model.params());
        std::vector<int> cond(bsz, model.null_class());
        const Var pred = model.forward<float>(p, xt, t, cond, false);
        const Var diff = ops::sub(pred, tape.constant(Tensor({bsz, d}, std::move(target))));
        const Var loss = ops::mean(ops::mul(diff, diff));
        total += loss.value().item();
        opt.step(model.params(), p.named(tape.backward(loss)), cfg.lr);
      } catch (const NonFiniteError& e) {
        model.params() = last_good;
        model.params().freeze_all();
        throw DivergenceError(std::string("flow-matching pretraining diverged: ") + e.what());
      }
      ++batches;
      ++res.updates;
    }
    res.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  model.params().freeze_all();
  return res;
}

double accuracy(const Classifier& f, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy on empty dataset");
  std::size_t hits = 0;
  constexpr std::size_t chunk = 256;
  for (std::size_t s = 0; s < data.size(); s += chunk) {
    const std::size_t e = std::min(data.size(), s + chunk);
    const auto pred = f.predict(data.images.slice_rows(s, e));
    for (std::size_t i = s; i < e; ++i) hits += pred[i - s] == data.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

ClassifierResult train_classifier(const ClassifierConfig& arch, const Dataset& train,
                                  const Dataset& test, const TrainConfig& cfg) {
  cfg.validate();
  if (train.dim() != arch.input_dim || test.dim() != arch.input_dim) {
    throw ShapeError("dataset dim does not match classifier input");
  }
  ClassifierResult res{Classifier(arch, cfg.seed), 0.0, {}};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Optimizer opt(cfg.optimizer);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(train.size(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(train.labels[i]);
      const ParamStore last_good = res.model.params();
      try {
        Tape tape;
        ParamBinding<float> p(tape, res.model.params());
        const Var logits = res.model.forward<float>(p, tape.constant(train.rows(idx)));
        const Var loss = ops::softmax_cross_entropy<float>(logits, y);
        total += loss.value().item();
        opt.step(res.model.params(), p.named(tape.backward(loss)), cfg.lr);
      } catch (const NonFiniteError& e) {
        res.model.params() = last_good;
        throw DivergenceError(std::string("classifier training diverged: ") + e.what());
      }
      ++batches;
    }
    res.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  res.model.params().freeze_all();
  res.test_accuracy = accuracy(res.model, test);
  return res;
}

ClassifierResult train_classifier(const ClassifierConfig& arch, const Dataset& data,
                                  const TrainConfig& cfg) {
  cfg.validate();
  auto [train, test] = split_dataset(data, cfg.eval_fraction, cfg.seed);
  return train_classifier(arch, train, test, cfg);
}

ClassifierConfig classifier_config_for(const Dataset& data, ClassifierArch arch, Activation act) {
  ClassifierConfig c;
  c.arch = arch;
  c.activation = act;
  c.input_dim = data.dim();
  c.height = data.height;
  c.width = data.width;
  c.num_classes = data.num_classes;
  if (data.kind == DatasetKind::gmm2d) {
    if (arch == ClassifierArch::conv) throw std::invalid_argument("conv classifier needs image data");
    c.hidden = 32;
  }
  return c;
}

VelocityConfig velocity_config_for(const Dataset& data) {
  VelocityConfig c;
  c.data_dim = data.dim();
  c.num_classes = data.num_classes;
  if (data.kind == DatasetKind::gmm2d) c.width = 64;
  return c;
}

}  // namespace dflow
