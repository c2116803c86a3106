// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dflow/params.hpp"

namespace dflow {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(const std::string& s);
const char* to_string(OptimizerKind kind);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// SGD (p -= lr*g) or Adam. Gradients must be keyed to trainable parameters;
// frozen parameters are never touched.
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind, AdamHyper hyper = {}) : kind_(kind), hyper_(hyper) {}

  void step(ParamStore& store, const NamedGrads& grads, float lr);

  OptimizerKind kind() const { return kind_; }
  std::size_t step_count() const { return steps_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  OptimizerKind kind_;
  AdamHyper hyper_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

// One-shot form; Adam state lives in `opt`.
inline void optimizer_step(ParamStore& store, const NamedGrads& grads, float lr, Optimizer& opt) {
  opt.step(store, grads, lr);
}

}  // namespace dflow
