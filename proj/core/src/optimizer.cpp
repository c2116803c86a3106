// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace dflow {

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

void Optimizer::step(ParamStore& store, const NamedGrads& grads, float lr) {
  for (const auto& [name, g] : grads) {
    if (!store.contains(name)) throw std::invalid_argument("gradient for unknown parameter " + name);
    if (!store.trainable(name)) throw std::invalid_argument("gradient for frozen parameter " + name);
    if (g.shape() != store.get(name).shape()) throw ShapeError("gradient shape mismatch for " + name);
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
  for (const auto& [name, g] : grads) {
    const Tensor& p = store.get(name);
    std::vector<float> next(p.size());
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < next.size(); ++i) next[i] = p[i] - lr * g[i];
    } else {
      Moments& mo = moments_[name];
      if (mo.m.empty()) {
        mo.m.assign(p.size(), 0.0);
        mo.v.assign(p.size(), 0.0);
      }
      for (std::size_t i = 0; i < next.size(); ++i) {
        const double gi = g[i];
        mo.m[i] = hyper_.beta1 * mo.m[i] + (1.0 - hyper_.beta1) * gi;
        mo.v[i] = hyper_.beta2 * mo.v[i] + (1.0 - hyper_.beta2) * gi * gi;
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        next[i] = static_cast<float>(p[i] - static_cast<double>(lr) * mhat / (std::sqrt(vhat) + hyper_.eps));
      }
    }
    store.set(name, Tensor(p.shape(), std::move(next)));
  }
}

}  // namespace dflow
