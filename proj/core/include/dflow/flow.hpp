// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "dflow/models.hpp"
#include "dflow/tensor.hpp"

namespace dflow {

// Discretization of [0, tau] into N explicit Euler steps of size tau/N.
// tau == 1 is accepted for full-range generation from noise.
class FlowSchedule {
 public:
  FlowSchedule() = default;
  FlowSchedule(float tau, std::size_t steps);

  float tau() const { return tau_; }
  std::size_t steps() const { return steps_; }
  float delta() const { return delta_; }
  // Time of grid point k in [0, N]; time(N) is exactly tau.
  float time(std::size_t k) const;

 private:
  float tau_ = 0.25f;
  std::size_t steps_ = 6;
  float delta_ = 0.25f / 6.0f;
};

struct Trajectory {
  std::vector<float> times;
  std::vector<Tensor> states;
};

// gamma == 0 is the deterministic (ODE) sampler; gamma > 0 adds
// gamma * t * sqrt(delta) * xi per reverse step, xi ~ N(0, I) from `seed`.
struct NoiseSpec {
  float gamma = 0.0f;
  std::uint64_t seed = 0;

  bool stochastic() const { return gamma > 0.0f; }
};

// v(x, t) over a batch of rows sharing one time value.
using VelocityField = std::function<Tensor(const Tensor& x, float t)>;

VelocityField model_field(const VelocityModel& model, int cond, bool use_lora);
VelocityField model_field(const VelocityModel& model, std::vector<int> cond, bool use_lora);

struct FlowResult {
  Tensor state;
  Trajectory trajectory;
};

// x_{k+1} = x_k + delta * v(x_k, k*delta), k = 0..N-1.
FlowResult forward_integrate(const VelocityField& field, const Tensor& x0, const FlowSchedule& sched);

// x_{k-1} = x_k - delta * v(x_k, k*delta) [+ noise], k = N..1.
FlowResult reverse_integrate(const VelocityField& field, const Tensor& x_tau,
                             const FlowSchedule& sched, const NoiseSpec& noise = {});

// One reverse step with an explicit noise draw; `xi` may be empty for the
// deterministic case.
Tensor reverse_step(const Tensor& x, const Tensor& v, float t, float delta, float gamma,
                    std::span<const float> xi);

// Straight-line prediction of the t = 0 state: x_t - t * v.
Tensor extrapolate_x0(const Tensor& x_t, const Tensor& v, float t);

// Linear interpolation path (1 - t) x0 + t z.
Tensor marginal_sample(const Tensor& x0, float t, const Tensor& z);
Tensor marginal_sample_rows(const Tensor& x0, std::span<const float> t, const Tensor& z);

// || reverse(forward(x0)) - x0 ||_inf with one shared field.
float roundtrip_error(const VelocityField& field, const Tensor& x0, const FlowSchedule& sched);

Tensor standard_normal(const Shape& shape, std::uint64_t seed);

template <std::uniform_random_bit_generator Rng>
Tensor standard_normal(const Shape& shape, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> d(shape_numel(shape));
  for (float& x : d) x = dist(rng);
  return Tensor(shape, std::move(d));
}

}  // namespace dflow
