// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/flow.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dflow {

FlowSchedule::FlowSchedule(float tau, std::size_t steps)
    : tau_(tau), steps_(steps), delta_(steps ? tau / static_cast<float>(steps) : 0.0f) {
  if (!(tau > 0.0f && tau <= 1.0f)) throw std::invalid_argument("flow horizon tau must lie in (0, 1]");
  if (steps == 0) throw std::invalid_argument("flow schedule needs at least one step");
}

float FlowSchedule::time(std::size_t k) const {
  if (k > steps_) throw std::out_of_range("schedule index past N");
  return k == steps_ ? tau_ : static_cast<float>(k) * delta_;
}

VelocityField model_field(const VelocityModel& model, int cond, bool use_lora) {
  return [&model, cond, use_lora](const Tensor& x, float t) {
    return model.evaluate(x, t, cond, use_lora);
  };
}

VelocityField model_field(const VelocityModel& model, std::vector<int> cond, bool use_lora) {
  return [&model, cond = std::move(cond), use_lora](const Tensor& x, float t) {
    return model.evaluate(x, t, std::span<const int>(cond), use_lora);
  };
}

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

FlowResult forward_integrate(const VelocityField& field, const Tensor& x0, const FlowSchedule& sched) {
  FlowResult res{x0, {}};
  res.trajectory.times.push_back(0.0f);
  res.trajectory.states.push_back(x0);
  const float dt = sched.delta();
  for (std::size_t k = 0; k < sched.steps(); ++k) {
    const Tensor v = field(res.state, sched.time(k));
    check_same(res.state, v, "forward_integrate");
    std::vector<float> next(res.state.size());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = res.state[i] + v[i] * dt;
    res.state = Tensor(res.state.shape(), std::move(next));
    res.trajectory.times.push_back(sched.time(k + 1));
    res.trajectory.states.push_back(res.state);
  }
  return res;
}

Tensor reverse_step(const Tensor& x, const Tensor& v, float t, float delta, float gamma,
                    std::span<const float> xi) {
  check_same(x, v, "reverse_step");
  std::vector<float> next(x.size());
  for (std::size_t i = 0; i < next.size(); ++i) next[i] = x[i] - v[i] * delta;
  if (gamma > 0.0f) {
    if (xi.size() != next.size()) throw ShapeError("reverse_step: noise size mismatch");
    const float amp = gamma * t * std::sqrt(delta);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += amp * xi[i];
  }
  return Tensor(x.shape(), std::move(next));
}

FlowResult reverse_integrate(const VelocityField& field, const Tensor& x_tau,
                             const FlowSchedule& sched, const NoiseSpec& noise) {
  FlowResult res{x_tau, {}};
  res.trajectory.times.push_back(sched.tau());
  res.trajectory.states.push_back(x_tau);
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> xi;
  for (std::size_t k = sched.steps(); k >= 1; --k) {
    const float t = sched.time(k);
    const Tensor v = field(res.state, t);
    if (noise.stochastic()) {
      xi.resize(res.state.size());
      for (float& e : xi) e = normal(rng);
    }
    res.state = reverse_step(res.state, v, t, sched.delta(), noise.gamma, xi);
    res.trajectory.times.push_back(sched.time(k - 1));
    res.trajectory.states.push_back(res.state);
  }
  return res;
}

Tensor extrapolate_x0(const Tensor& x_t, const Tensor& v, float t) {
  check_same(x_t, v, "extrapolate_x0");
  std::vector<float> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x_t[i] - t * v[i];
  return Tensor(x_t.shape(), std::move(out));
}

Tensor marginal_sample(const Tensor& x0, float t, const Tensor& z) {
  check_same(x0, z, "marginal_sample");
  if (!(t >= 0.0f && t <= 1.0f)) throw std::out_of_range("marginal_sample: t outside [0, 1]");
  std::vector<float> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0f - t) * x0[i] + t * z[i];
  return Tensor(x0.shape(), std::move(out));
}

Tensor marginal_sample_rows(const Tensor& x0, std::span<const float> t, const Tensor& z) {
  check_same(x0, z, "marginal_sample_rows");
  const std::size_t rows = x0.rows(), w = x0.cols();
  if (t.size() != rows) throw ShapeError("marginal_sample_rows: one time per row");
  std::vector<float> out(x0.size());
  for (std::size_t r = 0; r < rows; ++r) {
    if (!(t[r] >= 0.0f && t[r] <= 1.0f)) throw std::out_of_range("marginal_sample: t outside [0, 1]");
    for (std::size_t j = 0; j < w; ++j)
      out[r * w + j] = (1.0f - t[r]) * x0[r * w + j] + t[r] * z[r * w + j];
  }
  return Tensor(x0.shape(), std::move(out));
}

float roundtrip_error(const VelocityField& field, const Tensor& x0, const FlowSchedule& sched) {
  const FlowResult fwd = forward_integrate(field, x0, sched);
  const FlowResult back = reverse_integrate(field, fwd.state, sched, NoiseSpec{});
  return max_abs_diff(back.state, x0);
}

Tensor standard_normal(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return standard_normal(shape, rng);
}

}  // namespace dflow
