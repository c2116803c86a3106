// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dflow/data.hpp"
#include "dflow/flow.hpp"
#include "dflow/models.hpp"
#include "dflow/optimizer.hpp"

namespace dflow {

// co: forward ODE to tau, then per-step updates along the reverse path.
// cs: jump to tau by direct noising, stochastic reverse path.
// rs: one update at a random grid time after direct noising.
enum class Variant { co, cs, rs };
Variant parse_variant(const std::string& s);
const char* to_string(Variant v);

struct AttackConfig {
  float epsilon = 16.0f / 255.0f;
  float lr = 3e-3f;
  std::size_t steps = 4000;  // minibatches
  std::size_t batch_size = 8;
  Variant variant = Variant::co;
  FlowSchedule sched{0.25f, 6};
  bool train_clip = true;
  float l2_weight = 0.0f;
  // gamma drives the cs training path; co and rs train without noise.
  NoiseSpec noise{0.5f, 0};
  std::vector<int> targets;  // empty: every class
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  bool train_class_rows = true;
  // false disables the adapters entirely (no trainable delta).
  bool use_lora = true;
  // Keep outputs inside [0, 1] after the budget clip.
  bool clamp_unit = true;

  void validate() const;
  std::vector<int> target_set(std::size_t num_classes) const;
};

struct MaskConfig {
  std::size_t count = 2;
  std::size_t min_side = 2;
  std::size_t max_side = 4;
  std::uint64_t seed = 0;
};

struct Square {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t side = 0;
};

// Ones everywhere except the listed squares, which are zero.
Tensor square_mask(std::size_t height, std::size_t width, std::span<const Square> squares);
Tensor random_square_mask(std::size_t height, std::size_t width, const MaskConfig& mcfg,
                          std::mt19937_64& rng);
Tensor random_square_mask(std::size_t height, std::size_t width, const MaskConfig& mcfg);

// Per-coordinate [lo, hi] = [x - eps, x + eps], optionally intersected with
// [0, 1]. Endpoints are nudged so |bound - x| <= eps holds in float.
std::pair<Tensor, Tensor> budget_bounds(const Tensor& x, float eps, bool clamp_unit);
Tensor clip_to_budget(const Tensor& x_pre, const Tensor& x, float eps, bool clamp_unit);

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double hit_rate = 0.0;  // fraction of the minibatch classified as its target
  double clipped = 0.0;   // fraction of x0 coordinates outside the budget box
};

struct AttackTrainResult {
  std::size_t updates = 0;
  std::vector<StepLog> log;
  std::optional<double> final_eval_asr;
};

struct SamplerOptions {
  FlowSchedule sched{0.25f, 6};
  float epsilon = 16.0f / 255.0f;
  NoiseSpec noise{};
  bool clip = true;
  bool clamp_unit = true;
  bool use_lora = true;
};

SamplerOptions sampler_options(const AttackConfig& cfg, float gamma);

struct AdvSample {
  Tensor x;
  Tensor x_pre;
  Tensor x_adv;
  int target = 0;
  std::map<std::string, int> predictions;

  Tensor delta() const;
};

// Algorithm-1 style training of the adapters (and class rows if enabled).
// The model must carry adapters; the classifier is only read.
AttackTrainResult train_dual_flow(VelocityModel& model, const Classifier& f, const Dataset& data,
                                  const AttackConfig& cfg, const Dataset* eval_set = nullptr,
                                  const SamplerOptions* eval_opts = nullptr);

// Fixed-target training with a fresh random square mask per sample applied
// to the x0 prediction before clipping.
AttackTrainResult finetune_single_target(VelocityModel& model, const Classifier& f, const Dataset& data,
                                         int target, const AttackConfig& cfg, const MaskConfig& mcfg);

// Forward with v_phi under the null condition, reverse with v_theta under
// `targets[i]` for row i, then the budget clip.
std::vector<AdvSample> sample_dual_flow(const VelocityModel& model, const Tensor& x,
                                        std::span<const int> targets, const SamplerOptions& opts);
std::vector<AdvSample> sample_from_latent(const VelocityModel& model, const Tensor& x,
                                          const Tensor& x_tau, std::span<const int> targets,
                                          const SamplerOptions& opts);

// Every image of `data` attacked toward every class of `targets`
// (target-major order). Sampler noise is reseeded per target.
std::vector<AdvSample> generate_attack_set(const VelocityModel& model, const Dataset& data,
                                           std::span<const int> targets, const SamplerOptions& opts);

// Fraction of the attack set that `f` assigns to its target.
double attack_success(const Classifier& f, std::span<const AdvSample> samples);

}  // namespace dflow
