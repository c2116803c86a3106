// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

#include "dflow/attack.hpp"
#include "dflow/eval.hpp"
#include "dflow/ops.hpp"
#include "dflow/training.hpp"

namespace dflow {
namespace {

Tensor uniform(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> d(shape_numel(shape));
  for (auto& v : d) v = u(rng);
  return Tensor(shape, std::move(d));
}

void BM_Gemm(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Tensor a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  std::vector<float> c(n * n);
  for (auto _ : st) {
    kernels::gemm(false, false, n, n, n, a.data().data(), b.data().data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForwardBackward(benchmark::State& st) {
  const ops::ConvGeometry g{1, 8, 16, 16, 3};
  const Tensor x = uniform({32, 256}, 3), w = uniform({8, 9}, 4), b = uniform({8}, 5);
  for (auto _ : st) {
    Tape tape;
    auto wv = tape.leaf(w);
    auto y = ops::conv2d(tape.constant(x), wv, tape.constant(b), g);
    benchmark::DoNotOptimize(tape.backward(ops::mean(y)));
  }
}
BENCHMARK(BM_Conv2dForwardBackward);

struct Models {
  Dataset data = generate_shapes(1, 64);
  VelocityModel velocity{velocity_config_for(data), 2};
  Classifier classifier{classifier_config_for(data, ClassifierArch::conv), 3};
  Models() { velocity.attach_lora(4); }
};

const Models& models() {
  static const Models m;
  return m;
}

void BM_VelocityEvaluate(benchmark::State& st) {
  const auto& m = models();
  const Tensor x = m.data.images.slice_rows(0, static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(m.velocity.evaluate(x, 0.2f, 1, true));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_VelocityEvaluate)->Arg(1)->Arg(8)->Arg(64);

void BM_AttackTrainStep(benchmark::State& st) {
  const auto& m = models();
  AttackConfig ac;
  ac.variant = static_cast<Variant>(st.range(0));
  ac.steps = 1;
  for (auto _ : st) {
    VelocityModel v = m.velocity;
    benchmark::DoNotOptimize(train_dual_flow(v, m.classifier, m.data, ac).updates);
  }
  st.SetLabel(to_string(ac.variant));
}
BENCHMARK(BM_AttackTrainStep)
    ->Arg(static_cast<int>(Variant::co))
    ->Arg(static_cast<int>(Variant::cs))
    ->Arg(static_cast<int>(Variant::rs));

void BM_SampleDualFlow(benchmark::State& st) {
  const auto& m = models();
  const Tensor x = m.data.images.slice_rows(0, 8);
  const std::vector<int> t(8, 3);
  SamplerOptions o;
  o.noise = {static_cast<float>(st.range(0)) / 10.0f, 1};
  for (auto _ : st) benchmark::DoNotOptimize(sample_dual_flow(m.velocity, x, t, o));
  st.SetItemsProcessed(st.iterations() * 8);
}
BENCHMARK(BM_SampleDualFlow)->Arg(0)->Arg(5);

void BM_Defense(benchmark::State& st) {
  const Tensor x = uniform({64, 256}, 6);
  const char* specs[] = {"gaussian:1", "median:3", "quantize:8"};
  const auto d = DefenseSpec::parse(specs[st.range(0)]);
  for (auto _ : st) benchmark::DoNotOptimize(apply_defense(x, 16, 16, d));
  st.SetLabel(d.label());
  st.SetItemsProcessed(st.iterations() * 64);
}
BENCHMARK(BM_Defense)->DenseRange(0, 2);

}  // namespace
}  // namespace dflow

BENCHMARK_MAIN();
