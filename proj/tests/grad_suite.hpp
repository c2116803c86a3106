// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dflow/grad_check.hpp"
#include "dflow/models.hpp"
#include "dflow/ops.hpp"
#include "test_util.hpp"

namespace dflow::testing {

using V64 = BasicVar<double>;

struct GradCase {
  std::string name;
  ScalarFn<double> fn;
  Tensor64 point;
};

// sum(op(x) * w) with a fixed random weight keeps every gradient O(1).
inline ScalarFn<double> weighted(std::function<V64(BasicTape<double>&, V64)> op, const Shape& out_shape,
                                 std::uint64_t seed) {
  const auto w = random_tensor<double>(out_shape, seed ^ 0xabcdef);
  return [op, w](BasicTape<double>& tape, V64 x) {
    V64 y = op(tape, x);
    return ops::sum(ops::mul(y, tape.constant(w)));
  };
}

// Random point with every coordinate at least `gap` away from zero, so
// piecewise-linear primitives are probed away from their kink.
inline Tensor64 off_kink(const Shape& shape, std::uint64_t seed, double gap = 0.05) {
  Tensor64 t = random_tensor<double>(shape, seed);
  std::vector<double> d(t.data().begin(), t.data().end());
  for (auto& v : d) v = v < 0 ? v - gap : v + gap;
  return Tensor64(shape, std::move(d));
}

inline std::vector<GradCase> primitive_grad_cases(std::uint64_t s) {
  const auto x = off_kink({3, 4}, s);
  const auto other = random_tensor<double>({3, 4}, s + 100);
  const auto rmat = random_tensor<double>({4, 5}, s + 200);
  const auto rrow = random_tensor<double>({4}, s + 300);
  const auto keys = random_tensor<double>({6, 4}, s + 400);
  const auto img = random_tensor<double>({2, 2 * 16}, s + 500);
  const auto w = random_tensor<double>({3, 2 * 9}, s + 600);
  const auto b = random_tensor<double>({3}, s + 700);
  const ops::ConvGeometry g{2, 3, 4, 4, 3};
  const std::vector<double> srow{0.3, -1.2, 2.0};

  using Op = std::function<V64(BasicTape<double>&, V64)>;
  struct Spec {
    const char* name;
    Op op;
    Shape out;
    Tensor64 at;
  };
  const std::vector<Spec> specs{
      {"add", [=](auto& t, V64 v) { return ops::add(v, t.constant(other)); }, {3, 4}, x},
      {"sub", [=](auto& t, V64 v) { return ops::sub(t.constant(other), v); }, {3, 4}, x},
      {"mul", [](auto&, V64 v) { return ops::mul(v, ops::tanh(v)); }, {3, 4}, x},
      {"scale", [](auto&, V64 v) { return ops::scale(v, 1.7); }, {3, 4}, x},
      {"add_row", [=](auto& t, V64 v) { return ops::add_row(v, t.constant(rrow)); }, {3, 4}, x},
      {"scale_rows", [=](auto&, V64 v) { return ops::scale_rows(v, std::span<const double>(srow)); }, {3, 4}, x},
      {"matmul", [=](auto& t, V64 v) { return ops::matmul(v, t.constant(rmat)); }, {3, 5}, x},
      {"matmul_nt", [=](auto& t, V64 v) { return ops::matmul_nt(v, t.constant(other)); }, {3, 3}, x},
      {"tanh", [](auto&, V64 v) { return ops::tanh(v); }, {3, 4}, x},
      {"silu", [](auto&, V64 v) { return ops::silu(v); }, {3, 4}, x},
      {"relu", [](auto&, V64 v) { return ops::relu(v); }, {3, 4}, x},
      {"reshape", [](auto&, V64 v) { return ops::reshape(v, {4, 3}); }, {4, 3}, x},
      {"concat_rows", [=](auto& t, V64 v) { return ops::concat_rows(v, t.constant(other)); }, {6, 4}, x},
      {"gather_rows",
       [](auto&, V64 v) {
         const std::vector<int> idx{2, 0, 2, 1};
         return ops::gather_rows(v, std::span<const int>(idx));
       },
       {4, 4},
       x},
      {"attention",
       [=](auto& t, V64 v) {
         const auto k = t.constant(keys);
         return ops::grouped_attention(v, k, ops::tanh(ops::scale(k, 0.5)), 2);
       },
       {3, 4},
       x},
      {"cross_entropy",
       [](auto&, V64 v) {
         const std::vector<int> tg{1, 3, 0};
         return ops::reshape(ops::softmax_cross_entropy<double>(v, std::span<const int>(tg)), {1});
       },
       {1},
       x},
      {"mean", [](auto&, V64 v) { return ops::reshape(ops::mean(ops::mul(v, v)), {1}); }, {1}, x},
      {"conv2d_input", [=](auto& t, V64 v) { return ops::conv2d(v, t.constant(w), t.constant(b), g); }, {2, 48}, img},
      {"conv2d_weight", [=](auto& t, V64 v) { return ops::conv2d(t.constant(img), v, t.constant(b), g); }, {2, 48}, w},
      {"avgpool2", [](auto&, V64 v) { return ops::avgpool2(v, 2, 4, 4); }, {2, 8}, img},
  };
  std::vector<GradCase> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    out.push_back({specs[i].name, weighted(specs[i].op, specs[i].out, s + i), specs[i].at});
  }
  return out;
}

inline VelocityConfig three_block_velocity() {
  VelocityConfig c;
  c.data_dim = 6;
  c.width = 8;
  c.blocks = 3;
  c.time_dim = 4;
  c.embed_dim = 4;
  c.num_classes = 3;
  c.lora_rank = 2;
  return c;
}

// Squared error of an adapted 3-block model against a random target, as a
// function of one parameter tensor at a time.
inline std::vector<GradCase> velocity_grad_cases(std::uint64_t s) {
  auto m = std::make_shared<VelocityModel>(three_block_velocity(), s);
  m->attach_lora(s + 1);
  m->params().set("block1.dense.lora_B", random_tensor({8, 2}, s + 2, -0.3, 0.3));
  const auto x = random_tensor<double>({2, 6}, s + 3);
  const std::vector<double> t{0.2, 0.6};
  const std::vector<int> cond{0, 2};
  const auto target = random_tensor<double>({2, 6}, s + 4);
  std::vector<GradCase> out;
  for (const auto& name : m->params().names()) {
    ScalarFn<double> f = [=](BasicTape<double>& tape, V64 probe) {
      ParamBinding<double> p(tape, m->params());
      p.rebind(name, probe);
      const auto y = m->forward<double>(p, x, t, cond, true);
      const auto d = ops::sub(y, tape.constant(target));
      return ops::mean(ops::mul(d, d));
    };
    out.push_back({"velocity:" + name, f, m->params().get(name).cast<double>()});
  }
  return out;
}

}  // namespace dflow::testing
