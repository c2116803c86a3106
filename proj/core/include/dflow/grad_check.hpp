// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

#include "dflow/autodiff.hpp"

namespace dflow {

// Builds a scalar on `tape` from the input variable.
template <class T>
using ScalarFn = std::function<BasicVar<T>(BasicTape<T>&, BasicVar<T>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the tape gradient of f at `point` with central differences of
// step h, coordinate by coordinate. Error per coordinate is
// |a - n| / (|a| + |n| + 1e-12).
template <class T>
GradCheckResult grad_check(const ScalarFn<T>& f, const BasicTensor<T>& point, T h);

}  // namespace dflow
