// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/grad_check.hpp"

#include <cmath>

namespace dflow {

template <class T>
GradCheckResult grad_check(const ScalarFn<T>& f, const BasicTensor<T>& point, T h) {
  BasicTensor<T> analytic;
  {
    BasicTape<T> tape;
    BasicVar<T> x = tape.leaf(point);
    BasicVar<T> y = f(tape, x);
    analytic = tape.backward(y).at(x.id);
  }
  auto eval = [&](const std::vector<T>& at) {
    BasicTape<T> tape;
    BasicVar<T> x = tape.constant(BasicTensor<T>(point.shape(), at));
    const double v = f(tape, x).value().item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite evaluation");
    return v;
  };
  GradCheckResult res;
  std::vector<T> probe(point.data().begin(), point.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + h;
    const T up = probe[i];
    const double fp = eval(probe);
    probe[i] = orig - h;
    const T down = probe[i];
    const double fm = eval(probe);
    probe[i] = orig;
    // Divide by the representable step actually taken.
    const double numeric = (fp - fm) / (static_cast<double>(up) - static_cast<double>(down));
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    if (i == 0 || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
      res.analytic = a;
      res.numeric = numeric;
    }
  }
  return res;
}

template GradCheckResult grad_check<float>(const ScalarFn<float>&, const Tensor&, float);
template GradCheckResult grad_check<double>(const ScalarFn<double>&, const Tensor64&, double);

}  // namespace dflow
