// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dflow/autodiff.hpp"

namespace dflow {

struct Param {
  Tensor value;
  bool trainable = true;
};

// Named parameters. Iteration order is lexicographic by name, which makes
// serialization and optimizer sweeps deterministic.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  bool trainable(const std::string& name) const;
  // Replaces a value; the shape must not change.
  void set(const std::string& name, Tensor value);
  void set_trainable(const std::string& name, bool trainable);
  // Applies `trainable = pred(name)` to every parameter.
  void set_trainable_if(const std::function<bool(const std::string&)>& pred);
  void freeze_all();

  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;
  const std::map<std::string, Param>& items() const { return params_; }

  bool bit_equal(const ParamStore& other) const;

 private:
  std::map<std::string, Param> params_;
};

using NamedGrads = std::map<std::string, Tensor>;

// Parameters of a ParamStore placed on a tape. Trainable parameters become
// gradient leaves, everything else constants, unless `all_constant`.
template <class T>
class ParamBinding {
 public:
  ParamBinding(BasicTape<T>& tape, const ParamStore& store, bool all_constant = false);

  BasicVar<T> operator[](const std::string& name) const;
  // Substitutes the variable used for `name` (e.g. a probe in gradient checks).
  void rebind(const std::string& name, BasicVar<T> var);
  bool has(const std::string& name) const { return vars_.count(name) != 0; }
  BasicTape<T>& tape() const { return *tape_; }

  // Maps tape gradients back to parameter names (trainable leaves only).
  std::map<std::string, BasicTensor<T>> named(const Gradients<T>& grads) const;

 private:
  BasicTape<T>* tape_;
  std::map<std::string, BasicVar<T>> vars_;
  std::vector<std::string> leaves_;
};

// Casts a double-precision gradient map back to storage precision.
NamedGrads to_float(const std::map<std::string, Tensor64>& grads);

}  // namespace dflow
