// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/params.hpp"

#include <stdexcept>

namespace dflow {

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (!params_.emplace(name, Param{std::move(value), trainable}).second) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.trainable;
}

void ParamStore::set(const std::string& name, Tensor value) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  if (it->second.value.shape() != value.shape()) {
    throw ShapeError("parameter " + name + " shape change " + shape_str(it->second.value.shape()) +
                     " -> " + shape_str(value.shape()));
  }
  it->second.value = std::move(value);
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  it->second.trainable = trainable;
}

void ParamStore::set_trainable_if(const std::function<bool(const std::string&)>& pred) {
  for (auto& [name, p] : params_) p.trainable = pred(name);
}

void ParamStore::freeze_all() {
  for (auto& [name, p] : params_) p.trainable = false;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

bool ParamStore::bit_equal(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto a = params_.begin();
  auto b = other.params_.begin();
  for (; a != params_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.value.bit_equal(b->second.value)) return false;
  }
  return true;
}

template <class T>
ParamBinding<T>::ParamBinding(BasicTape<T>& tape, const ParamStore& store, bool all_constant)
    : tape_(&tape) {
  for (const auto& [name, p] : store.items()) {
    BasicTensor<T> v;
    if constexpr (std::is_same_v<T, float>) {
      v = p.value;
    } else {
      v = p.value.template cast<T>();
    }
    if (p.trainable && !all_constant) {
      vars_.emplace(name, tape.leaf(std::move(v)));
      leaves_.push_back(name);
    } else {
      vars_.emplace(name, tape.constant(std::move(v)));
    }
  }
}

template <class T>
BasicVar<T> ParamBinding<T>::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("parameter not bound: " + name);
  return it->second;
}

template <class T>
void ParamBinding<T>::rebind(const std::string& name, BasicVar<T> var) {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("parameter not bound: " + name);
  if (var.shape() != it->second.shape()) throw ShapeError("rebind shape mismatch for " + name);
  it->second = var;
}

template <class T>
std::map<std::string, BasicTensor<T>> ParamBinding<T>::named(const Gradients<T>& grads) const {
  std::map<std::string, BasicTensor<T>> out;
  for (const auto& name : leaves_) {
    auto it = grads.find(vars_.at(name).id);
    if (it != grads.end()) out.emplace(name, it->second);
  }
  return out;
}

template class ParamBinding<float>;
template class ParamBinding<double>;

NamedGrads to_float(const std::map<std::string, Tensor64>& grads) {
  NamedGrads out;
  for (const auto& [name, g] : grads) out.emplace(name, g.cast<float>());
  return out;
}

}  // namespace dflow
