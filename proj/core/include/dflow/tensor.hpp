// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dflow/errors.hpp"

namespace dflow {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape);

// Immutable dense row-major array. Copies share storage. Every constructor
// rejects non-finite values, so any op producing NaN/Inf fails at its
// boundary instead of propagating.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : BasicTensor(Shape{}, std::vector<T>{T(0)}) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape_));
    }
    if (shape_numel(shape_) != data.size()) {
      throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) {
        throw NonFiniteError("non-finite value at flat index " + std::to_string(i) +
                             " in tensor of shape " + shape_str(shape_));
      }
    }
    data_ = std::make_shared<const std::vector<T>>(std::move(data));
  }

  static BasicTensor full(Shape shape, T value) {
    std::vector<T> d(shape_numel(shape), value);
    return BasicTensor(std::move(shape), std::move(d));
  }
  static BasicTensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t rows() const { return shape_.size() >= 1 ? shape_[0] : 1; }
  // Product of all trailing extents; the row width of a 2-D view.
  std::size_t cols() const { return shape_.empty() ? 1 : size() / shape_[0]; }

  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  const std::vector<T>& vec() const { return *data_; }
  T operator[](std::size_t i) const { return (*data_)[i]; }
  T at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    BasicTensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  // Row slice [begin, end) along the leading axis.
  BasicTensor slice_rows(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > rows()) throw ShapeError("bad row slice");
    const std::size_t w = cols();
    Shape s = shape_.empty() ? Shape{1} : shape_;
    s[0] = end - begin;
    return BasicTensor(std::move(s), std::vector<T>(data_->begin() + begin * w,
                                                    data_->begin() + end * w));
  }

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_->begin(), data_->end()));
  }

  bool bit_equal(const BasicTensor& other) const {
    return shape_ == other.shape_ && *data_ == *other.data_;
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Stacks equally shaped rows into a [n x cols] tensor.
template <class T>
BasicTensor<T> stack_rows(std::span<const BasicTensor<T>> rows) {
  if (rows.empty()) throw ShapeError("stack_rows on empty list");
  const std::size_t w = rows.front().size();
  std::vector<T> d;
  d.reserve(w * rows.size());
  for (const auto& r : rows) {
    if (r.size() != w) throw ShapeError("stack_rows: ragged rows");
    d.insert(d.end(), r.data().begin(), r.data().end());
  }
  return BasicTensor<T>(Shape{rows.size(), w}, std::move(d));
}

template <class T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dflow
