// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dflow/autodiff.hpp"

// Differentiable primitives. Unless noted, 2-D operands are read as
// [rows x cols] with cols = product of trailing extents.
namespace dflow::ops {

template <class T> using V = BasicVar<T>;
template <class T> using TT = BasicTensor<T>;

template <class T> V<T> add(V<T> a, V<T> b);
template <class T> V<T> sub(V<T> a, V<T> b);
template <class T> V<T> mul(V<T> a, V<T> b);  // elementwise
template <class T> V<T> scale(V<T> a, T s);
// a[m x n] + b[n] broadcast over rows.
template <class T> V<T> add_row(V<T> a, V<T> b);
// Multiplies row i of a[m x n] by s[i].
template <class T> V<T> scale_rows(V<T> a, std::span<const T> s);

// a[m x k] . b[k x n]
template <class T> V<T> matmul(V<T> a, V<T> b);
// a[m x k] . b[n x k]^T
template <class T> V<T> matmul_nt(V<T> a, V<T> b);

template <class T> V<T> tanh(V<T> a);
template <class T> V<T> silu(V<T> a);
template <class T> V<T> relu(V<T> a);

template <class T> V<T> sum(V<T> a);
template <class T> V<T> mean(V<T> a);
template <class T> V<T> reshape(V<T> a, Shape shape);

// Mean over rows of -log softmax(logits)[target]. logits is [B x K] (or [K]
// for a single row); targets has B entries.
template <class T> V<T> softmax_cross_entropy(V<T> logits, std::span<const int> targets);
inline V<float> softmax_cross_entropy(V<float> logits, int target) {
  return softmax_cross_entropy<float>(logits, std::span<const int>(&target, 1));
}

// Elementwise min(max(x, lo), hi). Gradient passes only where lo < x < hi;
// clipped coordinates (including exact ties) receive exactly zero.
template <class T> V<T> clip_box(V<T> x, const TT<T>& lo, const TT<T>& hi);

// [a; b] stacked along rows; both must have the same row width.
template <class T> V<T> concat_rows(V<T> a, V<T> b);
// Rows table[idx[i]] stacked into [n x d]; gradient scatters back.
template <class T> V<T> gather_rows(V<T> table, std::span<const int> idx);

// For each query row b, attends over the `rows_per_query` consecutive rows
// b*R .. b*R+R-1 of keys/values: softmax(q k^T / sqrt(d)) v.
// q: [B x d], k, v: [B*R x d] -> [B x d].
template <class T> V<T> grouped_attention(V<T> q, V<T> k, V<T> v, std::size_t rows_per_query);
// Attention weights of grouped_attention, [B x R]; not differentiable.
template <class T>
TT<T> attention_weights(const TT<T>& q, const TT<T>& k, std::size_t rows_per_query);

struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 3;  // odd; "same" zero padding, stride 1
};
// x: [B x Cin*H*W], w: [Cout x Cin*k*k], b: [Cout] -> [B x Cout*H*W]
template <class T> V<T> conv2d(V<T> x, V<T> w, V<T> b, const ConvGeometry& g);
// 2x2 average pool; x: [B x C*H*W] with even H, W.
template <class T> V<T> avgpool2(V<T> x, std::size_t channels, std::size_t height, std::size_t width);

}  // namespace dflow::ops

namespace dflow::kernels {
// C (+)= op(A) . op(B) with op(A): [m x k], op(B): [k x n]; products are
// accumulated in double.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);
}  // namespace dflow::kernels
