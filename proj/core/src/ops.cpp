// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dflow {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace kernels {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  std::vector<T> at;
  std::vector<T> bt;
  if (trans_a) {
    at.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
    a = at.data();
  }
  if (trans_b) {
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    b = bt.data();
  }
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const T* bp = b + p * n;
      double* r = row.data();
      for (std::size_t j = 0; j < n; ++j) r[j] += av * static_cast<double>(bp[j]);
    }
    T* ci = c + i * n;
    if (accumulate) {
      for (std::size_t j = 0; j < n; ++j) ci[j] = static_cast<T>(ci[j] + row[j]);
    } else {
      for (std::size_t j = 0; j < n; ++j) ci[j] = static_cast<T>(row[j]);
    }
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

}  // namespace kernels

namespace ops {
namespace {

template <class T>
using Slots = std::span<std::vector<T>* const>;

template <class T>
void same_tape(V<T> a, V<T> b) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::logic_error("operands on different tapes");
}

template <class T>
void same_shape(const TT<T>& a, const TT<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

template <class T>
V<T> add(V<T> a, V<T> b) {
  same_tape(a, b);
  const TT<T> av = a.value(), bv = b.value();
  same_shape(av, bv, "add");
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->record(TT<T>(av.shape(), std::move(out)), {a.id, b.id},
                        [](const std::vector<T>& g, Slots<T> s) {
                          for (auto* slot : s) {
                            if (!slot) continue;
                            for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
                          }
                        });
}

template <class T>
V<T> sub(V<T> a, V<T> b) {
  same_tape(a, b);
  const TT<T> av = a.value(), bv = b.value();
  same_shape(av, bv, "sub");
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape->record(TT<T>(av.shape(), std::move(out)), {a.id, b.id},
                        [](const std::vector<T>& g, Slots<T> s) {
                          if (s[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i];
                          if (s[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*s[1])[i] -= g[i];
                        });
}

template <class T>
V<T> mul(V<T> a, V<T> b) {
  same_tape(a, b);
  const TT<T> av = a.value(), bv = b.value();
  same_shape(av, bv, "mul");
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record(TT<T>(av.shape(), std::move(out)), {a.id, b.id},
                        [av, bv](const std::vector<T>& g, Slots<T> s) {
                          if (s[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i] * bv[i];
                          if (s[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*s[1])[i] += g[i] * av[i];
                        });
}

template <class T>
V<T> scale(V<T> a, T factor) {
  const TT<T> av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.tape->record(TT<T>(av.shape(), std::move(out)), {a.id},
                        [factor](const std::vector<T>& g, Slots<T> s) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i] * factor;
                        });
}

template <class T>
V<T> add_row(V<T> a, V<T> b) {
  same_tape(a, b);
  const TT<T> av = a.value(), bv = b.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (bv.size() != n) {
    throw ShapeError("add_row: row vector " + shape_str(bv.shape()) + " vs " + shape_str(av.shape()));
  }
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
  return a.tape->record(TT<T>(av.shape(), std::move(out)), {a.id, b.id},
                        [m, n](const std::vector<T>& g, Slots<T> s) {
                          if (s[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i];
                          if (s[1]) {
                            for (std::size_t j = 0; j < n; ++j) {
                              double acc = 0.0;
                              for (std::size_t i = 0; i < m; ++i) acc += g[i * n + j];
                              (*s[1])[j] += static_cast<T>(acc);
                            }
                          }
                        });
}

template <class T>
V<T> scale_rows(V<T> a, std::span<const T> factors) {
  const TT<T> av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (factors.size() != m) throw ShapeError("scale_rows: factor count does not match rows");
  std::vector<T> f(factors.begin(), factors.end());
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] * f[i];
  return a.tape->record(TT<T>(av.shape(), std::move(out)), {a.id},
                        [f, n](const std::vector<T>& g, Slots<T> s) {
                          for (std::size_t i = 0; i < f.size(); ++i)
                            for (std::size_t j = 0; j < n; ++j) (*s[0])[i * n + j] += g[i * n + j] * f[i];
                        });
}

template <class T>
V<T> matmul(V<T> a, V<T> b) {
  same_tape(a, b);
  const TT<T> av = a.value(), bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: " + shape_str(av.shape()) + " . " + shape_str(bv.shape()));
  }
  std::vector<T> out(m * n);
  kernels::gemm(false, false, m, n, k, av.data().data(), bv.data().data(), out.data(), false);
  return a.tape->record(
      TT<T>(Shape{m, n}, std::move(out)), {a.id, b.id},
      [av, bv, m, n, k](const std::vector<T>& g, Slots<T> s) {
        // dA = G . B^T, dB = A^T . G
        if (s[0]) kernels::gemm(false, true, m, k, n, g.data(), bv.data().data(), s[0]->data(), true);
        if (s[1]) kernels::gemm(true, false, k, n, m, av.data().data(), g.data(), s[1]->data(), true);
      });
}

template <class T>
V<T> matmul_nt(V<T> a, V<T> b) {
  same_tape(a, b);
  const TT<T> av = a.value(), bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw ShapeError("matmul_nt: " + shape_str(av.shape()) + " . " + shape_str(bv.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  kernels::gemm(false, true, m, n, k, av.data().data(), bv.data().data(), out.data(), false);
  return a.tape->record(
      TT<T>(Shape{m, n}, std::move(out)), {a.id, b.id},
      [av, bv, m, n, k](const std::vector<T>& g, Slots<T> s) {
        // C = A B^T: dA = G . B, dB = G^T . A
        if (s[0]) kernels::gemm(false, false, m, k, n, g.data(), bv.data().data(), s[0]->data(), true);
        if (s[1]) kernels::gemm(true, false, n, k, m, g.data(), av.data().data(), s[1]->data(), true);
      });
}

template <class T>
V<T> tanh(V<T> a) {
  const TT<T> av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  TT<T> y(av.shape(), std::move(out));
  return a.tape->record(y, {a.id}, [y](const std::vector<T>& g, Slots<T> s) {
    for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <class T>
V<T> silu(V<T> a) {
  const TT<T> av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / (T(1) + std::exp(-av[i]));
  return a.tape->record(TT<T>(av.shape(), std::move(out)), {a.id},
                        [av](const std::vector<T>& g, Slots<T> s) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T sg = T(1) / (T(1) + std::exp(-av[i]));
                            (*s[0])[i] += g[i] * sg * (T(1) + av[i] * (T(1) - sg));
                          }
                        });
}

template <class T>
V<T> relu(V<T> a) {
  const TT<T> av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
  return a.tape->record(TT<T>(av.shape(), std::move(out)), {a.id},
                        [av](const std::vector<T>& g, Slots<T> s) {
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (av[i] > T(0)) (*s[0])[i] += g[i];
                        });
}

template <class T>
V<T> sum(V<T> a) {
  const TT<T> av = a.value();
  double acc = 0.0;
  for (T x : av.data()) acc += x;
  return a.tape->record(TT<T>::scalar(static_cast<T>(acc)), {a.id},
                        [](const std::vector<T>& g, Slots<T> s) {
                          for (auto& x : *s[0]) x += g[0];
                        });
}

template <class T>
V<T> mean(V<T> a) {
  const TT<T> av = a.value();
  double acc = 0.0;
  for (T x : av.data()) acc += x;
  const double n = static_cast<double>(av.size());
  return a.tape->record(TT<T>::scalar(static_cast<T>(acc / n)), {a.id},
                        [n](const std::vector<T>& g, Slots<T> s) {
                          const T gi = static_cast<T>(g[0] / n);
                          for (auto& x : *s[0]) x += gi;
                        });
}

template <class T>
V<T> reshape(V<T> a, Shape shape) {
  return a.tape->record(a.value().reshaped(std::move(shape)), {a.id},
                        [](const std::vector<T>& g, Slots<T> s) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i];
                        });
}

template <class T>
V<T> softmax_cross_entropy(V<T> logits, std::span<const int> targets) {
  const TT<T> lv = logits.value();
  const std::size_t b = lv.ndim() <= 1 ? 1 : lv.rows();
  const std::size_t k = lv.size() / b;
  if (k < 2) throw ShapeError("softmax_cross_entropy needs at least 2 classes");
  if (targets.size() != b) throw ShapeError("softmax_cross_entropy: one target per row required");
  std::vector<T> probs(lv.size());
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw std::out_of_range("target class " + std::to_string(t) + " outside [0, " +
                              std::to_string(k) + ")");
    }
    const T* z = lv.data().data() + r * k;
    const double mx = *std::max_element(z, z + k);
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(static_cast<double>(z[j]) - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < k; ++j)
      probs[r * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j]) - lse));
    total += lse - static_cast<double>(z[t]);
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape->record(
      TT<T>::scalar(static_cast<T>(total / static_cast<double>(b))), {logits.id},
      [probs, tg, b, k](const std::vector<T>& g, Slots<T> s) {
        const T scale = static_cast<T>(g[0] / static_cast<double>(b));
        for (std::size_t r = 0; r < b; ++r) {
          for (std::size_t j = 0; j < k; ++j) {
            const T onehot = static_cast<int>(j) == tg[r] ? T(1) : T(0);
            (*s[0])[r * k + j] += scale * (probs[r * k + j] - onehot);
          }
        }
      });
}

template <class T>
V<T> clip_box(V<T> x, const TT<T>& lo, const TT<T>& hi) {
  const TT<T> xv = x.value();
  same_shape(xv, lo, "clip_box");
  same_shape(xv, hi, "clip_box");
  std::vector<T> out(xv.size());
  std::vector<unsigned char> pass(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (lo[i] > hi[i]) {
      throw std::invalid_argument("clip_box: lo > hi at flat index " + std::to_string(i));
    }
    out[i] = std::min(std::max(xv[i], lo[i]), hi[i]);
    pass[i] = (lo[i] < xv[i] && xv[i] < hi[i]) ? 1 : 0;
  }
  return x.tape->record(TT<T>(xv.shape(), std::move(out)), {x.id},
                        [pass](const std::vector<T>& g, Slots<T> s) {
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (pass[i]) (*s[0])[i] += g[i];
                        });
}

template <class T>
V<T> concat_rows(V<T> a, V<T> b) {
  same_tape(a, b);
  const TT<T> av = a.value(), bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ShapeError("concat_rows: " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  std::vector<T> out(av.data().begin(), av.data().end());
  out.insert(out.end(), bv.data().begin(), bv.data().end());
  const std::size_t na = av.size();
  return a.tape->record(TT<T>(Shape{av.rows() + bv.rows(), av.cols()}, std::move(out)), {a.id, b.id},
                        [na](const std::vector<T>& g, Slots<T> s) {
                          if (s[0])
                            for (std::size_t i = 0; i < na; ++i) (*s[0])[i] += g[i];
                          if (s[1])
                            for (std::size_t i = na; i < g.size(); ++i) (*s[1])[i - na] += g[i];
                        });
}

template <class T>
V<T> gather_rows(V<T> table, std::span<const int> idx) {
  const TT<T> tv = table.value();
  const std::size_t r = tv.rows(), d = tv.cols();
  std::vector<int> ix(idx.begin(), idx.end());
  std::vector<T> out(ix.size() * d);
  for (std::size_t i = 0; i < ix.size(); ++i) {
    if (ix[i] < 0 || static_cast<std::size_t>(ix[i]) >= r) {
      throw std::out_of_range("gather_rows: row index " + std::to_string(ix[i]));
    }
    std::copy_n(tv.data().data() + ix[i] * d, d, out.data() + i * d);
  }
  return table.tape->record(TT<T>(Shape{ix.size(), d}, std::move(out)), {table.id},
                            [ix, d](const std::vector<T>& g, Slots<T> s) {
                              for (std::size_t i = 0; i < ix.size(); ++i)
                                for (std::size_t j = 0; j < d; ++j)
                                  (*s[0])[ix[i] * d + j] += g[i * d + j];
                            });
}

template <class T>
TT<T> attention_weights(const TT<T>& q, const TT<T>& k, std::size_t rows_per_query) {
  const std::size_t b = q.rows(), d = q.cols(), r = rows_per_query;
  if (r == 0 || k.rows() != b * r || k.cols() != d) {
    throw ShapeError("attention: query " + shape_str(q.shape()) + " keys " + shape_str(k.shape()));
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<T> w(b * r);
  std::vector<double> sc(r);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < r; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c)
        acc += static_cast<double>(q[i * d + c]) * k[(i * r + j) * d + c];
      sc[j] = acc * inv;
      mx = std::max(mx, sc[j]);
    }
    double se = 0.0;
    for (std::size_t j = 0; j < r; ++j) se += (sc[j] = std::exp(sc[j] - mx));
    for (std::size_t j = 0; j < r; ++j) w[i * r + j] = static_cast<T>(sc[j] / se);
  }
  return TT<T>(Shape{b, r}, std::move(w));
}

template <class T>
V<T> grouped_attention(V<T> q, V<T> k, V<T> v, std::size_t rows_per_query) {
  same_tape(q, k);
  same_tape(q, v);
  const TT<T> qv = q.value(), kv = k.value(), vv = v.value();
  const std::size_t b = qv.rows(), d = qv.cols(), r = rows_per_query;
  same_shape(kv, vv, "grouped_attention");
  const TT<T> w = attention_weights(qv, kv, r);
  std::vector<T> out(b * d, T(0));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      const T a = w[i * r + j];
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += a * vv[(i * r + j) * d + c];
    }
  const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  return q.tape->record(
      TT<T>(Shape{b, d}, std::move(out)), {q.id, k.id, v.id},
      [qv, kv, vv, w, b, d, r, inv](const std::vector<T>& g, Slots<T> s) {
        std::vector<double> da(r), ds(r);
        for (std::size_t i = 0; i < b; ++i) {
          const T* gi = g.data() + i * d;
          double dot = 0.0;
          for (std::size_t j = 0; j < r; ++j) {
            const std::size_t row = (i * r + j) * d;
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(gi[c]) * vv[row + c];
            da[j] = acc;
            dot += static_cast<double>(w[i * r + j]) * acc;
            if (s[2])
              for (std::size_t c = 0; c < d; ++c) (*s[2])[row + c] += w[i * r + j] * gi[c];
          }
          for (std::size_t j = 0; j < r; ++j) ds[j] = w[i * r + j] * (da[j] - dot) * inv;
          for (std::size_t j = 0; j < r; ++j) {
            const std::size_t row = (i * r + j) * d;
            const T dsj = static_cast<T>(ds[j]);
            if (s[0])
              for (std::size_t c = 0; c < d; ++c) (*s[0])[i * d + c] += dsj * kv[row + c];
            if (s[1])
              for (std::size_t c = 0; c < d; ++c) (*s[1])[row + c] += dsj * qv[i * d + c];
          }
        }
      });
}

namespace {

// cols: [Cin*k*k x H*W] for one image.
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const long h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  const long kk = static_cast<long>(g.kernel), half = kk / 2;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (long ky = 0; ky < kk; ++ky)
      for (long kx = 0; kx < kk; ++kx, ++row) {
        T* dst = cols + row * h * w;
        for (long y = 0; y < h; ++y)
          for (long x = 0; x < w; ++x) {
            const long sy = y + ky - half, sx = x + kx - half;
            dst[y * w + x] = (sy < 0 || sy >= h || sx < 0 || sx >= w)
                                 ? T(0)
                                 : img[(static_cast<long>(c) * h + sy) * w + sx];
          }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const long h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  const long kk = static_cast<long>(g.kernel), half = kk / 2;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (long ky = 0; ky < kk; ++ky)
      for (long kx = 0; kx < kk; ++kx, ++row) {
        const T* src = cols + row * h * w;
        for (long y = 0; y < h; ++y)
          for (long x = 0; x < w; ++x) {
            const long sy = y + ky - half, sx = x + kx - half;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            img[(static_cast<long>(c) * h + sy) * w + sx] += src[y * w + x];
          }
      }
}

}  // namespace

template <class T>
V<T> conv2d(V<T> x, V<T> wt, V<T> bias, const ConvGeometry& g) {
  same_tape(x, wt);
  same_tape(x, bias);
  const TT<T> xv = x.value(), wv = wt.value(), bv = bias.value();
  const std::size_t hw = g.height * g.width;
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;
  const std::size_t bsz = xv.rows();
  if (g.kernel % 2 == 0) throw ShapeError("conv2d: kernel must be odd");
  if (xv.cols() != g.in_channels * hw || wv.rows() != g.out_channels || wv.cols() != patch ||
      bv.size() != g.out_channels) {
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
  }
  std::vector<T> out(bsz * g.out_channels * hw);
  std::vector<T> cols(patch * hw);
  for (std::size_t n = 0; n < bsz; ++n) {
    im2col(xv.data().data() + n * g.in_channels * hw, g, cols.data());
    T* o = out.data() + n * g.out_channels * hw;
    kernels::gemm(false, false, g.out_channels, hw, patch, wv.data().data(), cols.data(), o, false);
    for (std::size_t c = 0; c < g.out_channels; ++c)
      for (std::size_t p = 0; p < hw; ++p) o[c * hw + p] += bv[c];
  }
  return x.tape->record(
      TT<T>(Shape{bsz, g.out_channels * hw}, std::move(out)), {x.id, wt.id, bias.id},
      [xv, wv, g, hw, patch, bsz](const std::vector<T>& grad, Slots<T> s) {
        std::vector<T> cols(patch * hw);
        for (std::size_t n = 0; n < bsz; ++n) {
          const T* gn = grad.data() + n * g.out_channels * hw;
          if (s[1]) {
            im2col(xv.data().data() + n * g.in_channels * hw, g, cols.data());
            kernels::gemm(false, true, g.out_channels, patch, hw, gn, cols.data(), s[1]->data(), true);
          }
          if (s[2]) {
            for (std::size_t c = 0; c < g.out_channels; ++c) {
              double acc = 0.0;
              for (std::size_t p = 0; p < hw; ++p) acc += gn[c * hw + p];
              (*s[2])[c] += static_cast<T>(acc);
            }
          }
          if (s[0]) {
            kernels::gemm(true, false, patch, hw, g.out_channels, wv.data().data(), gn, cols.data(),
                          false);
            col2im_add(cols.data(), g, s[0]->data() + n * g.in_channels * hw);
          }
        }
      });
}

template <class T>
V<T> avgpool2(V<T> x, std::size_t channels, std::size_t height, std::size_t width) {
  const TT<T> xv = x.value();
  if (height % 2 || width % 2 || xv.cols() != channels * height * width) {
    throw ShapeError("avgpool2: bad geometry for " + shape_str(xv.shape()));
  }
  const std::size_t bsz = xv.rows(), oh = height / 2, ow = width / 2;
  const std::size_t in_w = channels * height * width, out_w = channels * oh * ow;
  std::vector<T> out(bsz * out_w);
  for (std::size_t n = 0; n < bsz; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T* src = xv.data().data() + n * in_w + (c * height + 2 * y) * width + 2 * xx;
          out[n * out_w + (c * oh + y) * ow + xx] =
              T(0.25) * (src[0] + src[1] + src[width] + src[width + 1]);
        }
  return x.tape->record(TT<T>(Shape{bsz, out_w}, std::move(out)), {x.id},
                        [=](const std::vector<T>& g, Slots<T> s) {
                          for (std::size_t n = 0; n < bsz; ++n)
                            for (std::size_t c = 0; c < channels; ++c)
                              for (std::size_t y = 0; y < oh; ++y)
                                for (std::size_t xx = 0; xx < ow; ++xx) {
                                  const T gv = T(0.25) * g[n * out_w + (c * oh + y) * ow + xx];
                                  T* dst = s[0]->data() + n * in_w + (c * height + 2 * y) * width + 2 * xx;
                                  dst[0] += gv;
                                  dst[1] += gv;
                                  dst[width] += gv;
                                  dst[width + 1] += gv;
                                }
                        });
}

#define DFLOW_INSTANTIATE_OPS(T)                                                             \
  template V<T> add<T>(V<T>, V<T>);                                                          \
  template V<T> sub<T>(V<T>, V<T>);                                                          \
  template V<T> mul<T>(V<T>, V<T>);                                                          \
  template V<T> scale<T>(V<T>, T);                                                           \
  template V<T> add_row<T>(V<T>, V<T>);                                                      \
  template V<T> scale_rows<T>(V<T>, std::span<const T>);                                     \
  template V<T> matmul<T>(V<T>, V<T>);                                                       \
  template V<T> matmul_nt<T>(V<T>, V<T>);                                                    \
  template V<T> tanh<T>(V<T>);                                                               \
  template V<T> silu<T>(V<T>);                                                               \
  template V<T> relu<T>(V<T>);                                                               \
  template V<T> sum<T>(V<T>);                                                                \
  template V<T> mean<T>(V<T>);                                                               \
  template V<T> reshape<T>(V<T>, Shape);                                                     \
  template V<T> softmax_cross_entropy<T>(V<T>, std::span<const int>);                        \
  template V<T> clip_box<T>(V<T>, const TT<T>&, const TT<T>&);                               \
  template V<T> concat_rows<T>(V<T>, V<T>);                                                 \
  template V<T> gather_rows<T>(V<T>, std::span<const int>);                                  \
  template V<T> grouped_attention<T>(V<T>, V<T>, V<T>, std::size_t);                         \
  template TT<T> attention_weights<T>(const TT<T>&, const TT<T>&, std::size_t);              \
  template V<T> conv2d<T>(V<T>, V<T>, V<T>, const ConvGeometry&);                            \
  template V<T> avgpool2<T>(V<T>, std::size_t, std::size_t, std::size_t);

DFLOW_INSTANTIATE_OPS(float)
DFLOW_INSTANTIATE_OPS(double)

#undef DFLOW_INSTANTIATE_OPS

}  // namespace ops
}  // namespace dflow
