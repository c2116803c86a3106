// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "binio.hpp"

namespace dflow {

Tensor Dataset::row(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("dataset index");
  return images.slice_rows(i, i + 1);
}

Tensor Dataset::rows(std::span<const std::size_t> idx) const {
  const std::size_t d = dim();
  std::vector<float> out;
  out.reserve(idx.size() * d);
  for (std::size_t i : idx) {
    if (i >= size()) throw std::out_of_range("dataset index");
    const float* p = images.data().data() + i * d;
    out.insert(out.end(), p, p + d);
  }
  return Tensor({idx.size(), d}, std::move(out));
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset s = *this;
  s.images = rows(idx);
  s.labels.clear();
  for (std::size_t i : idx) s.labels.push_back(labels[i]);
  return s;
}

const char* shape_class_name(int c) {
  static const char* names[] = {"filled-square", "hollow-square", "disk",     "ring",
                                "plus",          "x-cross",       "h-stripes", "v-stripes"};
  if (c < 0 || c >= static_cast<int>(kShapeClasses)) throw std::out_of_range("shape class");
  return names[c];
}

namespace {

std::vector<int> balanced_labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

bool shape_pixel(int cls, float dx, float dy, float s, int px, int py, int period, int phase) {
  const float ax = std::fabs(dx), ay = std::fabs(dy);
  const float cheb = std::max(ax, ay);
  const float r = std::sqrt(dx * dx + dy * dy);
  constexpr float thick = 1.5f, arm = 0.9f;
  switch (cls) {
    case 0: return cheb <= s;
    case 1: return cheb <= s && cheb > s - thick;
    case 2: return r <= s;
    case 3: return r <= s && r > s - thick;
    case 4: return (ax <= arm && ay <= s) || (ay <= arm && ax <= s);
    case 5: return std::fabs(ax - ay) <= arm && cheb <= s;
    case 6: return cheb <= s && ((py + phase) % period) < period / 2;
    case 7: return cheb <= s && ((px + phase) % period) < period / 2;
    default: throw std::logic_error("shape class");
  }
}

}  // namespace

Dataset generate_shapes(std::uint64_t seed, std::size_t n) {
  const std::size_t k = kShapeClasses, side = kShapeSide;
  if (n < k) throw std::invalid_argument("generate_shapes: n must be >= number of classes");
  std::mt19937_64 rng(seed);
  Dataset d;
  d.kind = DatasetKind::shapes;
  d.seed = seed;
  d.num_classes = k;
  d.height = side;
  d.width = side;
  d.labels = balanced_labels(n, k, rng);

  std::uniform_real_distribution<float> center(6.0f, 10.0f);
  std::uniform_real_distribution<float> half(3.0f, 5.5f);
  std::uniform_real_distribution<float> fg(0.3f, 0.5f);
  std::uniform_real_distribution<float> bg(0.1f, 0.2f);
  std::uniform_int_distribution<int> period_dist(3, 4);
  std::normal_distribution<float> noise(0.0f, 0.02f);

  std::vector<float> px(n * side * side);
  for (std::size_t i = 0; i < n; ++i) {
    const float cx = center(rng), cy = center(rng), s = half(rng);
    const float a = fg(rng), b = bg(rng);
    const int period = period_dist(rng);
    const int phase = std::uniform_int_distribution<int>(0, period - 1)(rng);
    float* img = px.data() + i * side * side;
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const float dx = static_cast<float>(x) + 0.5f - cx;
        const float dy = static_cast<float>(y) + 0.5f - cy;
        const bool on = shape_pixel(d.labels[i], dx, dy, s, static_cast<int>(x), static_cast<int>(y),
                                    period, phase);
        const float v = (on ? a : b) + noise(rng);
        img[y * side + x] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  d.images = Tensor({n, side * side}, std::move(px));
  return d;
}

Dataset generate_gmm2d(std::uint64_t seed, std::size_t n, std::size_t k, float radius, float stddev) {
  if (k < 2) throw std::invalid_argument("generate_gmm2d: need at least two components");
  if (n < k) throw std::invalid_argument("generate_gmm2d: n must be >= K");
  if (!(stddev >= 0.0f)) throw std::invalid_argument("generate_gmm2d: negative stddev");
  std::mt19937_64 rng(seed);
  Dataset d;
  d.kind = DatasetKind::gmm2d;
  d.seed = seed;
  d.num_classes = k;
  d.height = 1;
  d.width = 2;
  d.labels = balanced_labels(n, k, rng);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  std::vector<float> pts(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ang = 2.0 * std::numbers::pi * d.labels[i] / static_cast<double>(k);
    pts[2 * i] = static_cast<float>(radius * std::cos(ang)) + stddev * noise(rng);
    pts[2 * i + 1] = static_cast<float>(radius * std::sin(ang)) + stddev * noise(rng);
  }
  d.images = Tensor({n, 2}, std::move(pts));
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, float holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0f && holdout_fraction < 1.0f)) {
    throw std::invalid_argument("split fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_hold = static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<float>(d.size())));
  if (n_hold == 0 || n_hold >= d.size()) throw std::invalid_argument("split leaves an empty side");
  std::vector<std::size_t> hold(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> keep(perm.begin() + static_cast<std::ptrdiff_t>(n_hold), perm.end());
  return {d.subset(keep), d.subset(hold)};
}

std::vector<Dataset> partition(const Dataset& d, std::size_t k) {
  if (k == 0 || k > d.size()) throw std::invalid_argument("partition: bad split count");
  std::vector<Dataset> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t end = (d.size() * (i + 1)) / k;
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    out.push_back(d.subset(idx));
    start = end;
  }
  return out;
}

namespace {
constexpr char kDatasetMagic[4] = {'D', 'F', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  binio::Writer w;
  w.put_bytes(kDatasetMagic, 4);
  w.put(kDatasetVersion);
  w.put(static_cast<std::uint32_t>(d.kind));
  w.put(d.seed);
  w.put(static_cast<std::uint64_t>(d.size()));
  w.put(static_cast<std::uint32_t>(d.num_classes));
  w.put(static_cast<std::uint32_t>(d.height));
  w.put(static_cast<std::uint32_t>(d.width));
  for (float v : d.images.data()) w.put_f32(v);
  for (int l : d.labels) w.put(static_cast<std::uint8_t>(l));
  binio::write_file(path, w.bytes());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const std::vector<char> bytes = binio::read_file(path);
  binio::Reader r(bytes);
  try {
    char magic[4];
    r.get_bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kDatasetMagic)) throw std::runtime_error("not a dataset cache");
    if (r.get<std::uint32_t>() != kDatasetVersion) throw std::runtime_error("dataset cache version");
    Dataset d;
    d.kind = static_cast<DatasetKind>(r.get<std::uint32_t>());
    d.seed = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    d.num_classes = r.get<std::uint32_t>();
    d.height = r.get<std::uint32_t>();
    d.width = r.get<std::uint32_t>();
    if (n == 0 || d.dim() == 0 || r.remaining() != n * d.dim() * 4 + n) {
      throw std::runtime_error("dataset cache size mismatch");
    }
    std::vector<float> px(n * d.dim());
    for (float& v : px) v = r.get_f32();
    d.images = Tensor({static_cast<std::size_t>(n), d.dim()}, std::move(px));
    for (std::uint64_t i = 0; i < n; ++i) {
      const int l = r.get<std::uint8_t>();
      if (l >= static_cast<int>(d.num_classes)) throw std::runtime_error("dataset label out of range");
      d.labels.push_back(l);
    }
    return d;
  } catch (const binio::Truncated&) {
    throw std::runtime_error("dataset cache truncated: " + path.string());
  }
}

}  // namespace dflow
