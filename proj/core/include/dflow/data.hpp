// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dflow/tensor.hpp"

namespace dflow {

enum class DatasetKind : std::uint32_t { shapes = 1, gmm2d = 2 };

// Row-major samples [n x H*W] with integer labels in [0, K).
struct Dataset {
  DatasetKind kind = DatasetKind::shapes;
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return height * width; }
  Tensor row(std::size_t i) const;
  Tensor rows(std::span<const std::size_t> idx) const;
  Dataset subset(std::span<const std::size_t> idx) const;
};

inline constexpr std::size_t kShapeClasses = 8;
inline constexpr std::size_t kShapeSide = 16;
const char* shape_class_name(int c);

// 8 shape classes on a 16x16 canvas. Labels are i mod K before a seeded
// shuffle, so each class count is within one of n/K.
Dataset generate_shapes(std::uint64_t seed, std::size_t n);

// K isotropic gaussians (std `stddev`) centered on a circle of `radius`.
Dataset generate_gmm2d(std::uint64_t seed, std::size_t n, std::size_t k = 8, float radius = 2.0f,
                       float stddev = 0.3f);

// Seeded permutation split: the first ~fraction*n samples go to the second
// element (held-out), the rest to the first.
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, float holdout_fraction, std::uint64_t seed);

// Partition into `k` disjoint, nearly equal consecutive chunks.
std::vector<Dataset> partition(const Dataset& d, std::size_t k);

// Binary cache: "DFDS", version, kind, seed, n, K, H, W, f32 pixels, u8 labels.
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace dflow
