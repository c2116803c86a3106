// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dflow/attack.hpp"
#include "dflow/data.hpp"
#include "dflow/models.hpp"

namespace dflow {

// ---- success rates -----------------------------------------------------------------

struct VictimAsr {
  std::string name;
  bool white_box = false;
  std::vector<double> per_class;  // NaN for classes without samples
  std::vector<std::size_t> per_class_count;
  double mean = 0.0;  // over the classes that have samples
};

struct EvalReport {
  std::size_t num_classes = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::vector<VictimAsr> victims;

  // Mean ASR over the black-box victims; NaN when there are none.
  double black_box_mean() const;
};

VictimAsr compute_asr(const Classifier& f, std::span<const AdvSample> samples, const std::string& name = "victim",
                      bool white_box = true);

struct Victim {
  std::string name;
  const Classifier* model = nullptr;
  bool white_box = false;
};

// Exactly one victim must be marked white-box (the attack source).
EvalReport evaluate_victims(std::span<const Victim> victims, std::span<const AdvSample> samples,
                            std::uint64_t seed = 0);

using AttackHandle = std::function<std::vector<AdvSample>(const Dataset&, std::span<const int>)>;
EvalReport transfer_matrix(std::span<const Victim> victims, const AttackHandle& attack, const Dataset& data,
                           std::span<const int> targets, std::uint64_t seed = 0);

// One row per report; the white-box column is starred and the trailing
// average covers black-box columns only ("-" when empty).
std::string format_transfer_table(std::span<const EvalReport> rows, std::span<const std::string> row_labels);

// ---- defenses ----------------------------------------------------------------------

struct DefenseSpec {
  enum class Kind { none, gaussian, median, quantize };
  Kind kind = Kind::none;
  double sigma = 0.0;
  std::size_t window = 1;
  std::size_t levels = 256;

  void validate() const;
  std::string label() const;
  // "none", "gaussian:<sigma>", "median:<window>", "quantize:<levels>"
  static DefenseSpec parse(const std::string& s);
};

// x is one image (H*W values) or a batch [B x H*W]. Output has the same
// shape, values in [0, 1].
Tensor apply_defense(const Tensor& x, std::size_t height, std::size_t width, const DefenseSpec& spec);
std::vector<AdvSample> defend(std::span<const AdvSample> samples, std::size_t height, std::size_t width,
                              const DefenseSpec& spec);

// Mirror index into [0, n) without repeating the edge sample.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

// ---- statistics ----------------------------------------------------------------------

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
};

// mean +- z * s / sqrt(k), s the sample standard deviation.
ConfidenceInterval split_confidence_interval(std::span<const double> values, double z = 1.96);
// Samples are grouped by source image (index i mod num_images) into k
// contiguous, disjoint image ranges.
std::vector<double> split_asr(const Classifier& f, std::span<const AdvSample> samples, std::size_t num_images,
                              std::size_t k = 5);
std::string format_ci(const ConfidenceInterval& ci, double scale = 100.0, int precision = 2);

// ---- perturbation-only classification -------------------------------------------------

// Affine map of delta to [0, 1] (min -> 0, max -> 1); constant delta -> 0.5.
Tensor scale_perturbation(const Tensor& delta);
double perturbation_asr(const Classifier& f, std::span<const AdvSample> samples);

// ---- image dumps ------------------------------------------------------------------------

// Round half away from zero of clamp(v, 0, 1) * 255.
std::uint8_t to_gray(float v);
void write_pgm(const std::filesystem::path& path, const Tensor& image, std::size_t height, std::size_t width);

struct PgmImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};
PgmImage read_pgm(const std::filesystem::path& path);

// <dir>/<stem>_pre.pgm, <stem>_adv.pgm, <stem>_delta.pgm
std::array<std::filesystem::path, 3> emit_visualization(const AdvSample& sample, std::size_t height,
                                                        std::size_t width, const std::filesystem::path& dir,
                                                        const std::string& stem);

}  // namespace dflow
