// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dflow/data.hpp"
#include "dflow/models.hpp"

namespace dflow {

// ---- Morse flow construction -------------------------------------------------------

using Point = std::vector<double>;

struct Interval {
  double lo = -1.0;
  double hi = 1.0;
};

// Objective j on an open box with isolated critical points. Each critical
// point p_i owns a cutoff ball: the bump rho_i is 1 for |x - p_i| <= inner_i
// and 0 for |x - p_i| >= outer_i.
struct MorseProblem {
  std::string name;
  std::vector<Interval> box;
  std::function<double(std::span<const double>)> j;
  std::function<void(std::span<const double>, std::span<double>)> grad;
  std::vector<Point> critical;
  std::vector<double> inner;
  std::vector<double> outer;
  int m = 3;

  std::size_t dim() const { return box.size(); }
  // Throws on interior/overlap/exponent violations.
  void validate() const;
};

// "bowl" (-|x|^2), "tilted" (anisotropic shifted quadratic), "bumps" (two
// gaussian bumps; two maxima and a saddle), plus "bowl1d".
MorseProblem builtin_morse_problem(const std::string& name);
std::vector<std::string> builtin_morse_names();

double box_distance(std::span<const double> x, std::span<const Interval> box);
// f(dist(x, boundary)) with f(r) = r below 0.1 * min half-width, smoothly
// saturating at twice that value.
double mu_defining(std::span<const double> x, std::span<const Interval> box);
// Smooth step: 1 for s <= 0, 0 for s >= 1, built from exp(-1/u).
double bump_profile(double s);
double cutoff_eta(std::span<const double> x, const MorseProblem& p);
// eta * mu^m * grad j
Point morse_field(const MorseProblem& p, std::span<const double> x);

struct MorseReport {
  std::size_t trajectories = 0;
  std::size_t steps = 0;
  double monotone_fraction = 0.0;
  double strict_increase_fraction = 0.0;
  double min_mu = 0.0;
  double min_endpoint_distance = 0.0;
  double min_abs_det = 0.0;
  double max_abs_det = 0.0;
  double min_delta_j = 0.0;
};

struct MorseCheckConfig {
  std::size_t grid = 21;
  double flow_time = 0.5;
  double step = 0.0;  // 0: flow_time / 200
  double tol = 1e-9;
  double fd_step = 1e-5;
};

// RK4 flow of the constructed field for `flow_time`, h = step.
Point morse_flow(const MorseProblem& p, std::span<const double> x0, double flow_time, double step,
                 std::vector<Point>* path = nullptr);
std::vector<Point> morse_grid(const MorseProblem& p, std::size_t per_axis);
MorseReport verify_morse_flow(const MorseProblem& p, const MorseCheckConfig& cfg);

// ---- cascading improvement ---------------------------------------------------------

struct CascadeCheckConfig {
  std::size_t samples = 200;
  float tau = 0.25f;
  float t = 0.25f;
  float delta = 0.25f / 64.0f;
  double lr = 1e-4;
  double tol = 0.0;
  bool require_smooth = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CascadeReport {
  std::size_t samples = 0;
  double improvement_fraction = 0.0;
  double mean_delta_ce = 0.0;
  std::vector<double> delta_ce;
};

// Per sample: forward to tau with v_phi, reverse to t with v_theta, take a
// gradient step on CE(f(x0_hat)) at t, then compare CE at t - delta with the
// old and the updated parameters on the shared state x_{t-delta}. Runs in
// double precision without the budget clip.
CascadeReport verify_cascade(const VelocityModel& model, const Classifier& f, const Dataset& data,
                             const CascadeCheckConfig& cfg);

}  // namespace dflow
