// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "dflow/errors.hpp"

namespace dflow {

namespace {

double norm2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

struct Bump {
  Point center;
  double amp;
  double width;
};

double bumps_value(const std::vector<Bump>& bs, std::span<const double> x) {
  double v = 0.0;
  for (const Bump& b : bs) {
    const double r = norm2(x, b.center);
    v += b.amp * std::exp(-r * r / (2.0 * b.width * b.width));
  }
  return v;
}

void bumps_grad(const std::vector<Bump>& bs, std::span<const double> x, std::span<double> g) {
  std::fill(g.begin(), g.end(), 0.0);
  for (const Bump& b : bs) {
    const double r = norm2(x, b.center);
    const double e = b.amp * std::exp(-r * r / (2.0 * b.width * b.width));
    for (std::size_t i = 0; i < x.size(); ++i) g[i] -= e * (x[i] - b.center[i]) / (b.width * b.width);
  }
}

// Newton iteration on grad j with a finite-difference Hessian (2-D).
Point newton_critical(const MorseProblem& p, Point x) {
  const std::size_t n = x.size();
  std::vector<double> g(n), gp(n), gm(n);
  for (int it = 0; it < 100; ++it) {
    p.grad(x, g);
    double gn = 0.0;
    for (double v : g) gn = std::max(gn, std::fabs(v));
    if (gn < 1e-14) break;
    std::vector<double> h(n * n);
    for (std::size_t k = 0; k < n; ++k) {
      Point xp = x, xm = x;
      xp[k] += 1e-6;
      xm[k] -= 1e-6;
      p.grad(xp, gp);
      p.grad(xm, gm);
      for (std::size_t i = 0; i < n; ++i) h[i * n + k] = (gp[i] - gm[i]) / (xp[k] - xm[k]);
    }
    if (n == 1) {
      x[0] -= g[0] / h[0];
    } else {
      const double det = h[0] * h[3] - h[1] * h[2];
      x[0] -= (h[3] * g[0] - h[1] * g[1]) / det;
      x[1] -= (-h[2] * g[0] + h[0] * g[1]) / det;
    }
  }
  return x;
}

}  // namespace

void MorseProblem::validate() const {
  const std::size_t n = dim();
  if (n < 1 || n > 2) throw std::invalid_argument("Morse problems are 1-D or 2-D");
  for (const Interval& iv : box)
    if (!(iv.lo < iv.hi)) throw std::invalid_argument("empty box interval");
  if (m < static_cast<int>(n) + 1) throw std::invalid_argument("decay exponent m must be >= n + 1");
  if (!j || !grad) throw std::invalid_argument("Morse problem without objective");
  if (inner.size() != critical.size() || outer.size() != critical.size()) {
    throw std::invalid_argument("one cutoff radius pair per critical point");
  }
  std::vector<double> g(n);
  for (std::size_t i = 0; i < critical.size(); ++i) {
    if (critical[i].size() != n) throw std::invalid_argument("critical point dimension");
    if (!(0.0 < inner[i] && inner[i] < outer[i])) {
      throw std::invalid_argument("cutoff radii must satisfy 0 < inner < outer");
    }
    if (box_distance(critical[i], box) <= outer[i]) {
      throw std::invalid_argument("cutoff ball of a critical point reaches the boundary");
    }
    grad(critical[i], g);
    for (double v : g)
      if (std::fabs(v) > 1e-9) throw std::invalid_argument("listed critical point has nonzero gradient");
    for (std::size_t k = 0; k < i; ++k) {
      if (norm2(critical[i], critical[k]) <= outer[i] + outer[k]) {
        throw std::invalid_argument("cutoff supports overlap");
      }
    }
  }
}

std::vector<std::string> builtin_morse_names() { return {"bowl", "tilted", "bumps", "bowl1d"}; }

MorseProblem builtin_morse_problem(const std::string& name) {
  MorseProblem p;
  p.name = name;
  if (name == "bowl" || name == "bowl1d") {
    const std::size_t n = name == "bowl" ? 2 : 1;
    p.box.assign(n, Interval{-1.0, 1.0});
    p.j = [](std::span<const double> x) {
      double s = 0.0;
      for (double v : x) s += v * v;
      return -s;
    };
    p.grad = [](std::span<const double> x, std::span<double> g) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = -2.0 * x[i];
    };
    p.critical = {Point(n, 0.0)};
    p.inner = {0.15};
    p.outer = {0.3};
    p.m = static_cast<int>(n) + 1;
  } else if (name == "tilted") {
    p.box.assign(2, Interval{-1.0, 1.0});
    p.j = [](std::span<const double> x) {
      return -(x[0] * x[0] + 2.0 * x[1] * x[1]) + 0.6 * x[0] - 0.8 * x[1];
    };
    p.grad = [](std::span<const double> x, std::span<double> g) {
      g[0] = -2.0 * x[0] + 0.6;
      g[1] = -4.0 * x[1] - 0.8;
    };
    p.critical = {Point{0.3, -0.2}};
    p.inner = {0.15};
    p.outer = {0.3};
  } else if (name == "bumps") {
    p.box.assign(2, Interval{-1.0, 1.0});
    const std::vector<Bump> bs = {{{-0.4, 0.05}, 1.0, 0.3}, {{0.45, -0.05}, 0.8, 0.3}};
    p.j = [bs](std::span<const double> x) { return bumps_value(bs, x); };
    p.grad = [bs](std::span<const double> x, std::span<double> g) { bumps_grad(bs, x, g); };
    const Point guesses[] = {{-0.4, 0.05}, {0.45, -0.05}, {0.02, 0.0}};
    for (const Point& g0 : guesses) p.critical.push_back(newton_critical(p, g0));
    double sep = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < p.critical.size(); ++i)
      for (std::size_t k = 0; k < i; ++k) sep = std::min(sep, norm2(p.critical[i], p.critical[k]));
    p.outer.assign(p.critical.size(), 0.4 * sep);
    p.inner.assign(p.critical.size(), 0.2 * sep);
  } else {
    throw std::invalid_argument("unknown Morse problem: " + name);
  }
  p.validate();
  return p;
}

double box_distance(std::span<const double> x, std::span<const Interval> box) {
  if (x.size() != box.size()) throw ShapeError("point/box dimension mismatch");
  double r = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) r = std::min({r, x[i] - box[i].lo, box[i].hi - x[i]});
  return r;
}

double mu_defining(std::span<const double> x, std::span<const Interval> box) {
  const double r = box_distance(x, box);
  if (r < 0.0) throw std::out_of_range("mu_defining: point outside the box");
  double half = std::numeric_limits<double>::infinity();
  for (const Interval& iv : box) half = std::min(half, 0.5 * (iv.hi - iv.lo));
  const double r0 = 0.1 * half;
  if (r <= r0) return r;
  return r0 + r0 * std::tanh((r - r0) / r0);
}

double bump_profile(double s) {
  if (s <= 0.0) return 1.0;
  if (s >= 1.0) return 0.0;
  const double a = std::exp(-1.0 / (1.0 - s));
  const double b = std::exp(-1.0 / s);
  return a / (a + b);
}

double cutoff_eta(std::span<const double> x, const MorseProblem& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.critical.size(); ++i) {
    const double r = norm2(x, p.critical[i]);
    s += bump_profile((r - p.inner[i]) / (p.outer[i] - p.inner[i]));
  }
  return 1.0 - s;
}

Point morse_field(const MorseProblem& p, std::span<const double> x) {
  Point out(x.size(), 0.0);
  const double mu = mu_defining(x, p.box);
  if (mu == 0.0) return out;
  const double eta = cutoff_eta(x, p);
  if (eta == 0.0) return out;
  p.grad(x, out);
  const double scale = eta * std::pow(mu, p.m);
  for (double& v : out) v *= scale;
  return out;
}

Point morse_flow(const MorseProblem& p, std::span<const double> x0, double flow_time, double step,
                 std::vector<Point>* path) {
  if (!(flow_time >= 0.0)) throw std::invalid_argument("flow time must be >= 0");
  Point x(x0.begin(), x0.end());
  if (path) path->assign(1, x);
  if (flow_time == 0.0) return x;
  if (!(step > 0.0)) throw std::invalid_argument("integration step must be positive");
  const auto n = static_cast<std::size_t>(std::ceil(flow_time / step - 1e-9));
  const double h = flow_time / static_cast<double>(n);
  const std::size_t d = x.size();
  Point tmp(d);
  for (std::size_t s = 0; s < n; ++s) {
    const Point k1 = morse_field(p, x);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    const Point k2 = morse_field(p, tmp);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    const Point k3 = morse_field(p, tmp);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * k3[i];
    const Point k4 = morse_field(p, tmp);
    for (std::size_t i = 0; i < d; ++i) x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (box_distance(x, p.box) <= 0.0) throw std::runtime_error("Morse trajectory left the box");
    if (path) path->push_back(x);
  }
  return x;
}

std::vector<Point> morse_grid(const MorseProblem& p, std::size_t per_axis) {
  if (per_axis == 0) throw std::invalid_argument("grid needs at least one point per axis");
  auto coord = [&](std::size_t axis, std::size_t i) {
    const Interval& iv = p.box[axis];
    return iv.lo + (iv.hi - iv.lo) * static_cast<double>(i + 1) / static_cast<double>(per_axis + 1);
  };
  std::vector<Point> out;
  if (p.dim() == 1) {
    for (std::size_t i = 0; i < per_axis; ++i) out.push_back({coord(0, i)});
  } else {
    for (std::size_t i = 0; i < per_axis; ++i)
      for (std::size_t k = 0; k < per_axis; ++k) out.push_back({coord(0, i), coord(1, k)});
  }
  return out;
}

MorseReport verify_morse_flow(const MorseProblem& p, const MorseCheckConfig& cfg) {
  p.validate();
  const double step = cfg.step > 0.0 ? cfg.step : cfg.flow_time / 200.0;
  const std::vector<Point> starts = morse_grid(p, cfg.grid);
  MorseReport rep;
  rep.trajectories = starts.size();
  rep.min_mu = std::numeric_limits<double>::infinity();
  rep.min_abs_det = std::numeric_limits<double>::infinity();
  rep.max_abs_det = 0.0;
  rep.min_delta_j = std::numeric_limits<double>::infinity();
  std::size_t monotone = 0, strict = 0;
  std::vector<Point> ends;
  std::vector<Point> path;
  const std::size_t d = p.dim();
  for (const Point& x0 : starts) {
    ends.push_back(morse_flow(p, x0, cfg.flow_time, step, &path));
    double prev = p.j(path[0]);
    rep.min_mu = std::min(rep.min_mu, mu_defining(path[0], p.box));
    for (std::size_t s = 1; s < path.size(); ++s) {
      const double cur = p.j(path[s]);
      const double dj = cur - prev;
      monotone += dj >= -cfg.tol;
      strict += dj > 0.0;
      rep.min_delta_j = std::min(rep.min_delta_j, dj);
      rep.min_mu = std::min(rep.min_mu, mu_defining(path[s], p.box));
      prev = cur;
      ++rep.steps;
    }
    // Jacobian by central differences, dividing by the representable step.
    std::vector<double> jac(d * d);
    for (std::size_t k = 0; k < d; ++k) {
      Point up = x0, dn = x0;
      up[k] += cfg.fd_step;
      dn[k] -= cfg.fd_step;
      const Point fu = morse_flow(p, up, cfg.flow_time, step);
      const Point fd = morse_flow(p, dn, cfg.flow_time, step);
      for (std::size_t i = 0; i < d; ++i) jac[i * d + k] = (fu[i] - fd[i]) / (up[k] - dn[k]);
    }
    const double det = d == 1 ? jac[0] : jac[0] * jac[3] - jac[1] * jac[2];
    rep.min_abs_det = std::min(rep.min_abs_det, std::fabs(det));
    rep.max_abs_det = std::max(rep.max_abs_det, std::fabs(det));
  }
  rep.monotone_fraction = rep.steps ? static_cast<double>(monotone) / static_cast<double>(rep.steps) : 1.0;
  rep.strict_increase_fraction = rep.steps ? static_cast<double>(strict) / static_cast<double>(rep.steps) : 0.0;
  if (rep.steps == 0) rep.min_delta_j = 0.0;
  rep.min_endpoint_distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ends.size(); ++i)
    for (std::size_t k = 0; k < i; ++k)
      rep.min_endpoint_distance = std::min(rep.min_endpoint_distance, norm2(ends[i], ends[k]));
  return rep;
}

// ---- cascade ----------------------------------------------------------------------

void CascadeCheckConfig::validate() const {
  if (samples == 0) throw std::invalid_argument("cascade check needs samples");
  if (!(tau > 0.0f && tau <= 1.0f)) throw std::invalid_argument("tau must lie in (0, 1]");
  if (!(0.0f < delta && delta < t && t <= tau)) {
    throw std::invalid_argument("cascade check needs 0 < delta < t <= tau");
  }
  if (!(lr >= 0.0)) throw std::invalid_argument("cascade learning rate must be >= 0");
}

namespace {

using V64 = BasicVar<double>;

std::size_t grid_steps(double span, double delta) {
  const double q = span / delta;
  const auto n = static_cast<std::size_t>(std::llround(q));
  if (std::fabs(q - static_cast<double>(n)) > 1e-6) {
    throw std::invalid_argument("cascade times must be multiples of delta");
  }
  return n;
}

Tensor64 velocity64(const VelocityModel& model, const ParamStore& store, const Tensor64& x, double t,
                    std::span<const int> cond, bool use_lora) {
  BasicTape<double> tape;
  ParamBinding<double> p(tape, store, true);
  std::vector<double> ts(cond.size(), t);
  return model.forward<double>(p, x, ts, cond, use_lora).value();
}

Tensor64 axpy(const Tensor64& x, const Tensor64& v, double a) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + a * v[i];
  return Tensor64(x.shape(), std::move(out));
}

}  // namespace

CascadeReport verify_cascade(const VelocityModel& model, const Classifier& f, const Dataset& data,
                             const CascadeCheckConfig& cfg) {
  cfg.validate();
  if (cfg.require_smooth && !f.smooth()) {
    throw std::invalid_argument(std::string("non-smooth classifier activation: ") +
                                to_string(f.config().activation));
  }
  if (!model.has_lora()) throw std::invalid_argument("cascade check needs adapters attached");
  if (data.size() == 0) throw std::invalid_argument("cascade check on an empty dataset");
  VelocityModel work = model;
  work.train_adapters(true);
  const ParamStore& store = work.params();

  const std::size_t n = cfg.samples, d = data.dim();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(data.num_classes) - 1);
  std::vector<int> cls(n);
  std::vector<double> xs;
  xs.reserve(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor row = data.row(i % data.size());
    xs.insert(xs.end(), row.data().begin(), row.data().end());
    cls[i] = pick(rng);
  }
  const double delta = cfg.delta, t = cfg.t;
  Tensor64 x(Shape{n, d}, std::move(xs));
  const std::vector<int> null_c(n, work.null_class());
  const std::size_t n_fwd = grid_steps(cfg.tau, delta);
  for (std::size_t k = 0; k < n_fwd; ++k) {
    x = axpy(x, velocity64(work, store, x, static_cast<double>(k) * delta, null_c, false), delta);
  }
  const std::size_t n_rev = grid_steps(static_cast<double>(cfg.tau) - t, delta);
  for (std::size_t k = 0; k < n_rev; ++k) {
    const double tk = static_cast<double>(cfg.tau) - static_cast<double>(k) * delta;
    x = axpy(x, velocity64(work, store, x, tk, cls, true), -delta);
  }

  CascadeReport rep;
  rep.samples = n;
  std::size_t improved = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor64 xt = x.slice_rows(i, i + 1);
    const int c = cls[i];
    const std::span<const int> cs(&c, 1);

    // Gradient step at t.
    BasicTape<double> tape;
    ParamBinding<double> p(tape, store);
    ParamBinding<double> fp(tape, f.params(), true);
    const double tv[1] = {t};
    const V64 v = work.forward<double>(p, xt, tv, cs, true);
    const V64 x0 = ops::sub(tape.constant(xt), ops::scale(v, t));
    const V64 ce0 = ops::softmax_cross_entropy<double>(f.forward<double>(fp, x0), cs);
    const auto grads = p.named(tape.backward(ce0));
    const Tensor64 x_next = axpy(xt, v.value(), -delta);

    auto ce_at = [&](const std::map<std::string, Tensor64>* step) {
      BasicTape<double> tp;
      ParamBinding<double> q(tp, store, true);
      if (step) {
        for (const auto& [name, g] : *step) {
          std::vector<double> w(g.size());
          const Tensor& base = store.get(name);
          for (std::size_t e = 0; e < w.size(); ++e) w[e] = static_cast<double>(base[e]) - cfg.lr * g[e];
          q.rebind(name, tp.constant(Tensor64(g.shape(), std::move(w))));
        }
      }
      ParamBinding<double> fq(tp, f.params(), true);
      const double tn[1] = {t - delta};
      const V64 vn = work.forward<double>(q, x_next, tn, cs, true);
      const V64 xh = ops::sub(tp.constant(x_next), ops::scale(vn, t - delta));
      return ops::softmax_cross_entropy<double>(f.forward<double>(fq, xh), cs).value().item();
    };
    const double ce1 = ce_at(nullptr);
    const double ce2 = ce_at(&grads);
    const double diff = ce2 - ce1;
    rep.delta_ce.push_back(diff);
    improved += ce2 <= ce1 + cfg.tol;
    total += diff;
  }
  rep.improvement_fraction = static_cast<double>(improved) / static_cast<double>(n);
  rep.mean_delta_ce = total / static_cast<double>(n);
  return rep;
}

}  // namespace dflow
