// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dflow/errors.hpp"

namespace dflow {

Variant parse_variant(const std::string& s) {
  if (s == "co") return Variant::co;
  if (s == "cs") return Variant::cs;
  if (s == "rs") return Variant::rs;
  throw std::invalid_argument("unknown variant: " + s + " (expected co, cs or rs)");
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::co: return "co";
    case Variant::cs: return "cs";
    case Variant::rs: return "rs";
  }
  return "?";
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0f)) throw std::invalid_argument("epsilon must be positive");
  if (!(lr >= 0.0f)) throw std::invalid_argument("learning rate must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(sched.tau() < 1.0f)) throw std::invalid_argument("attack horizon tau must be < 1");
  if (!(l2_weight >= 0.0f)) throw std::invalid_argument("l2_weight must be >= 0");
  if (!(noise.gamma >= 0.0f)) throw std::invalid_argument("noise gamma must be >= 0");
}

std::vector<int> AttackConfig::target_set(std::size_t num_classes) const {
  if (num_classes == 0) throw std::invalid_argument("empty target set");
  if (targets.empty()) {
    std::vector<int> all(num_classes);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  for (int c : targets) {
    if (c < 0 || c >= static_cast<int>(num_classes)) {
      throw std::out_of_range("target class " + std::to_string(c) + " out of range");
    }
  }
  return targets;
}

// ---- masks ------------------------------------------------------------------------

Tensor square_mask(std::size_t height, std::size_t width, std::span<const Square> squares) {
  std::vector<float> m(height * width, 1.0f);
  for (const Square& s : squares) {
    if (s.side == 0 || s.row + s.side > height || s.col + s.side > width) {
      throw std::invalid_argument("mask square does not fit inside the image");
    }
    for (std::size_t r = s.row; r < s.row + s.side; ++r)
      for (std::size_t c = s.col; c < s.col + s.side; ++c) m[r * width + c] = 0.0f;
  }
  return Tensor({height, width}, std::move(m));
}

Tensor random_square_mask(std::size_t height, std::size_t width, const MaskConfig& mcfg,
                          std::mt19937_64& rng) {
  if (mcfg.count > 0) {
    if (mcfg.min_side == 0 || mcfg.min_side > mcfg.max_side) {
      throw std::invalid_argument("mask side range must satisfy 1 <= min <= max");
    }
    if (mcfg.max_side > std::min(height, width)) {
      throw std::invalid_argument("mask square larger than the image");
    }
  }
  std::vector<Square> squares;
  for (std::size_t i = 0; i < mcfg.count; ++i) {
    Square s;
    s.side = std::uniform_int_distribution<std::size_t>(mcfg.min_side, mcfg.max_side)(rng);
    s.row = std::uniform_int_distribution<std::size_t>(0, height - s.side)(rng);
    s.col = std::uniform_int_distribution<std::size_t>(0, width - s.side)(rng);
    squares.push_back(s);
  }
  return square_mask(height, width, squares);
}

Tensor random_square_mask(std::size_t height, std::size_t width, const MaskConfig& mcfg) {
  std::mt19937_64 rng(mcfg.seed);
  return random_square_mask(height, width, mcfg, rng);
}

// ---- budget -----------------------------------------------------------------------

std::pair<Tensor, Tensor> budget_bounds(const Tensor& x, float eps, bool clamp_unit) {
  if (!(eps > 0.0f)) throw std::invalid_argument("epsilon must be positive");
  const double e = eps;
  std::vector<float> lo(x.size()), hi(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float xi = x[i];
    float l = xi - eps, h = xi + eps;
    while (static_cast<double>(xi) - static_cast<double>(l) > e) l = std::nextafter(l, xi);
    while (static_cast<double>(h) - static_cast<double>(xi) > e) h = std::nextafter(h, xi);
    if (clamp_unit) {
      l = std::max(l, 0.0f);
      h = std::min(h, 1.0f);
      if (l > h) l = h = std::clamp(xi, 0.0f, 1.0f);
    }
    lo[i] = l;
    hi[i] = h;
  }
  return {Tensor(x.shape(), std::move(lo)), Tensor(x.shape(), std::move(hi))};
}

Tensor clip_to_budget(const Tensor& x_pre, const Tensor& x, float eps, bool clamp_unit) {
  if (x_pre.size() != x.size()) throw ShapeError("clip_to_budget: size mismatch");
  const auto [lo, hi] = budget_bounds(x, eps, clamp_unit);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(x_pre[i], lo[i]), hi[i]);
  return Tensor(x_pre.shape(), std::move(out));
}

// ---- training ---------------------------------------------------------------------

namespace {

struct MaskSource {
  const MaskConfig* cfg = nullptr;
  std::mt19937_64 rng;
};

class Trainer {
 public:
  Trainer(VelocityModel& model, const Classifier& f, const Dataset& data, const AttackConfig& cfg,
          MaskSource* mask)
      : model_(model), f_(f), data_(data), cfg_(cfg), mask_(mask), opt_(cfg.optimizer),
        rng_(cfg.seed), targets_(cfg.target_set(data.num_classes)) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("attack training on an empty dataset");
    if (data.dim() != model.config().data_dim || data.dim() != f.config().input_dim) {
      throw ShapeError("dataset, velocity model and classifier dimensions disagree");
    }
    if (cfg.use_lora) {
      if (!model.has_lora()) throw std::invalid_argument("velocity model has no adapters attached");
      model.train_adapters(cfg.train_class_rows);
    } else {
      model.params().freeze_all();
    }
  }

  AttackTrainResult run() {
    AttackTrainResult res;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::uniform_int_distribution<std::size_t> pick(0, targets_.size() - 1);
    for (std::size_t step = 0; step < cfg_.steps; ++step) {
      std::vector<std::size_t> idx;
      while (idx.size() < cfg_.batch_size) {
        if (cursor == order.size()) {
          order.resize(data_.size());
          std::iota(order.begin(), order.end(), std::size_t{0});
          std::shuffle(order.begin(), order.end(), rng_);
          cursor = 0;
        }
        idx.push_back(order[cursor++]);
      }
      std::vector<int> c(idx.size());
      for (int& ci : c) ci = targets_[pick(rng_)];
      const Tensor x = data_.rows(idx);
      res.log.push_back(train_batch(step, x, c));
    }
    res.updates = opt_.step_count();
    return res;
  }

 private:
  struct UpdateOut {
    double loss;
    double hits;
    double clipped;
  };

  StepLog train_batch(std::size_t step, const Tensor& x, const std::vector<int>& c) {
    const FlowSchedule& s = cfg_.sched;
    const std::size_t bsz = c.size(), d = data_.dim();
    const auto [lo, hi] = budget_bounds(x, cfg_.epsilon, cfg_.clamp_unit);
    Tensor mask;
    const bool masked = mask_ && mask_->cfg;
    if (masked) {
      std::vector<float> m;
      for (std::size_t b = 0; b < bsz; ++b) {
        const Tensor mb = random_square_mask(data_.height, data_.width, *mask_->cfg, mask_->rng);
        m.insert(m.end(), mb.data().begin(), mb.data().end());
      }
      mask = Tensor({bsz, d}, std::move(m));
    }
    StepLog log{step, 0.0, 0.0};

    if (cfg_.variant == Variant::rs) {
      std::uniform_int_distribution<std::size_t> k_dist(1, s.steps());
      std::vector<float> t(bsz);
      for (float& ti : t) ti = s.time(k_dist(rng_));
      const Tensor z = standard_normal({bsz, d}, rng_);
      const Tensor xt = marginal_sample_rows(x, t, z);
      const UpdateOut u = update(xt, t, x, c, lo, hi, masked ? &mask : nullptr, nullptr, nullptr);
      log.loss = u.loss;
      log.hit_rate = u.hits;
      log.clipped = u.clipped;
      return log;
    }

    Tensor state;
    Trajectory base;
    if (cfg_.variant == Variant::co) {
      FlowResult fwd = forward_integrate(model_field(model_, model_.null_class(), false), x, s);
      state = fwd.state;
      base = std::move(fwd.trajectory);
    } else {
      state = marginal_sample(x, s.tau(), standard_normal({bsz, d}, rng_));
    }
    std::vector<float> xi;
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (std::size_t k = s.steps(); k >= 1; --k) {
      const float t = s.time(k);
      std::vector<float> tv(bsz, t);
      Tensor next;
      const Tensor* ref = cfg_.variant == Variant::co ? &base.states[k - 1] : nullptr;
      const UpdateOut u = update(state, tv, x, c, lo, hi, masked ? &mask : nullptr, &next, ref);
      log.loss += u.loss / static_cast<double>(s.steps());
      if (k == 1) {
        log.hit_rate = u.hits;
        log.clipped = u.clipped;
      }
      if (cfg_.variant == Variant::cs && cfg_.noise.stochastic()) {
        xi.resize(next.size());
        for (float& e : xi) e = normal(rng_);
        const float amp = cfg_.noise.gamma * t * std::sqrt(s.delta());
        std::vector<float> noisy(next.size());
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = next[i] + amp * xi[i];
        next = Tensor(next.shape(), std::move(noisy));
      }
      state = std::move(next);
    }
    return log;
  }

  // One optimizer update at state x_t (detached). When `next` is given it
  // receives x_t - delta * v with the pre-update parameters.
  UpdateOut update(const Tensor& xt, const std::vector<float>& t, const Tensor& x,
                   const std::vector<int>& c, const Tensor& lo, const Tensor& hi, const Tensor* mask,
                   Tensor* next, const Tensor* l2_ref) {
    const std::size_t bsz = c.size();
    Tape tape;
    ParamBinding<float> p(tape, model_.params());
    ParamBinding<float> fp(tape, f_.params(), true);
    const Var state = tape.constant(xt);
    const Var v = model_.forward<float>(p, xt, t, c, cfg_.use_lora);
    Var x0 = ops::sub(state, ops::scale_rows(v, std::span<const float>(t)));
    if (mask) {
      std::vector<float> keep(x.size());
      for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = x[i] * (1.0f - (*mask)[i]);
      x0 = ops::add(ops::mul(x0, tape.constant(*mask)), tape.constant(Tensor(x.shape(), std::move(keep))));
    }
    std::size_t outside = 0;
    for (std::size_t i = 0; i < lo.size(); ++i) outside += x0.value()[i] < lo[i] || x0.value()[i] > hi[i];
    if (cfg_.train_clip) x0 = ops::clip_box(x0, lo, hi);
    const Var logits = f_.forward<float>(fp, x0);
    Var loss = ops::softmax_cross_entropy<float>(logits, c);
    const float delta = cfg_.sched.delta();
    if (next) {
      std::vector<float> nx(xt.size());
      for (std::size_t i = 0; i < nx.size(); ++i) nx[i] = xt[i] - v.value()[i] * delta;
      *next = Tensor(xt.shape(), std::move(nx));
    }
    if (cfg_.l2_weight > 0.0f && l2_ref) {
      const Var stepped = ops::sub(state, ops::scale(v, delta));
      const Var diff = ops::sub(stepped, tape.constant(*l2_ref));
      loss = ops::add(loss, ops::scale(ops::sum(ops::mul(diff, diff)),
                                       cfg_.l2_weight / static_cast<float>(bsz)));
    }
    double hits = 0.0;
    const Tensor& z = logits.value();
    const std::size_t k = z.cols();
    for (std::size_t b = 0; b < bsz; ++b) {
      const float* row = z.data().data() + b * k;
      hits += (std::max_element(row, row + k) - row) == c[b];
    }
    const float lval = loss.value().item();
    opt_.step(model_.params(), p.named(tape.backward(loss)), cfg_.lr);
    return {lval, hits / static_cast<double>(bsz), static_cast<double>(outside) / static_cast<double>(lo.size())};
  }

  VelocityModel& model_;
  const Classifier& f_;
  const Dataset& data_;
  const AttackConfig& cfg_;
  MaskSource* mask_;
  Optimizer opt_;
  std::mt19937_64 rng_;
  std::vector<int> targets_;
};

}  // namespace

SamplerOptions sampler_options(const AttackConfig& cfg, float gamma) {
  SamplerOptions o;
  o.sched = cfg.sched;
  o.epsilon = cfg.epsilon;
  o.noise = NoiseSpec{gamma, cfg.seed + 1};
  o.clip = true;
  o.clamp_unit = cfg.clamp_unit;
  o.use_lora = cfg.use_lora;
  return o;
}

AttackTrainResult train_dual_flow(VelocityModel& model, const Classifier& f, const Dataset& data,
                                  const AttackConfig& cfg, const Dataset* eval_set,
                                  const SamplerOptions* eval_opts) {
  Trainer tr(model, f, data, cfg, nullptr);
  AttackTrainResult res = tr.run();
  if (eval_set) {
    const SamplerOptions opts = eval_opts ? *eval_opts : sampler_options(cfg, 0.0f);
    const auto targets = cfg.target_set(data.num_classes);
    const auto samples = generate_attack_set(model, *eval_set, targets, opts);
    res.final_eval_asr = attack_success(f, samples);
  }
  return res;
}

AttackTrainResult finetune_single_target(VelocityModel& model, const Classifier& f, const Dataset& data,
                                         int target, const AttackConfig& cfg, const MaskConfig& mcfg) {
  AttackConfig fixed = cfg;
  fixed.targets = {target};
  fixed.variant = Variant::co;
  MaskSource mask{&mcfg, std::mt19937_64(mcfg.seed)};
  Trainer tr(model, f, data, fixed, mcfg.count > 0 ? &mask : nullptr);
  return tr.run();
}

// ---- sampling ---------------------------------------------------------------------

Tensor AdvSample::delta() const {
  std::vector<float> d(x.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = x_adv[i] - x[i];
  return Tensor(x.shape(), std::move(d));
}

std::vector<AdvSample> sample_from_latent(const VelocityModel& model, const Tensor& x,
                                          const Tensor& x_tau, std::span<const int> targets,
                                          const SamplerOptions& opts) {
  const std::size_t d = model.config().data_dim;
  const std::size_t bsz = x.size() / d;
  if (x.size() != bsz * d || x_tau.size() != x.size() || targets.size() != bsz) {
    throw ShapeError("sampler: need one target per input row");
  }
  const Tensor xr = x.reshaped({bsz, d});
  const FlowResult back = reverse_integrate(
      model_field(model, std::vector<int>(targets.begin(), targets.end()), opts.use_lora),
      x_tau.reshaped({bsz, d}), opts.sched, opts.noise);
  std::vector<AdvSample> out;
  out.reserve(bsz);
  for (std::size_t b = 0; b < bsz; ++b) {
    AdvSample s;
    s.x = xr.slice_rows(b, b + 1);
    s.x_pre = back.state.slice_rows(b, b + 1);
    s.x_adv = opts.clip ? clip_to_budget(s.x_pre, s.x, opts.epsilon, opts.clamp_unit) : s.x_pre;
    s.target = targets[b];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AdvSample> sample_dual_flow(const VelocityModel& model, const Tensor& x,
                                        std::span<const int> targets, const SamplerOptions& opts) {
  const std::size_t d = model.config().data_dim;
  const Tensor xr = x.reshaped({x.size() / d, d});
  const FlowResult fwd = forward_integrate(model_field(model, model.null_class(), false), xr, opts.sched);
  return sample_from_latent(model, xr, fwd.state, targets, opts);
}

std::vector<AdvSample> generate_attack_set(const VelocityModel& model, const Dataset& data,
                                           std::span<const int> targets, const SamplerOptions& opts) {
  constexpr std::size_t chunk = 256;
  const std::size_t n = data.size();
  std::vector<AdvSample> out(targets.size() * n);
  for (std::size_t s = 0, ci = 0; s < n; s += chunk, ++ci) {
    const std::size_t e = std::min(n, s + chunk);
    const Tensor x = data.images.slice_rows(s, e);
    const FlowResult fwd = forward_integrate(model_field(model, model.null_class(), false), x, opts.sched);
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
      SamplerOptions o = opts;
      o.noise.seed = opts.noise.seed * 1000003ULL + ti * 7919ULL + ci;
      std::vector<int> c(e - s, targets[ti]);
      auto part = sample_from_latent(model, x, fwd.state, c, o);
      for (std::size_t i = 0; i < part.size(); ++i) out[ti * n + s + i] = std::move(part[i]);
    }
  }
  return out;
}

double attack_success(const Classifier& f, std::span<const AdvSample> samples) {
  if (samples.empty()) throw std::invalid_argument("attack_success on an empty sample list");
  constexpr std::size_t chunk = 256;
  std::size_t hits = 0;
  const std::size_t d = f.config().input_dim;
  for (std::size_t s = 0; s < samples.size(); s += chunk) {
    const std::size_t e = std::min(samples.size(), s + chunk);
    std::vector<float> buf;
    buf.reserve((e - s) * d);
    for (std::size_t i = s; i < e; ++i)
      buf.insert(buf.end(), samples[i].x_adv.data().begin(), samples[i].x_adv.data().end());
    const auto pred = f.predict(Tensor({e - s, d}, std::move(buf)));
    for (std::size_t i = s; i < e; ++i) hits += pred[i - s] == samples[i].target;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace dflow
