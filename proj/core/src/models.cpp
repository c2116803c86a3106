// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace dflow {
namespace {

std::string meta_get(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw std::invalid_argument("missing model metadata key: " + key);
  return it->second;
}

std::size_t meta_size(const std::map<std::string, std::string>& m, const std::string& key) {
  return static_cast<std::size_t>(std::stoull(meta_get(m, key)));
}

std::string fmt_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

float parse_float(const std::string& s) {
  float v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc()) throw std::invalid_argument("bad float: " + s);
  return v;
}

Tensor uniform_tensor(Shape shape, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> d(shape_numel(shape));
  for (float& x : d) x = dist(rng);
  return Tensor(std::move(shape), std::move(d));
}

Tensor normal_tensor(Shape shape, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> d(shape_numel(shape));
  for (float& x : d) x = dist(rng);
  return Tensor(std::move(shape), std::move(d));
}

}  // namespace

void init_linear(ParamStore& store, const std::string& name, std::size_t d_in, std::size_t d_out,
                 std::mt19937_64& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(d_in));
  store.add(name + ".W", uniform_tensor({d_out, d_in}, bound, rng));
  store.add(name + ".b", Tensor::zeros({d_out}));
}

std::size_t attach_lora(ParamStore& store, const std::string& name, std::size_t rank,
                        std::mt19937_64& rng) {
  const Tensor& w = store.get(name + ".W");
  const std::size_t d_out = w.shape()[0], d_in = w.shape()[1];
  if (rank == 0) throw std::invalid_argument("LoRA rank must be >= 1");
  const std::size_t r = std::min({rank, d_in, d_out});
  store.add(name + ".lora_A", normal_tensor({r, d_in}, 0.02f, rng));
  store.add(name + ".lora_B", Tensor::zeros({d_out, r}));
  return r;
}

bool is_lora_param(const std::string& name) {
  return name.find(".lora_A") != std::string::npos || name.find(".lora_B") != std::string::npos;
}

template <class T>
BasicVar<T> lora_forward(BasicVar<T> x, BasicVar<T> w, BasicVar<T> b, const BasicVar<T>* lora_a,
                         const BasicVar<T>* lora_b, T scale) {
  BasicVar<T> y = ops::add_row(ops::matmul_nt(x, w), b);
  if (lora_a && lora_b) {
    const auto& a = lora_a->value();
    const auto& bb = lora_b->value();
    if (a.cols() != w.value().cols() || bb.rows() != w.value().rows() || bb.cols() != a.rows()) {
      throw ShapeError("LoRA adapter shapes " + shape_str(a.shape()) + ", " + shape_str(bb.shape()) +
                       " do not fit weight " + shape_str(w.shape()));
    }
    y = ops::add(y, ops::scale(ops::matmul_nt(ops::matmul_nt(x, *lora_a), *lora_b), scale));
  }
  return y;
}

template <class T>
BasicVar<T> cross_attention(BasicVar<T> z, BasicVar<T> e, BasicVar<T> wq, BasicVar<T> wk,
                            BasicVar<T> wv, std::size_t rows_per_query) {
  if (wq.value().rows() != z.value().cols() || wk.value().rows() != e.value().cols() ||
      wv.value().rows() != e.value().cols() || wq.value().cols() != wk.value().cols() ||
      wk.value().cols() != wv.value().cols()) {
    throw ShapeError("cross_attention: weight dimensions do not match inputs");
  }
  return ops::grouped_attention(ops::matmul(z, wq), ops::matmul(e, wk), ops::matmul(e, wv),
                                rows_per_query);
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "silu") return Activation::silu;
  throw std::invalid_argument("unknown activation: " + s);
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::silu: return "silu";
  }
  return "?";
}

bool is_smooth(Activation a) { return a != Activation::relu; }

template <class T>
BasicVar<T> activate(BasicVar<T> x, Activation a) {
  switch (a) {
    case Activation::relu: return ops::relu(x);
    case Activation::tanh: return ops::tanh(x);
    case Activation::silu: return ops::silu(x);
  }
  throw std::logic_error("bad activation");
}

// ---- VelocityModel ----------------------------------------------------------

std::map<std::string, std::string> VelocityConfig::to_meta() const {
  return {{"velocity.data_dim", std::to_string(data_dim)},
          {"velocity.width", std::to_string(width)},
          {"velocity.blocks", std::to_string(blocks)},
          {"velocity.time_dim", std::to_string(time_dim)},
          {"velocity.embed_dim", std::to_string(embed_dim)},
          {"velocity.num_classes", std::to_string(num_classes)},
          {"velocity.lora_rank", std::to_string(lora_rank)},
          {"velocity.lora_alpha", fmt_float(lora_alpha)},
          {"velocity.time_max_freq", fmt_float(time_max_freq)}};
}

VelocityConfig VelocityConfig::from_meta(const std::map<std::string, std::string>& m) {
  VelocityConfig c;
  c.data_dim = meta_size(m, "velocity.data_dim");
  c.width = meta_size(m, "velocity.width");
  c.blocks = meta_size(m, "velocity.blocks");
  c.time_dim = meta_size(m, "velocity.time_dim");
  c.embed_dim = meta_size(m, "velocity.embed_dim");
  c.num_classes = meta_size(m, "velocity.num_classes");
  c.lora_rank = meta_size(m, "velocity.lora_rank");
  c.lora_alpha = parse_float(meta_get(m, "velocity.lora_alpha"));
  c.time_max_freq = parse_float(meta_get(m, "velocity.time_max_freq"));
  return c;
}

VelocityModel::VelocityModel(const VelocityConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.time_dim < 4 || cfg.time_dim % 2) throw std::invalid_argument("time_dim must be even and >= 4");
  std::mt19937_64 rng(seed);
  init_linear(params_, "in", cfg.data_dim, cfg.width, rng);
  init_linear(params_, "time", cfg.time_dim, cfg.width, rng);
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    const std::string b = "block" + std::to_string(i);
    init_linear(params_, b + ".dense", cfg.width, cfg.width, rng);
    init_linear(params_, b + ".q", cfg.width, cfg.width, rng);
    init_linear(params_, b + ".k", cfg.embed_dim, cfg.width, rng);
    init_linear(params_, b + ".v", cfg.embed_dim, cfg.width, rng);
  }
  init_linear(params_, "out", cfg.width, cfg.data_dim, rng);
  Tensor null_row = normal_tensor({1, cfg.embed_dim}, 1.0f, rng);
  std::vector<float> rows;
  for (std::size_t k = 0; k < cfg.num_classes; ++k)
    rows.insert(rows.end(), null_row.data().begin(), null_row.data().end());
  params_.add("embed.null", null_row);
  params_.add("embed.classes", Tensor({cfg.num_classes, cfg.embed_dim}, std::move(rows)));
  train_base();
}

VelocityModel::VelocityModel(const VelocityConfig& cfg, ParamStore params)
    : cfg_(cfg), params_(std::move(params)) {
  if (!params_.contains("in.W") || !params_.contains("embed.null")) {
    throw std::invalid_argument("parameter store is not a velocity model");
  }
}

std::vector<std::string> VelocityModel::linear_layers() const {
  std::vector<std::string> out{"in", "time"};
  for (std::size_t i = 0; i < cfg_.blocks; ++i) {
    const std::string b = "block" + std::to_string(i);
    for (const char* s : {".dense", ".q", ".k", ".v"}) out.push_back(b + s);
  }
  out.push_back("out");
  return out;
}

void VelocityModel::attach_lora(std::uint64_t seed) {
  if (has_lora()) remove_lora();
  std::mt19937_64 rng(seed);
  for (const auto& name : linear_layers()) dflow::attach_lora(params_, name, cfg_.lora_rank, rng);
  const Tensor& null_row = params_.get("embed.null");
  std::vector<float> rows;
  for (std::size_t k = 0; k < cfg_.num_classes; ++k)
    rows.insert(rows.end(), null_row.data().begin(), null_row.data().end());
  params_.set("embed.classes", Tensor({cfg_.num_classes, cfg_.embed_dim}, std::move(rows)));
  train_adapters(true);
}

bool VelocityModel::has_lora() const { return params_.contains("in.lora_A"); }

void VelocityModel::remove_lora() {
  ParamStore kept;
  for (const auto& [name, p] : params_.items())
    if (!is_lora_param(name)) kept.add(name, p.value, p.trainable);
  params_ = std::move(kept);
}

void VelocityModel::train_base() {
  params_.set_trainable_if(
      [](const std::string& n) { return !is_lora_param(n) && n != "embed.classes"; });
}

void VelocityModel::train_adapters(bool train_class_rows) {
  params_.set_trainable_if([train_class_rows](const std::string& n) {
    return is_lora_param(n) || (train_class_rows && n == "embed.classes");
  });
}

template <class T>
BasicTensor<T> VelocityModel::time_features(std::span<const T> t) const {
  const std::size_t half = cfg_.time_dim / 2;
  std::vector<T> out(t.size() * cfg_.time_dim);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double f = std::pow(static_cast<double>(cfg_.time_max_freq),
                                static_cast<double>(i) / static_cast<double>(half - 1));
      const double arg = f * static_cast<double>(t[b]);
      out[b * cfg_.time_dim + i] = static_cast<T>(std::sin(arg));
      out[b * cfg_.time_dim + half + i] = static_cast<T>(std::cos(arg));
    }
  }
  return BasicTensor<T>(Shape{t.size(), cfg_.time_dim}, std::move(out));
}

template <class T>
BasicVar<T> VelocityModel::dense(const ParamBinding<T>& p, const std::string& name, BasicVar<T> x,
                                 bool use_lora) const {
  if (use_lora && p.has(name + ".lora_A")) {
    const BasicVar<T> a = p[name + ".lora_A"];
    const BasicVar<T> b = p[name + ".lora_B"];
    const T scale = static_cast<T>(cfg_.lora_alpha / static_cast<float>(a.value().rows()));
    return lora_forward(x, p[name + ".W"], p[name + ".b"], &a, &b, scale);
  }
  return lora_forward<T>(x, p[name + ".W"], p[name + ".b"], nullptr, nullptr, T(0));
}

template <class T>
BasicVar<T> VelocityModel::forward(const ParamBinding<T>& p, const BasicTensor<T>& x,
                                   std::span<const T> t, std::span<const int> cond,
                                   bool use_lora) const {
  BasicTape<T>& tape = p.tape();
  const std::size_t d = cfg_.data_dim;
  if (x.size() % d != 0) throw ShapeError("velocity input " + shape_str(x.shape()) + " vs data_dim");
  const std::size_t bsz = x.size() / d;
  if (t.size() != bsz || cond.size() != bsz) {
    throw ShapeError("velocity: need one time and one condition per row");
  }
  std::vector<int> rows;
  rows.reserve(2 * bsz);
  for (int c : cond) {
    if (c < 0 || c > null_class()) {
      throw std::out_of_range("invalid class index " + std::to_string(c));
    }
    rows.push_back(null_class());
    rows.push_back(c);
  }
  for (T tv : t) {
    if (!(tv >= T(0) && tv <= T(1))) throw std::out_of_range("velocity time outside [0, 1]");
  }
  const BasicVar<T> xin = tape.constant(x.reshaped({bsz, d}));
  const BasicVar<T> temb = tape.constant(time_features<T>(t));
  const BasicVar<T> table = ops::concat_rows(p["embed.classes"], p["embed.null"]);
  const BasicVar<T> cond_rows = ops::gather_rows(table, std::span<const int>(rows));

  BasicVar<T> h = ops::silu(ops::add(dense(p, "in", xin, use_lora), dense(p, "time", temb, use_lora)));
  for (std::size_t i = 0; i < cfg_.blocks; ++i) {
    const std::string b = "block" + std::to_string(i);
    const BasicVar<T> q = dense(p, b + ".q", h, use_lora);
    const BasicVar<T> k = dense(p, b + ".k", cond_rows, use_lora);
    const BasicVar<T> v = dense(p, b + ".v", cond_rows, use_lora);
    const BasicVar<T> att = ops::grouped_attention(q, k, v, 2);
    h = ops::add(h, ops::silu(ops::add(dense(p, b + ".dense", h, use_lora), att)));
  }
  return dense(p, "out", h, use_lora);
}

Tensor VelocityModel::evaluate(const Tensor& x, float t, int cond, bool use_lora) const {
  const std::size_t bsz = x.size() / cfg_.data_dim;
  std::vector<int> c(bsz, cond);
  return evaluate(x, t, c, use_lora);
}

Tensor VelocityModel::evaluate(const Tensor& x, float t, std::span<const int> cond,
                               bool use_lora) const {
  Tape tape;
  ParamBinding<float> p(tape, params_, true);
  std::vector<float> ts(cond.size(), t);
  Var out = forward<float>(p, x, ts, cond, use_lora);
  return out.value().reshaped(x.shape());
}

// ---- Classifier ---------------------------------------------------------------

ClassifierArch parse_arch(const std::string& s) {
  if (s == "mlp") return ClassifierArch::mlp;
  if (s == "conv" || s == "small-conv") return ClassifierArch::conv;
  throw std::invalid_argument("unknown classifier architecture: " + s);
}

const char* to_string(ClassifierArch a) { return a == ClassifierArch::mlp ? "mlp" : "conv"; }

std::map<std::string, std::string> ClassifierConfig::to_meta() const {
  return {{"classifier.arch", to_string(arch)},
          {"classifier.activation", to_string(activation)},
          {"classifier.input_dim", std::to_string(input_dim)},
          {"classifier.height", std::to_string(height)},
          {"classifier.width", std::to_string(width)},
          {"classifier.num_classes", std::to_string(num_classes)},
          {"classifier.hidden", std::to_string(hidden)},
          {"classifier.conv1", std::to_string(conv1)},
          {"classifier.conv2", std::to_string(conv2)}};
}

ClassifierConfig ClassifierConfig::from_meta(const std::map<std::string, std::string>& m) {
  ClassifierConfig c;
  c.arch = parse_arch(meta_get(m, "classifier.arch"));
  c.activation = parse_activation(meta_get(m, "classifier.activation"));
  c.input_dim = meta_size(m, "classifier.input_dim");
  c.height = meta_size(m, "classifier.height");
  c.width = meta_size(m, "classifier.width");
  c.num_classes = meta_size(m, "classifier.num_classes");
  c.hidden = meta_size(m, "classifier.hidden");
  c.conv1 = meta_size(m, "classifier.conv1");
  c.conv2 = meta_size(m, "classifier.conv2");
  return c;
}

Classifier::Classifier(const ClassifierConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  std::mt19937_64 rng(seed);
  if (cfg.arch == ClassifierArch::mlp) {
    init_linear(params_, "fc1", cfg.input_dim, cfg.hidden, rng);
    init_linear(params_, "fc2", cfg.hidden, cfg.hidden, rng);
    init_linear(params_, "fc3", cfg.hidden, cfg.num_classes, rng);
  } else {
    if (cfg.height * cfg.width != cfg.input_dim || cfg.height % 4 || cfg.width % 4) {
      throw std::invalid_argument("conv classifier needs H*W == input_dim, H and W divisible by 4");
    }
    const float b1 = 1.0f / std::sqrt(9.0f);
    const float b2 = 1.0f / std::sqrt(9.0f * static_cast<float>(cfg.conv1));
    params_.add("conv1.W", uniform_tensor({cfg.conv1, 9}, b1, rng));
    params_.add("conv1.b", Tensor::zeros({cfg.conv1}));
    params_.add("conv2.W", uniform_tensor({cfg.conv2, cfg.conv1 * 9}, b2, rng));
    params_.add("conv2.b", Tensor::zeros({cfg.conv2}));
    init_linear(params_, "fc1", cfg.conv2 * (cfg.height / 4) * (cfg.width / 4), cfg.hidden, rng);
    init_linear(params_, "fc2", cfg.hidden, cfg.num_classes, rng);
  }
}

Classifier::Classifier(const ClassifierConfig& cfg, ParamStore params)
    : cfg_(cfg), params_(std::move(params)) {
  if (!params_.contains("fc1.W")) throw std::invalid_argument("parameter store is not a classifier");
}

template <class T>
BasicVar<T> Classifier::forward(const ParamBinding<T>& p, BasicVar<T> x) const {
  const std::size_t d = cfg_.input_dim;
  if (x.value().size() % d != 0) {
    throw ShapeError("classifier input " + shape_str(x.shape()) + " vs input_dim " + std::to_string(d));
  }
  const std::size_t bsz = x.value().size() / d;
  if (x.shape() != Shape{bsz, d}) x = ops::reshape(x, {bsz, d});
  auto lin = [&](const std::string& n, BasicVar<T> in) {
    return lora_forward<T>(in, p[n + ".W"], p[n + ".b"], nullptr, nullptr, T(0));
  };
  if (cfg_.arch == ClassifierArch::mlp) {
    BasicVar<T> h = activate(lin("fc1", x), cfg_.activation);
    h = activate(lin("fc2", h), cfg_.activation);
    return lin("fc3", h);
  }
  ops::ConvGeometry g1{1, cfg_.conv1, cfg_.height, cfg_.width, 3};
  BasicVar<T> h = activate(ops::conv2d(x, p["conv1.W"], p["conv1.b"], g1), cfg_.activation);
  h = ops::avgpool2(h, cfg_.conv1, cfg_.height, cfg_.width);
  ops::ConvGeometry g2{cfg_.conv1, cfg_.conv2, cfg_.height / 2, cfg_.width / 2, 3};
  h = activate(ops::conv2d(h, p["conv2.W"], p["conv2.b"], g2), cfg_.activation);
  h = ops::avgpool2(h, cfg_.conv2, cfg_.height / 2, cfg_.width / 2);
  h = activate(lin("fc1", h), cfg_.activation);
  return lin("fc2", h);
}

Tensor Classifier::logits(const Tensor& x) const {
  Tape tape;
  ParamBinding<float> p(tape, params_, true);
  const std::size_t bsz = x.size() / cfg_.input_dim;
  Var in = tape.constant(x.reshaped({bsz, cfg_.input_dim}));
  return forward<float>(p, in).value();
}

std::vector<int> Classifier::predict(const Tensor& x) const {
  const Tensor z = logits(x);
  std::vector<int> out(z.rows());
  const std::size_t k = z.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float* row = z.data().data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

template BasicVar<float> lora_forward<float>(BasicVar<float>, BasicVar<float>, BasicVar<float>,
                                             const BasicVar<float>*, const BasicVar<float>*, float);
template BasicVar<double> lora_forward<double>(BasicVar<double>, BasicVar<double>, BasicVar<double>,
                                               const BasicVar<double>*, const BasicVar<double>*, double);
template BasicVar<float> cross_attention<float>(BasicVar<float>, BasicVar<float>, BasicVar<float>,
                                                BasicVar<float>, BasicVar<float>, std::size_t);
template BasicVar<double> cross_attention<double>(BasicVar<double>, BasicVar<double>, BasicVar<double>,
                                                  BasicVar<double>, BasicVar<double>, std::size_t);
template BasicVar<float> activate<float>(BasicVar<float>, Activation);
template BasicVar<double> activate<double>(BasicVar<double>, Activation);
template BasicVar<float> VelocityModel::forward<float>(const ParamBinding<float>&, const Tensor&,
                                                       std::span<const float>, std::span<const int>,
                                                       bool) const;
template BasicVar<double> VelocityModel::forward<double>(const ParamBinding<double>&, const Tensor64&,
                                                         std::span<const double>, std::span<const int>,
                                                         bool) const;
template Tensor VelocityModel::time_features<float>(std::span<const float>) const;
template Tensor64 VelocityModel::time_features<double>(std::span<const double>) const;
template BasicVar<float> Classifier::forward<float>(const ParamBinding<float>&, BasicVar<float>) const;
template BasicVar<double> Classifier::forward<double>(const ParamBinding<double>&, BasicVar<double>) const;

}  // namespace dflow
