// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dflow/ops.hpp"
#include "dflow/params.hpp"

namespace dflow {

// ---- dense layers and low-rank adapters -----------------------------------
//
// A linear layer named `n` owns `n.W` [d_out x d_in] and `n.b` [d_out]. An
// attached adapter adds `n.lora_A` [r x d_in] (gaussian, std 0.02) and
// `n.lora_B` [d_out x r] (zeros), giving W + (alpha/r) B A. Because B starts
// at zero, an adapted layer is initially identical to its base layer.

void init_linear(ParamStore& store, const std::string& name, std::size_t d_in, std::size_t d_out,
                 std::mt19937_64& rng);
// Returns the effective rank, min(rank, d_in, d_out).
std::size_t attach_lora(ParamStore& store, const std::string& name, std::size_t rank,
                        std::mt19937_64& rng);
bool is_lora_param(const std::string& name);

// y = x W^T + b, plus scale * (x A^T) B^T when lora_a/lora_b are given.
template <class T>
BasicVar<T> lora_forward(BasicVar<T> x, BasicVar<T> w, BasicVar<T> b, const BasicVar<T>* lora_a,
                         const BasicVar<T>* lora_b, T scale);

// softmax((z Wq)(e Wk)^T / sqrt(d)) (e Wv) with weights in [d_in x d] layout.
// z: [B x d_z]; e: [B*R x d_e] holds R condition rows per query row.
template <class T>
BasicVar<T> cross_attention(BasicVar<T> z, BasicVar<T> e, BasicVar<T> wq, BasicVar<T> wk,
                            BasicVar<T> wv, std::size_t rows_per_query);

enum class Activation { relu, tanh, silu };
Activation parse_activation(const std::string& s);
const char* to_string(Activation a);
bool is_smooth(Activation a);

template <class T>
BasicVar<T> activate(BasicVar<T> x, Activation a);

// ---- velocity field ---------------------------------------------------------

struct VelocityConfig {
  std::size_t data_dim = 256;
  std::size_t width = 128;
  std::size_t blocks = 3;
  std::size_t time_dim = 32;
  std::size_t embed_dim = 32;
  std::size_t num_classes = 8;
  std::size_t lora_rank = 4;
  float lora_alpha = 4.0f;
  // Sinusoidal time features use frequencies geometrically spaced in [1, max].
  float time_max_freq = 16.0f;

  std::map<std::string, std::string> to_meta() const;
  static VelocityConfig from_meta(const std::map<std::string, std::string>& meta);
};

// Time-conditioned, class-conditioned velocity v(x, t, c). Condition rows
// for class c are [e_null, e_c] taken from a (K+1)-row embedding table whose
// last row is the null condition; every hidden block mixes them in through
// cross-attention. All activations are SiLU.
class VelocityModel {
 public:
  VelocityModel() = default;
  VelocityModel(const VelocityConfig& cfg, std::uint64_t seed);
  // Rebuilds from a restored parameter store (e.g. a checkpoint).
  VelocityModel(const VelocityConfig& cfg, ParamStore params);

  const VelocityConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int null_class() const { return static_cast<int>(cfg_.num_classes); }
  std::vector<std::string> linear_layers() const;

  // Adds zero-initialized adapters to every dense layer and resets the class
  // embedding rows to the null row, so v_theta(., ., c) == v_phi(., ., null).
  void attach_lora(std::uint64_t seed);
  bool has_lora() const;
  void remove_lora();

  // Trainable set for flow-matching pretraining: base weights + null row.
  void train_base();
  // Trainable set for attack training: adapters (+ class rows if asked).
  void train_adapters(bool train_class_rows);

  template <class T>
  BasicVar<T> forward(const ParamBinding<T>& p, const BasicTensor<T>& x, std::span<const T> t,
                      std::span<const int> cond, bool use_lora) const;

  // No-grad evaluation. x is [B x D] or any shape with D elements.
  Tensor evaluate(const Tensor& x, float t, int cond, bool use_lora) const;
  Tensor evaluate(const Tensor& x, float t, std::span<const int> cond, bool use_lora) const;

  template <class T>
  BasicTensor<T> time_features(std::span<const T> t) const;

 private:
  template <class T>
  BasicVar<T> dense(const ParamBinding<T>& p, const std::string& name, BasicVar<T> x,
                    bool use_lora) const;

  VelocityConfig cfg_;
  ParamStore params_;
};

// ---- classifiers --------------------------------------------------------------

enum class ClassifierArch { mlp, conv };
ClassifierArch parse_arch(const std::string& s);
const char* to_string(ClassifierArch a);

struct ClassifierConfig {
  ClassifierArch arch = ClassifierArch::conv;
  Activation activation = Activation::relu;
  std::size_t input_dim = 256;
  std::size_t height = 16;  // conv only
  std::size_t width = 16;
  std::size_t num_classes = 8;
  std::size_t hidden = 128;
  std::size_t conv1 = 8;
  std::size_t conv2 = 16;

  std::map<std::string, std::string> to_meta() const;
  static ClassifierConfig from_meta(const std::map<std::string, std::string>& meta);
};

// mlp: D -> hidden -> hidden -> L.
// conv: conv3x3(1->c1) act pool2 conv3x3(c1->c2) act pool2 dense(hidden) act dense(L).
class Classifier {
 public:
  Classifier() = default;
  Classifier(const ClassifierConfig& cfg, std::uint64_t seed);
  Classifier(const ClassifierConfig& cfg, ParamStore params);

  const ClassifierConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t num_classes() const { return cfg_.num_classes; }
  bool smooth() const { return is_smooth(cfg_.activation); }

  template <class T>
  BasicVar<T> forward(const ParamBinding<T>& p, BasicVar<T> x) const;

  // No-grad logits for x [B x D] (or a single input with D elements).
  Tensor logits(const Tensor& x) const;
  std::vector<int> predict(const Tensor& x) const;

 private:
  ClassifierConfig cfg_;
  ParamStore params_;
};

}  // namespace dflow
