// SPDX-License-Identifier: Apache-2.0
//
// Test-time-training layer: a small inner network whose weights are
// corrected per sequence by gradient steps on a self-supervised loss over
// (key, value) pairs, then applied to the queries. Row-vector convention
// throughout: f(x) = act(x W1) W2.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ttc/attention.hpp"
#include "ttc/rng.hpp"
#include "ttc/tensor.hpp"

namespace ttc {

enum class InnerVariant { linear, one_layer_gate, two_layer, three_layer, swiglu };

InnerVariant parse_inner_variant(const std::string& name);
std::string to_string(InnerVariant variant);

/// Weight names in storage order: linear {w}, one_layer_gate {wg, w1},
/// two_layer {w1, w2}, three_layer {w1, wm, w2}, swiglu {wg, wu, wd}.
std::vector<std::string> inner_weight_names(InnerVariant variant);

std::size_t inner_param_count(InnerVariant variant, std::size_t dim, std::size_t hidden);

inline constexpr double kInnerInitStd = 0.02;

struct InnerModel {
  InnerVariant variant = InnerVariant::two_layer;
  ActivationKind act = ActivationKind::silu;
  std::vector<Tensor> weights;

  /// Gaussian(0, stddev) weights; hidden = 0 means hidden = dim.
  static InnerModel random(InnerVariant variant, std::size_t dim, Rng& rng,
                           double stddev = kInnerInitStd, std::size_t hidden = 0,
                           ActivationKind act = ActivationKind::silu);
  static InnerModel from_weights(InnerVariant variant, std::vector<Tensor> weights,
                                 ActivationKind act = ActivationKind::silu);

  std::size_t dim() const;
  std::size_t hidden() const;
  void validate() const;
};

enum class InnerLoss { l2, inner_product };
enum class KeyScale { none, inv_sqrt_d };

InnerLoss parse_inner_loss(const std::string& name);
std::string to_string(InnerLoss loss);
KeyScale parse_key_scale(const std::string& name);
std::string to_string(KeyScale scale);

struct TTTConfig {
  InnerLoss loss = InnerLoss::inner_product;
  double inner_lr = 1.0;
  std::size_t inner_steps = 1;
  KeyScale key_scale = KeyScale::none;
  void validate() const;
};

struct FastWeights {
  std::vector<Tensor> deltas;
};

Tensor inner_forward(InnerVariant variant, ActivationKind act, const std::vector<Tensor>& weights,
                     const Tensor& x);
Tensor inner_forward(const InnerModel& m, const Tensor& x);

/// l2: sum_i ||f(k_i) - v_i||^2, inner_product: -sum_i v_i . f(k_i). Shape {1}.
Tensor inner_loss(const InnerModel& m, const Tensor& keys, const Tensor& values, InnerLoss kind);

/// Accumulates delta += lr * grad L(W - delta) for the configured number of
/// steps. When the weights, keys or values record on a tape, the update is
/// recorded there too so an outer loss can be differentiated through it.
FastWeights fast_weight_update(const InnerModel& m, const Tensor& keys, const Tensor& values,
                               const TTTConfig& cfg);

/// Updated weights W - delta applied to every query row.
Tensor ttt_forward(const InnerModel& m, const AttentionInputs& in, const TTTConfig& cfg);

/// Closed-form gradient of the two-layer inner loss.
struct TwoLayerGrads {
  Tensor w1;
  Tensor w2;
};
TwoLayerGrads two_layer_analytic_grad(const InnerModel& m, const Tensor& keys,
                                      const Tensor& values, InnerLoss kind);

}  // namespace ttc
