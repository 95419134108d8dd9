// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "ttc/tensor.hpp"
#include "ttc/ttt.hpp"

namespace ttc {

inline constexpr double kNormEps = 1e-6;
inline constexpr double kShiftRatioEps = 1e-12;

struct KeyStats {
  Tensor mean_key;  // [1 x d]
  double shift_ratio = 0.0;
};

/// ||mean key|| / mean_i ||k_i||; 0 when the denominator is below eps.
KeyStats key_shift_ratio(const Tensor& keys, double eps = kShiftRatioEps);

enum class KeyNorm {
  none,
  instance,          // per channel over tokens: center and scale
  instance_no_mean,  // per channel: scale by the centered std only
  instance_no_std,   // per channel: center only
  layernorm,         // per token over channels
  rmsnorm,
};

KeyNorm parse_key_norm(const std::string& name);
std::string to_string(KeyNorm norm);

Tensor instance_norm_keys(const Tensor& keys, double eps = kNormEps);
/// kind must be layernorm or rmsnorm.
Tensor token_norm(const Tensor& keys, KeyNorm kind, double eps = kNormEps);
Tensor normalize_keys(const Tensor& keys, KeyNorm kind, double eps = kNormEps);

/// Gradient of the inner-product loss of a two-layer inner model with
/// respect to W1 at a shifted key k + delta, split by order in delta.
struct GradientExpansion {
  Tensor exact_shifted;
  Tensor order0;   // unshifted gradient
  Tensor order1a;  // shift through the outer key factor
  Tensor order1b;  // shift through the activation slope
  Tensor order2;   // both
  double truncation_residual = 0.0;
};

/// k, v, delta are [1 x d] rows.
GradientExpansion shifted_gradient_expansion(const InnerModel& m, const Tensor& k, const Tensor& v,
                                             const Tensor& delta);

}  // namespace ttc
