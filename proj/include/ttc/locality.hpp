// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "ttc/attention.hpp"
#include "ttc/tensor.hpp"
#include "ttc/ttt.hpp"

namespace ttc {

enum class LocalityMode { none, cpe_x, dwc_v, dwc_qk };

LocalityMode parse_locality_mode(const std::string& name);
std::string to_string(LocalityMode mode);

struct LocalityConfig {
  LocalityMode mode = LocalityMode::none;
  std::size_t kernel_size = 3;
  std::optional<std::size_t> blend_nat;
  void validate() const;
  bool operator==(const LocalityConfig&) const = default;
};

/// x + DWC(x) with tokens [N x C] laid out on the grid; kernel [k x k x C].
Tensor residual_dwc(const Tensor& x, TokenGrid grid, const Tensor& kernel);

std::pair<Tensor, Tensor> enhance_qk(const Tensor& q, const Tensor& k, TokenGrid grid,
                                     const LocalityConfig& cfg, const Tensor& kernel_q,
                                     const Tensor& kernel_k);

/// cpe_x: residual DWC of the block input; dwc_v: of the values.
Tensor enhance_alternatives(const Tensor& x, TokenGrid grid, const LocalityConfig& cfg,
                            const Tensor& kernel);

/// 0.5 * TTT + 0.5 * neighborhood attention over shared Q, K, V.
Tensor blend_ttt_nat(const AttentionInputs& in, const InnerModel& m, const TTTConfig& cfg,
                     std::size_t window);

using AttentionLayer = std::function<Tensor(const AttentionInputs&)>;

struct ImplicitAttentionMap {
  Tensor scores;  // [N x N]
  std::string reduction = "trace_over_d";
};

/// scores[i][j] = trace(d o_i / d v_j) / d, from vector-Jacobian products
/// seeded with unit vectors.
ImplicitAttentionMap implicit_attention(const AttentionLayer& layer, const AttentionInputs& in);

/// Fraction of |scores| mass inside each row's clamped window neighborhood.
double locality_index(const Tensor& scores, TokenGrid grid, std::size_t window);

}  // namespace ttc
