// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "ttc/tensor.hpp"

namespace ttc {

struct TokenGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t tokens() const { return height * width; }
  bool operator==(const TokenGrid&) const = default;
};

/// Single-head attention operands. Q, K, V are [N x d] with N = grid tokens.
struct AttentionInputs {
  Tensor q;
  Tensor k;
  Tensor v;
  TokenGrid grid;

  /// Uses a 1 x N grid when no spatial layout is given.
  static AttentionInputs make(Tensor q, Tensor k, Tensor v, std::optional<TokenGrid> grid = {});

  std::size_t tokens() const { return q.rows(); }
  std::size_t head_dim() const { return q.cols(); }
  void validate() const;
};

/// Softmax(Q K^T / sqrt(d)), the explicit weight matrix.
Tensor softmax_weights(const AttentionInputs& in);
Tensor softmax_attention(const AttentionInputs& in);

/// Same map written as a two-layer network whose weights are K^T/sqrt(d) and V.
Tensor dynamic_mlp_view(const AttentionInputs& in);

/// Learnable query/key projections applied before the kernel feature map.
struct ProjQK {
  Tensor pq;
  Tensor pk;
  static ProjQK identity(std::size_t d);
};

inline constexpr double kLinearAttentionMinDenominator = 1e-12;

Tensor linear_attention(const AttentionInputs& in,
                        ActivationKind kernel = ActivationKind::elu_plus_one,
                        const std::optional<ProjQK>& proj = std::nullopt);

/// Row-major keep mask of the clamped window neighborhood: token i attends
/// to token j iff mask[i*N + j] != 0. Each axis window is min(window, extent).
std::shared_ptr<const std::vector<std::uint8_t>> neighborhood_mask(TokenGrid grid,
                                                                    std::size_t window);

Tensor neighborhood_weights(const AttentionInputs& in, std::size_t window);
Tensor neighborhood_attention(const AttentionInputs& in, std::size_t window);

}  // namespace ttc
