// SPDX-License-Identifier: Apache-2.0
#include "ttc/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ttc/error.hpp"

namespace ttc {

AttentionInputs AttentionInputs::make(Tensor q, Tensor k, Tensor v, std::optional<TokenGrid> grid) {
  AttentionInputs in{std::move(q), std::move(k), std::move(v), {}};
  if (!in.q.defined()) throw DimensionError("attention: query tensor is undefined");
  in.grid = grid ? *grid : TokenGrid{1, in.q.rows()};
  in.validate();
  return in;
}

void AttentionInputs::validate() const {
  if (!q.defined() || !k.defined() || !v.defined()) {
    throw DimensionError("attention: Q, K and V must all be defined");
  }
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention: Q, K, V must share one [N x d] shape, got " +
                         shape_string(q.shape()) + ", " + shape_string(k.shape()) + ", " +
                         shape_string(v.shape()));
  }
  if (grid.tokens() != q.rows()) {
    throw DimensionError("attention: grid " + std::to_string(grid.height) + "x" +
                         std::to_string(grid.width) + " does not cover " +
                         std::to_string(q.rows()) + " tokens");
  }
}

Tensor softmax_weights(const AttentionInputs& in) {
  in.validate();
  const double s = 1.0 / std::sqrt(static_cast<double>(in.head_dim()));
  return softmax_rows(matmul(in.q, transpose(in.k)), s);
}

Tensor softmax_attention(const AttentionInputs& in) { return matmul(softmax_weights(in), in.v); }

Tensor dynamic_mlp_view(const AttentionInputs& in) {
  in.validate();
  const double s = 1.0 / std::sqrt(static_cast<double>(in.head_dim()));
  const Tensor w1 = scale(transpose(in.k), s);
  const Tensor& w2 = in.v;
  return matmul(softmax_rows(matmul(in.q, w1)), w2);
}

ProjQK ProjQK::identity(std::size_t d) { return {Tensor::identity(d), Tensor::identity(d)}; }

Tensor linear_attention(const AttentionInputs& in, ActivationKind kernel,
                        const std::optional<ProjQK>& proj) {
  in.validate();
  const std::size_t d = in.head_dim();
  Tensor q = in.q;
  Tensor k = in.k;
  if (proj) {
    if (proj->pq.shape() != Shape{d, d} || proj->pk.shape() != Shape{d, d}) {
      throw DimensionError("linear_attention: projections must be [d x d]");
    }
    q = matmul(q, proj->pq);
    k = matmul(k, proj->pk);
  }
  const Tensor phi_q = activation(q, kernel);
  const Tensor phi_k = activation(k, kernel);
  const Tensor numer = matmul(phi_q, matmul(transpose(phi_k), in.v));
  const Tensor denom = matmul(phi_q, transpose(sum_rows(phi_k)));
  for (double x : denom.data()) {
    if (!(std::abs(x) >= kLinearAttentionMinDenominator)) {
      throw DegenerateNormalizerError("linear_attention: normalizer " + std::to_string(x) +
                                      " below 1e-12");
    }
  }
  return div(numer, broadcast_cols(denom, d));
}

std::shared_ptr<const std::vector<std::uint8_t>> neighborhood_mask(TokenGrid grid,
                                                                    std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw ConfigError("neighborhood attention window must be odd, got " + std::to_string(window));
  }
  const std::size_t h = grid.height, w = grid.width, n = grid.tokens();
  if (n == 0) throw DimensionError("neighborhood attention: empty grid");
  const std::size_t wh = std::min(window, h), ww = std::min(window, w);
  const auto start = [](std::size_t pos, std::size_t extent, std::size_t win) {
    const std::size_t half = win / 2;
    const std::size_t lo = pos >= half ? pos - half : 0;
    return std::min(lo, extent - win);
  };
  auto mask = std::make_shared<std::vector<std::uint8_t>>(n * n, 0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      const std::size_t r0 = start(r, h, wh), c0 = start(c, w, ww);
      for (std::size_t a = r0; a < r0 + wh; ++a)
        for (std::size_t b = c0; b < c0 + ww; ++b) (*mask)[i * n + a * w + b] = 1;
    }
  }
  return mask;
}

Tensor neighborhood_weights(const AttentionInputs& in, std::size_t window) {
  in.validate();
  auto mask = neighborhood_mask(in.grid, window);
  const double s = 1.0 / std::sqrt(static_cast<double>(in.head_dim()));
  return softmax_rows(matmul(in.q, transpose(in.k)), s, std::move(mask));
}

Tensor neighborhood_attention(const AttentionInputs& in, std::size_t window) {
  return matmul(neighborhood_weights(in, window), in.v);
}

}  // namespace ttc
