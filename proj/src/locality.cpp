// SPDX-License-Identifier: Apache-2.0
#include "ttc/locality.hpp"

#include <cmath>

#include "ttc/error.hpp"

namespace ttc {

LocalityMode parse_locality_mode(const std::string& name) {
  if (name == "none") return LocalityMode::none;
  if (name == "cpe_x" || name == "cpe") return LocalityMode::cpe_x;
  if (name == "dwc_v") return LocalityMode::dwc_v;
  if (name == "dwc_qk" || name == "dwc") return LocalityMode::dwc_qk;
  throw ConfigError("unknown locality mode '" + name + "'");
}

std::string to_string(LocalityMode mode) {
  switch (mode) {
    case LocalityMode::none: return "none";
    case LocalityMode::cpe_x: return "cpe_x";
    case LocalityMode::dwc_v: return "dwc_v";
    case LocalityMode::dwc_qk: return "dwc_qk";
  }
  return "?";
}

void LocalityConfig::validate() const {
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ConfigError("locality kernel size must be odd, got " + std::to_string(kernel_size));
  }
  if (blend_nat && (*blend_nat == 0 || *blend_nat % 2 == 0)) {
    throw ConfigError("blend window must be odd, got " + std::to_string(*blend_nat));
  }
}

Tensor residual_dwc(const Tensor& x, TokenGrid grid, const Tensor& kernel) {
  if (!x.defined() || x.rank() != 2) throw DimensionError("residual_dwc: tokens must be [N x C]");
  if (grid.tokens() != x.rows()) {
    throw DimensionError("residual_dwc: grid " + std::to_string(grid.height) + "x" +
                         std::to_string(grid.width) + " does not match " +
                         std::to_string(x.rows()) + " tokens");
  }
  const Tensor conv =
      depthwise_conv2d(reshape(x, {grid.height, grid.width, x.cols()}), kernel);
  return add(x, reshape(conv, x.shape()));
}

std::pair<Tensor, Tensor> enhance_qk(const Tensor& q, const Tensor& k, TokenGrid grid,
                                     const LocalityConfig& cfg, const Tensor& kernel_q,
                                     const Tensor& kernel_k) {
  cfg.validate();
  if (cfg.mode != LocalityMode::dwc_qk) throw ConfigError("enhance_qk requires mode dwc_qk");
  return {residual_dwc(q, grid, kernel_q), residual_dwc(k, grid, kernel_k)};
}

Tensor enhance_alternatives(const Tensor& x, TokenGrid grid, const LocalityConfig& cfg,
                            const Tensor& kernel) {
  cfg.validate();
  if (cfg.mode != LocalityMode::cpe_x && cfg.mode != LocalityMode::dwc_v) {
    throw ConfigError("enhance_alternatives requires mode cpe_x or dwc_v");
  }
  return residual_dwc(x, grid, kernel);
}

Tensor blend_ttt_nat(const AttentionInputs& in, const InnerModel& m, const TTTConfig& cfg,
                     std::size_t window) {
  const Tensor t = ttt_forward(m, in, cfg);
  const Tensor n = neighborhood_attention(in, window);
  return scale(add(t, n), 0.5);
}

ImplicitAttentionMap implicit_attention(const AttentionLayer& layer, const AttentionInputs& in) {
  in.validate();
  const std::size_t n = in.tokens(), d = in.head_dim();
  Tape tape;
  AttentionInputs probe = in;
  probe.v = tape.variable(in.v);
  const Tensor out = layer(probe);
  if (out.shape() != in.v.shape()) {
    throw DimensionError("implicit_attention: layer output " + shape_string(out.shape()) +
                         " must match values " + shape_string(in.v.shape()));
  }
  std::vector<double> scores(n * n, 0.0);
  std::vector<double> seed(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      seed[i * d + c] = 1.0;
      const Tensor g = tape.grad(out, Tensor::from(out.shape(), seed), {probe.v}).front();
      seed[i * d + c] = 0.0;
      for (std::size_t j = 0; j < n; ++j) scores[i * n + j] += g(j, c);
    }
  }
  for (auto& s : scores) {
    s /= static_cast<double>(d);
    if (!std::isfinite(s)) throw DivergenceError("implicit_attention: non-finite Jacobian entry");
  }
  return {Tensor::from({n, n}, std::move(scores)), "trace_over_d"};
}

double locality_index(const Tensor& scores, TokenGrid grid, std::size_t window) {
  const std::size_t n = grid.tokens();
  if (!scores.defined() || scores.shape() != Shape{n, n}) {
    throw DimensionError("locality_index: scores must be [N x N] for the grid");
  }
  const auto mask = neighborhood_mask(grid, window);
  double inside = 0.0, total = 0.0;
  auto s = scores.data();
  for (std::size_t i = 0; i < n * n; ++i) {
    const double a = std::abs(s[i]);
    total += a;
    if ((*mask)[i]) inside += a;
  }
  return total > 0.0 ? inside / total : 0.0;
}

}  // namespace ttc
