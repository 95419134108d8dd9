// SPDX-License-Identifier: Apache-2.0
#include "ttc/cost.hpp"

#include <algorithm>
#include <cmath>

#include "ttc/error.hpp"

namespace ttc {

double ttt_mac_units(InnerVariant variant) {
  switch (variant) {
    case InnerVariant::linear: return 3.0;
    case InnerVariant::one_layer_gate: return 6.0;
    case InnerVariant::two_layer: return 7.0;
    case InnerVariant::three_layer: return 11.0;
    case InnerVariant::swiglu: return 10.0;
  }
  throw ConfigError("unsupported inner variant");
}

double mixer_flops(const ModelConfig& cfg, const ArchSpec& arch, std::size_t tokens) {
  cfg.validate();
  arch.validate();
  const double n = static_cast<double>(tokens);
  const double d = static_cast<double>(cfg.dim);
  const double dh = static_cast<double>(cfg.head_dim());
  double f = 0.0;
  switch (arch.mixer) {
    case MixerKind::softmax: f += 2.0 * n * n * d; break;
    case MixerKind::linear: f += 2.0 * n * d * dh + 2.0 * n * d; break;
    case MixerKind::linear_projqk: f += 4.0 * n * d * dh + 2.0 * n * d; break;
    case MixerKind::ttt: f += ttt_mac_units(arch.variant) * n * d * dh; break;
  }
  if (arch.locality.blend_nat) {
    const std::size_t side = static_cast<std::size_t>(std::llround(std::sqrt(n)));
    const double w = static_cast<double>(std::min(*arch.locality.blend_nat, side));
    f += 2.0 * w * w * n * d;
  }
  const double k2 = static_cast<double>(arch.locality.kernel_size * arch.locality.kernel_size);
  switch (arch.locality.mode) {
    case LocalityMode::dwc_qk: f += 2.0 * k2 * n * d; break;
    case LocalityMode::cpe_x:
    case LocalityMode::dwc_v: f += k2 * n * d; break;
    case LocalityMode::none: break;
  }
  return f;
}

double block_flops(const ModelConfig& cfg, const ArchSpec& arch, std::size_t tokens) {
  const double n = static_cast<double>(tokens);
  const double d = static_cast<double>(cfg.dim);
  const double proj = 4.0 * n * d * d;
  const double mlp = 2.0 * static_cast<double>(cfg.mlp_ratio) * n * d * d;
  return proj + mlp + mixer_flops(cfg, arch, tokens);
}

CostReport flops_model(const ModelConfig& cfg_in, const ArchSpec& arch, std::size_t resolution) {
  ModelConfig cfg = cfg_in;
  if (resolution != 0) cfg.image_size = resolution;
  cfg.validate();
  const std::size_t n = cfg.tokens();
  const double d = static_cast<double>(cfg.dim);
  const double patch_in = static_cast<double>(cfg.channels * cfg.patch * cfg.patch);
  CostReport r;
  r.arch = arch.label();
  r.resolution = cfg.image_size;
  r.tokens = n;
  r.flops = static_cast<double>(n) * patch_in * d +
            static_cast<double>(cfg.depth) * block_flops(cfg, arch, n) +
            d * static_cast<double>(cfg.classes);
  r.params = baseline_param_count(cfg) + added_param_count(cfg, arch);
  return r;
}

}  // namespace ttc
